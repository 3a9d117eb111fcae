"""Deterministic mock platform servers.

Each platform gets a generator that emits raw documents in that platform's
native shape (tiktok keeps all text in a single "desc" field, youtube splits
"title"/"description", x_twitter carries text under "message", ...). Given
the same seed, generation is byte-identical across runs and processes, which
makes every downstream fixture reproducible.

Servers answer windowed, cursor-paginated, reverse-chronological queries
either in-process or over HTTP (see `serve_http`).
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Iterable
from urllib.parse import parse_qs, unquote, urlparse

from .connectors import decode_cursor, encode_cursor
from .errors import NotFoundError
from .platforms import Platform
from .util import canonical_json_bytes, ensure_utc, format_rfc3339, parse_rfc3339, stable_hash64

DEFAULT_WINDOW = (
    datetime(2024, 1, 1, tzinfo=timezone.utc),
    datetime(2024, 3, 1, tzinfo=timezone.utc),
)

_EN_WORDS = [
    "election", "budget", "debate", "policy", "carbon", "housing", "health",
    "border", "economy", "minister", "parliament", "vote", "campaign", "media",
    "report", "poll", "riding", "senate", "tax", "pipeline", "climate",
    "inflation", "jobs", "trade", "speech", "bill", "committee", "premier",
    "council", "funding", "school", "hospital", "transit", "energy", "farm",
]

_FR_WORDS = [
    "élection", "fédérale", "économie", "santé", "débat", "budget", "climat",
    "ministre", "député", "assemblée", "québec", "français", "politique",
    "gouvernement", "projet", "loi", "conseil", "région", "municipalité",
    "éducation", "immigration", "environnement", "énergie", "travail",
]

_WORDS = _EN_WORDS + _FR_WORDS


def _sentence(rng: random.Random, mention_pool: list[str]) -> str:
    n = rng.randint(5, 14)
    words = [rng.choice(_WORDS) for _ in range(n)]
    if mention_pool and rng.random() < 0.25:
        words.append("@" + rng.choice(mention_pool))
    return " ".join(words)


def _iso(ts: datetime) -> str:
    return format_rfc3339(ts)


def _doc_tiktok(native_id, handle, ts, text, rng, media):
    return {
        "id": native_id,
        "desc": text,
        "createTime": int(ts.timestamp()),
        "author": {"uniqueId": handle},
        "stats": {
            "diggCount": rng.randrange(0, 5000),
            "shareCount": rng.randrange(0, 800),
            "commentCount": rng.randrange(0, 400),
            "playCount": rng.randrange(100, 200_000),
        },
        "video": {"downloadAddr": media},
    }


def _doc_youtube(native_id, handle, ts, text, rng, media):
    title, _, description = text.partition(" ")
    return {
        "id": native_id,
        "snippet": {
            "title": title or "untitled",
            "description": description,
            "publishedAt": _iso(ts),
            "channelTitle": handle,
            "thumbnails": {"high": {"url": media}},
        },
        # YouTube reports counts as strings; normalization must cope
        "statistics": {
            "viewCount": str(rng.randrange(50, 500_000)),
            "likeCount": str(rng.randrange(0, 20_000)),
            "commentCount": str(rng.randrange(0, 2_000)),
        },
    }


def _doc_x_twitter(native_id, handle, ts, text, rng, media):
    return {
        "id": native_id,
        "message": text,
        "created_at": _iso(ts),
        "user": {"screen_name": handle},
        "favorite_count": rng.randrange(0, 10_000),
        "retweet_count": rng.randrange(0, 3_000),
        "reply_count": rng.randrange(0, 1_000),
        "view_count": rng.randrange(100, 1_000_000),
        "entities": {"media": [{"media_url": media}] if rng.random() < 0.3 else []},
    }


def _doc_instagram(native_id, handle, ts, text, rng, media):
    return {
        "id": native_id,
        "caption_text": text,
        "taken_at": int(ts.timestamp()),
        "username": handle,
        "like_count": rng.randrange(0, 30_000),
        "comment_count": rng.randrange(0, 2_000),
        "media_url": media,
    }


def _doc_facebook(native_id, handle, ts, text, rng, media):
    return {
        "platformId": native_id,
        "message": text,
        "date": ts.strftime("%Y-%m-%d %H:%M:%S"),
        "account": {"handle": handle},
        "statistics": {
            "actual": {
                "likeCount": rng.randrange(0, 20_000),
                "shareCount": rng.randrange(0, 5_000),
                "commentCount": rng.randrange(0, 3_000),
            }
        },
        "media": [{"url": media}],
    }


def _doc_telegram(native_id, handle, ts, text, rng, media):
    return {
        "id": native_id,
        "message": text,
        "date": int(ts.timestamp()),
        "channel": handle,
        "views": rng.randrange(0, 100_000),
        "forwards": rng.randrange(0, 5_000),
    }


def _doc_bluesky(native_id, handle, ts, text, rng, media):
    return {
        "cid": native_id,
        "uri": f"at://{handle}/app.bsky.feed.post/{native_id}",
        "record": {"text": text, "createdAt": _iso(ts)},
        "author": {"handle": handle},
        "likeCount": rng.randrange(0, 8_000),
        "repostCount": rng.randrange(0, 2_000),
        "replyCount": rng.randrange(0, 800),
    }


_DOC_BUILDERS = {
    Platform.TIKTOK: _doc_tiktok,
    Platform.YOUTUBE: _doc_youtube,
    Platform.X_TWITTER: _doc_x_twitter,
    Platform.INSTAGRAM: _doc_instagram,
    Platform.FACEBOOK: _doc_facebook,
    Platform.TELEGRAM: _doc_telegram,
    Platform.BLUESKY: _doc_bluesky,
}


def generate_datasets(
    platform: Platform,
    seed_handles: Iterable[str],
    post_count: int | dict[str, int],
    rng_seed: int,
    window: tuple[datetime, datetime] = DEFAULT_WINDOW,
    empty_text_rate: float = 0.02,
) -> dict[str, list[dict]]:
    """Generate raw documents per handle, deterministically.

    `post_count` is either one count for every handle or a per-handle map.
    Each handle draws from its own RNG stream derived from (rng_seed,
    platform, handle), so adding a handle never perturbs the others; mentions
    reference other handles passed in the same call.
    """
    builder = _DOC_BUILDERS.get(platform)
    if builder is None:
        raise ValueError(f"unsupported platform: {platform}")
    start, end = ensure_utc(window[0]), ensure_utc(window[1])
    span = (end - start).total_seconds()
    if span <= 0:
        raise ValueError("window start must be before end")

    handles = list(seed_handles)
    counts = post_count if isinstance(post_count, dict) else {h: post_count for h in handles}
    if any(c < 0 for c in counts.values()):
        raise ValueError("post_count must be >= 0")
    datasets: dict[str, list[dict]] = {}
    for handle in handles:
        rng = random.Random(stable_hash64(f"{rng_seed}:{platform.value}:{handle}"))
        mention_pool = [h for h in handles if h != handle]
        offsets = sorted(rng.random() * span for _ in range(counts.get(handle, 0)))
        docs = []
        for seq, offset in enumerate(offsets):
            ts = start + timedelta(seconds=int(offset))
            native_id = f"{platform.value}-{handle}-{seq:05d}"
            text = "" if rng.random() < empty_text_rate else _sentence(rng, mention_pool)
            media = f"https://cdn.example/{platform.value}/{handle}/{seq}.bin"
            docs.append(builder(native_id, handle, ts, text, rng, media))
        datasets[handle] = docs
    return datasets


@dataclass(frozen=True)
class _PostRec:
    native_id: str
    published_at: datetime
    payload: bytes
    doc: dict


def _published_at_of(platform: Platform, doc: dict) -> datetime:
    if platform is Platform.TIKTOK:
        return datetime.fromtimestamp(int(doc["createTime"]), tz=timezone.utc)
    if platform is Platform.YOUTUBE:
        return parse_rfc3339(doc["snippet"]["publishedAt"])
    if platform is Platform.X_TWITTER:
        return parse_rfc3339(doc["created_at"])
    if platform is Platform.INSTAGRAM:
        return datetime.fromtimestamp(int(doc["taken_at"]), tz=timezone.utc)
    if platform is Platform.FACEBOOK:
        return datetime.strptime(doc["date"], "%Y-%m-%d %H:%M:%S").replace(tzinfo=timezone.utc)
    if platform is Platform.TELEGRAM:
        return datetime.fromtimestamp(int(doc["date"]), tz=timezone.utc)
    if platform is Platform.BLUESKY:
        return parse_rfc3339(doc["record"]["createdAt"])
    raise ValueError(f"unsupported platform: {platform}")


def _native_id_of(platform: Platform, doc: dict) -> str:
    if platform is Platform.FACEBOOK:
        return str(doc["platformId"])
    if platform is Platform.BLUESKY:
        return str(doc["cid"])
    return str(doc["id"])


class MockPlatformServer:
    """Windowed, paginated query surface over a fixed per-handle dataset.

    Immutable after construction, so concurrent queries need no locking.
    Fault injection (`fail_next`) and a request counter support connector
    retry tests.
    """

    def __init__(self, platform: Platform, datasets: dict[str, list[dict]]):
        records = {
            handle: [
                (_native_id_of(platform, doc), _published_at_of(platform, doc), doc)
                for doc in docs
            ]
            for handle, docs in datasets.items()
        }
        self._init_from_records(platform, records)

    @classmethod
    def from_records(
        cls,
        platform: Platform,
        records: dict[str, list[tuple[str, datetime, dict]]],
    ) -> "MockPlatformServer":
        """Build from explicit (native_id, published_at, doc) tuples.

        Lets fixtures serve documents whose own timestamp or id fields are
        deliberately corrupted, since ordering metadata is supplied here.
        """
        server = cls.__new__(cls)
        server._init_from_records(platform, records)
        return server

    def _init_from_records(
        self,
        platform: Platform,
        records: dict[str, list[tuple[str, datetime, dict]]],
    ) -> None:
        self.platform = platform
        self._posts = {}
        for handle, recs in records.items():
            posts = [
                _PostRec(
                    native_id=native_id,
                    published_at=ensure_utc(published_at),
                    payload=canonical_json_bytes(doc),
                    doc=doc,
                )
                for native_id, published_at, doc in recs
            ]
            # reverse chronological; id descending breaks timestamp ties
            posts.sort(key=lambda r: (r.published_at, r.native_id), reverse=True)
            self._posts[handle] = posts
        self.request_count = 0
        self._fail_budget = 0
        self._lock = threading.Lock()

    def handles(self) -> list[str]:
        return sorted(self._posts)

    def post_count(self, handle: str) -> int:
        return len(self._posts.get(handle, []))

    def fail_next(self, n: int) -> None:
        """Make the next `n` queries raise a transient server error."""
        with self._lock:
            self._fail_budget = n

    def query(
        self,
        handle: str,
        start: datetime,
        end: datetime,
        cursor: str | None = None,
        limit: int = 100,
    ) -> tuple[list[dict], str | None]:
        recs, next_cursor = self._query_recs(handle, start, end, cursor, limit)
        return [r.doc for r in recs], next_cursor

    def query_bytes(
        self,
        handle: str,
        start: datetime,
        end: datetime,
        cursor: str | None = None,
        limit: int = 100,
    ) -> tuple[list[bytes], str | None]:
        recs, next_cursor = self._query_recs(handle, start, end, cursor, limit)
        return [r.payload for r in recs], next_cursor

    def _query_recs(self, handle, start, end, cursor, limit):
        with self._lock:
            self.request_count += 1
            if self._fail_budget > 0:
                self._fail_budget -= 1
                raise ConnectionError("injected transient failure")
        if handle not in self._posts:
            raise NotFoundError(f"unknown handle {handle!r} on {self.platform}")
        if limit < 1:
            raise ValueError("limit must be >= 1")
        start, end = ensure_utc(start), ensure_utc(end)

        window = [r for r in self._posts[handle] if start <= r.published_at < end]
        if cursor:
            cur_id, cur_ts = decode_cursor(cursor)
            window = [
                r for r in window
                if (r.published_at, r.native_id) < (cur_ts, cur_id)
            ]
        page = window[:limit]
        if len(window) > limit and page:
            last = page[-1]
            return page, encode_cursor(last.native_id, last.published_at)
        return page, None


# -- fixture persistence -------------------------------------------------------

def save_dataset(root: Path, platform: Platform, datasets: dict[str, list[dict]]) -> None:
    """Persist fixtures as newline-delimited JSON, one file per (platform, handle)."""
    base = Path(root) / platform.value
    base.mkdir(parents=True, exist_ok=True)
    for handle, docs in sorted(datasets.items()):
        lines = b"\n".join(canonical_json_bytes(d) for d in docs)
        (base / f"{handle}.ndjson").write_bytes(lines + b"\n" if lines else b"")


def load_dataset(root: Path, platform: Platform) -> dict[str, list[dict]]:
    base = Path(root) / platform.value
    datasets: dict[str, list[dict]] = {}
    if not base.is_dir():
        return datasets
    for path in sorted(base.glob("*.ndjson")):
        docs = [json.loads(line) for line in path.read_bytes().splitlines() if line.strip()]
        datasets[path.stem] = docs
    return datasets


# -- HTTP surface ---------------------------------------------------------------

class _MockHttpHandler(BaseHTTPRequestHandler):
    servers: dict[Platform, MockPlatformServer] = {}

    def log_message(self, *args) -> None:  # silence request logging in tests
        pass

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        parsed = urlparse(self.path)
        parts = [p for p in parsed.path.split("/") if p]
        # /{platform}/accounts/{handle}/posts
        if len(parts) != 4 or parts[1] != "accounts" or parts[3] != "posts":
            self._send(404, {"error": "not found"})
            return
        try:
            platform = Platform(parts[0])
        except ValueError:
            self._send(404, {"error": f"unknown platform {parts[0]!r}"})
            return
        server = self.servers.get(platform)
        if server is None:
            self._send(404, {"error": f"no dataset for platform {parts[0]!r}"})
            return
        qs = parse_qs(parsed.query)
        try:
            start = parse_rfc3339(qs["start"][0])
            end = parse_rfc3339(qs["end"][0])
            limit = int(qs.get("limit", ["100"])[0])
            cursor = qs.get("cursor", [None])[0]
        except (KeyError, ValueError) as exc:
            self._send(400, {"error": f"bad query parameters: {exc}"})
            return
        try:
            items, next_cursor = server.query(unquote(parts[2]), start, end, cursor, limit)
        except NotFoundError as exc:
            self._send(404, {"error": str(exc)})
            return
        except ConnectionError as exc:
            self._send(500, {"error": str(exc)})
            return
        except ValueError as exc:
            self._send(400, {"error": str(exc)})
            return
        self._send(200, {"items": items, "next_cursor": next_cursor})

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        if status == 429:
            self.send_header("Retry-After", "1")
        self.end_headers()
        self.wfile.write(data)


class MockHttpService:
    """Loopback HTTP frontend over a set of mock platform servers."""

    def __init__(self, servers: dict[Platform, MockPlatformServer], host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_MockHttpHandler,), {"servers": servers})
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "MockHttpService":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)
