"""Platform connector abstraction: fetch requests, pages, and rate limiting.

Connectors return full raw payload bytes per post and stamp every page with
a collection timestamp of their own, never one taken from the payload. The
only shipped implementations talk to the deterministic mock platform servers
(in-process or over HTTP); live-platform connectors are an extension point.
"""

from __future__ import annotations

import base64
import json
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Protocol

from .errors import NotFoundError, RetryableError, ThrottledError
from .platforms import Platform
from .util import ensure_utc, format_rfc3339, parse_rfc3339, utcnow


@dataclass(frozen=True)
class FetchRequest:
    platform: Platform
    handle: str
    start: datetime
    end: datetime
    cursor: str | None = None
    page_size: int = 100

    def __post_init__(self) -> None:
        if ensure_utc(self.start) >= ensure_utc(self.end):
            raise ValueError("window start must be before end")
        if self.page_size < 1:
            raise ValueError("page_size must be >= 1")


@dataclass
class FetchPage:
    payloads: list[bytes]
    next_cursor: str | None
    collected_at: datetime


@dataclass(frozen=True)
class PlatformSchemaProfile:
    """Where a platform's raw documents keep the fields the pipeline needs."""

    platform: Platform
    text_fields: tuple[str, ...]
    id_field: str
    published_at_field: str
    published_at_format: str
    engagement_fields: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.text_fields:
            raise ValueError("text_fields must be non-empty")
        if not self.id_field or not self.published_at_field:
            raise ValueError("id_field and published_at_field are required")


class Connector(Protocol):
    def fetch(self, req: FetchRequest) -> FetchPage: ...


# -- cursors ------------------------------------------------------------------

def encode_cursor(native_id: str, published_at: datetime) -> str:
    """Opaque resume token; consumers must not parse it."""
    doc = {"id": native_id, "ts": format_rfc3339(published_at)}
    return base64.urlsafe_b64encode(json.dumps(doc).encode("utf-8")).decode("ascii")


def decode_cursor(cursor: str) -> tuple[str, datetime]:
    try:
        doc = json.loads(base64.urlsafe_b64decode(cursor.encode("ascii")))
        return str(doc["id"]), parse_rfc3339(doc["ts"])
    except (ValueError, KeyError) as exc:
        raise ValueError(f"malformed cursor: {exc}") from None


# -- throttling ---------------------------------------------------------------

@dataclass(frozen=True)
class ThrottlePolicy:
    max_requests_per_minute: float = 60.0
    backoff_initial: float = 1.0
    backoff_factor: float = 2.0
    backoff_cap: float = 60.0

    def __post_init__(self) -> None:
        if self.max_requests_per_minute <= 0:
            raise ValueError("rate must be positive")

    def backoff_delay(self, attempt: int) -> float:
        """Delay before retry number `attempt` (1-based): 1s, 2s, 4s, ... capped."""
        return min(self.backoff_initial * self.backoff_factor ** (attempt - 1), self.backoff_cap)


class TokenBucket:
    """Thread-safe token bucket; refills continuously at the configured rate."""

    def __init__(
        self,
        rate_per_minute: float,
        capacity: float | None = None,
        clock: Callable[[], float] = time.monotonic,
    ):
        if rate_per_minute <= 0:
            raise ValueError("rate must be positive")
        self._rate = rate_per_minute / 60.0  # tokens per second
        self._capacity = capacity if capacity is not None else max(1.0, rate_per_minute / 60.0)
        self._tokens = self._capacity
        self._clock = clock
        self._last = clock()
        self._lock = threading.Lock()

    def try_acquire(self) -> float:
        """Take one token; returns 0.0 on success, else seconds until one frees up."""
        with self._lock:
            now = self._clock()
            self._tokens = min(self._capacity, self._tokens + (now - self._last) * self._rate)
            self._last = now
            if self._tokens >= 1.0:
                self._tokens -= 1.0
                return 0.0
            return (1.0 - self._tokens) / self._rate


# -- mock-backed connectors ----------------------------------------------------

class MockConnector:
    """Connector over in-process mock platform servers.

    `servers` maps platform -> MockPlatformServer. A per-platform token
    bucket, when provided, enforces the throttle policy; an exhausted bucket
    surfaces as ThrottledError with a retry-after hint.
    """

    def __init__(
        self,
        servers: dict[Platform, object],
        buckets: dict[Platform, TokenBucket] | None = None,
        clock: Callable[[], datetime] = utcnow,
    ):
        self._servers = servers
        self._buckets = buckets or {}
        self._clock = clock

    def fetch(self, req: FetchRequest) -> FetchPage:
        server = self._servers.get(req.platform)
        if server is None:
            raise NotFoundError(f"no server for platform {req.platform}")
        bucket = self._buckets.get(req.platform)
        if bucket is not None:
            wait = bucket.try_acquire()
            if wait > 0:
                raise ThrottledError(wait)
        payloads, next_cursor = server.query_bytes(
            req.handle, req.start, req.end, req.cursor, req.page_size
        )
        return FetchPage(payloads=payloads, next_cursor=next_cursor, collected_at=self._clock())


class HttpConnector:
    """Connector speaking the mock servers' HTTP wire format.

    GET {base}/{platform}/accounts/{handle}/posts?start=&end=&cursor=&limit=
    Payload bytes are the canonical serialization of each returned item, the
    same form the servers hash, so bytes survive the HTTP hop unchanged.
    """

    def __init__(
        self,
        base_url: str,
        buckets: dict[Platform, TokenBucket] | None = None,
        clock: Callable[[], datetime] = utcnow,
        timeout: float = 10.0,
    ):
        self._base = base_url.rstrip("/")
        self._buckets = buckets or {}
        self._clock = clock
        self._timeout = timeout

    def fetch(self, req: FetchRequest) -> FetchPage:
        bucket = self._buckets.get(req.platform)
        if bucket is not None:
            wait = bucket.try_acquire()
            if wait > 0:
                raise ThrottledError(wait)
        params = {
            "start": format_rfc3339(req.start),
            "end": format_rfc3339(req.end),
            "limit": str(req.page_size),
        }
        if req.cursor:
            params["cursor"] = req.cursor
        url = (
            f"{self._base}/{req.platform.value}/accounts/"
            f"{urllib.parse.quote(req.handle)}/posts?{urllib.parse.urlencode(params)}"
        )
        try:
            with urllib.request.urlopen(url, timeout=self._timeout) as resp:
                body = json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            if exc.code == 404:
                raise NotFoundError(f"unknown handle {req.handle!r} on {req.platform}") from None
            if exc.code == 429:
                retry_after = float(exc.headers.get("Retry-After", "1"))
                raise ThrottledError(retry_after) from None
            raise RetryableError(f"server error {exc.code}") from None
        except urllib.error.URLError as exc:
            raise RetryableError(str(exc)) from None

        from .util import canonical_json_bytes

        payloads = [canonical_json_bytes(item) for item in body["items"]]
        return FetchPage(
            payloads=payloads,
            next_cursor=body.get("next_cursor"),
            collected_at=self._clock(),
        )
