"""Normalization: raw platform payloads -> unified cross-platform posts.

Each platform ships a declarative mapping rule (YAML) naming the raw paths
for the native id, text fields, publication timestamp, engagement metrics,
and media links. Multi-field text joins with a single newline, preserving
field boundaries. Seed metadata is denormalized into each post at
normalization time (snapshot semantics): later registry edits do not rewrite
history unless a renormalize pass is run.

Failures never drop data: records that cannot normalize are quarantined with
a reason, so raw counts always reconcile against unified + quarantined.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator

import yaml

from .errors import NormalizationError
from .platforms import MainType, Platform
from .rawstore import RawObject, RawStore
from .seeds import SeedEntity, SeedRegistry
from .util import ensure_utc, format_rfc3339, parse_rfc3339, utcnow

ENGAGEMENT_KEYS = ("likes", "shares", "comments", "views")

_RULES_DIR = Path(__file__).parent / "rules"


def extract_path(doc, path: str):
    """Resolve a dotted path; a `[*]` segment fans out over list elements.

    Returns None for missing segments; fan-out paths return a list of the
    values found (possibly empty).
    """
    if "[*]" in path:
        head, _, tail = path.partition("[*]")
        base = extract_path(doc, head.rstrip("."))
        if not isinstance(base, list):
            return []
        tail = tail.lstrip(".")
        out = []
        for item in base:
            value = extract_path(item, tail) if tail else item
            if value is not None:
                out.append(value)
        return out
    current = doc
    for part in path.split("."):
        if not isinstance(current, dict) or part not in current:
            return None
        current = current[part]
    return current


def parse_timestamp(value, fmt: str) -> datetime:
    try:
        if fmt == "epoch_s":
            return datetime.fromtimestamp(int(value), tz=timezone.utc)
        if fmt == "iso8601":
            return parse_rfc3339(str(value))
        if fmt == "space_datetime":
            return datetime.strptime(str(value), "%Y-%m-%d %H:%M:%S").replace(tzinfo=timezone.utc)
    except (ValueError, TypeError, OSError, OverflowError):
        raise NormalizationError("bad timestamp") from None
    raise NormalizationError(f"unknown timestamp format {fmt!r}")


@dataclass(frozen=True)
class MappingRule:
    platform: Platform
    schema_version: int
    id_path: str
    text_paths: tuple[str, ...]
    published_at_path: str
    published_at_format: str
    engagement_paths: dict[str, str]  # only the metrics this platform exposes
    media_link_paths: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.text_paths:
            raise ValueError("rule must declare at least one text field")
        if not self.id_path or not self.published_at_path:
            raise ValueError("rule must declare id and published_at paths")
        unknown = set(self.engagement_paths) - set(ENGAGEMENT_KEYS)
        if unknown:
            raise ValueError(f"unknown engagement metrics in rule: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, raw: dict) -> "MappingRule":
        return cls(
            platform=Platform(raw["platform"]),
            schema_version=int(raw["schema_version"]),
            id_path=str(raw["id"]),
            text_paths=tuple(raw["text"]),
            published_at_path=str(raw["published_at"]["path"]),
            published_at_format=str(raw["published_at"]["format"]),
            engagement_paths={k: str(v) for k, v in (raw.get("engagement") or {}).items()},
            media_link_paths=tuple(raw.get("media_links") or ()),
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "MappingRule":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))


def load_default_rules() -> dict[Platform, MappingRule]:
    rules = {}
    for path in sorted(_RULES_DIR.glob("*.yaml")):
        rule = MappingRule.from_yaml(path)
        rules[rule.platform] = rule
    return rules


def schema_profile(rule: MappingRule):
    """View a mapping rule as the raw-document schema profile it implies."""
    from .connectors import PlatformSchemaProfile

    return PlatformSchemaProfile(
        platform=rule.platform,
        text_fields=rule.text_paths,
        id_field=rule.id_path,
        published_at_field=rule.published_at_path,
        published_at_format=rule.published_at_format,
        engagement_fields=dict(rule.engagement_paths),
    )


@dataclass(frozen=True)
class SeedMeta:
    main_type: MainType
    sub_type: str | None
    federal_party: str | None
    province: str | None
    collection_tags: tuple[str, ...]

    @classmethod
    def from_entity(cls, entity: SeedEntity) -> "SeedMeta":
        return cls(
            main_type=entity.main_type,
            sub_type=entity.sub_type,
            federal_party=entity.federal_party,
            province=entity.province,
            collection_tags=tuple(sorted(entity.collection_tags)),
        )


@dataclass
class UnifiedPost:
    post_id: str
    platform: Platform
    seed_id: str
    text: str
    published_at: datetime
    collected_at: datetime
    engagement: dict[str, int | None]  # absent metric (None) != observed zero
    media_links: list[str]
    seed_meta: SeedMeta
    raw_ref: str
    schema_version: int

    def to_doc(self) -> dict:
        """JSON-able record with deterministic key order."""
        return {
            "post_id": self.post_id,
            "platform": self.platform.value,
            "seed_id": self.seed_id,
            "text": self.text,
            "published_at": format_rfc3339(self.published_at),
            "collected_at": format_rfc3339(self.collected_at),
            "engagement": {k: self.engagement.get(k) for k in ENGAGEMENT_KEYS},
            "media_links": list(self.media_links),
            "seed_meta": {
                "main_type": self.seed_meta.main_type.value,
                "sub_type": self.seed_meta.sub_type,
                "federal_party": self.seed_meta.federal_party,
                "province": self.seed_meta.province,
                "collection_tags": list(self.seed_meta.collection_tags),
            },
            "raw_ref": self.raw_ref,
            "schema_version": self.schema_version,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "UnifiedPost":
        meta = doc["seed_meta"]
        return cls(
            post_id=doc["post_id"],
            platform=Platform(doc["platform"]),
            seed_id=doc["seed_id"],
            text=doc["text"],
            published_at=parse_rfc3339(doc["published_at"]),
            collected_at=parse_rfc3339(doc["collected_at"]),
            engagement=dict(doc["engagement"]),
            media_links=list(doc["media_links"]),
            seed_meta=SeedMeta(
                main_type=MainType(meta["main_type"]),
                sub_type=meta["sub_type"],
                federal_party=meta["federal_party"],
                province=meta["province"],
                collection_tags=tuple(meta["collection_tags"]),
            ),
            raw_ref=doc["raw_ref"],
            schema_version=doc["schema_version"],
        )

    @property
    def collection_lag(self):
        return self.collected_at - self.published_at


def _coerce_count(value) -> int | None:
    if value is None:
        return None
    try:
        n = int(str(value))
    except (TypeError, ValueError):
        return None
    return n if n >= 0 else None


def normalize_raw(raw: RawObject, rule: MappingRule, seed: SeedEntity) -> UnifiedPost:
    """Pure transformation of one raw object; raises NormalizationError."""
    try:
        doc = json.loads(raw.payload)
    except (ValueError, UnicodeDecodeError):
        raise NormalizationError("unparseable payload") from None
    if not isinstance(doc, dict):
        raise NormalizationError("payload is not a JSON object")

    native_id = extract_path(doc, rule.id_path)
    if native_id is None or str(native_id) == "":
        raise NormalizationError("missing id")

    ts_value = extract_path(doc, rule.published_at_path)
    if ts_value is None:
        raise NormalizationError("bad timestamp")
    published_at = parse_timestamp(ts_value, rule.published_at_format)

    collected_at = ensure_utc(raw.collected_at)
    if collected_at < published_at:
        raise NormalizationError("negative collection lag")

    pieces = []
    for path in rule.text_paths:
        value = extract_path(doc, path)
        if value is not None and not isinstance(value, (dict, list)):
            pieces.append(str(value))
    text = "\n".join(pieces)

    engagement: dict[str, int | None] = {}
    for key in ENGAGEMENT_KEYS:
        path = rule.engagement_paths.get(key)
        engagement[key] = _coerce_count(extract_path(doc, path)) if path else None

    media_links: list[str] = []
    for path in rule.media_link_paths:
        value = extract_path(doc, path)
        if value is None:
            continue
        values = value if isinstance(value, list) else [value]
        media_links.extend(str(v) for v in values if v is not None)

    return UnifiedPost(
        post_id=f"{raw.platform.value}:{native_id}",
        platform=raw.platform,
        seed_id=seed.id,
        text=text,
        published_at=published_at,
        collected_at=collected_at,
        engagement=engagement,
        media_links=media_links,
        seed_meta=SeedMeta.from_entity(seed),
        raw_ref=raw.object_id,
        schema_version=rule.schema_version,
    )


@dataclass
class QuarantineEntry:
    raw_ref: str
    reason: str
    first_seen: datetime


class Normalizer:
    """Stateful wrapper tying rules + registry together with a quarantine log."""

    def __init__(
        self,
        rules: dict[Platform, MappingRule] | None = None,
        registry: SeedRegistry | None = None,
        clock: Callable[[], datetime] = utcnow,
    ):
        self.rules = rules if rules is not None else load_default_rules()
        self.registry = registry if registry is not None else SeedRegistry()
        self._clock = clock
        self._quarantine: dict[str, QuarantineEntry] = {}
        self._lock = threading.Lock()

    def normalize(self, raw: RawObject) -> UnifiedPost:
        """Normalize or raise; does not touch the quarantine log."""
        rule = self.rules.get(raw.platform)
        if rule is None:
            raise NormalizationError(f"no mapping rule for platform {raw.platform}")
        seed = self.registry.find_by_handle(raw.platform, raw.handle)
        if seed is None:
            raise NormalizationError("unknown seed")
        return normalize_raw(raw, rule, seed)

    def process(self, raw: RawObject) -> UnifiedPost | None:
        """Normalize with quarantine-not-drop semantics; None means quarantined."""
        try:
            post = self.normalize(raw)
        except NormalizationError as exc:
            with self._lock:
                prior = self._quarantine.get(raw.object_id)
                first_seen = prior.first_seen if prior else self._clock()
                self._quarantine[raw.object_id] = QuarantineEntry(
                    raw_ref=raw.object_id, reason=exc.reason, first_seen=first_seen
                )
            return None
        with self._lock:
            self._quarantine.pop(raw.object_id, None)
        return post

    def renormalize(
        self,
        store: RawStore,
        platform: Platform | None = None,
        start_day=None,
        end_day=None,
    ) -> Iterator[UnifiedPost]:
        """Reprocess stored raw objects under the current rules and registry."""
        for raw in store.scan(platform=platform, start_day=start_day, end_day=end_day):
            post = self.process(raw)
            if post is not None:
                yield post

    def quarantine_report(self) -> list[QuarantineEntry]:
        with self._lock:
            return sorted(self._quarantine.values(), key=lambda e: (e.first_seen, e.raw_ref))

    def quarantine_count(self) -> int:
        return len(self._quarantine)

    # -- persistence -----------------------------------------------------------

    def save_quarantine(self, path: str | Path) -> None:
        entries = [
            {"raw_ref": e.raw_ref, "reason": e.reason, "first_seen": format_rfc3339(e.first_seen)}
            for e in self.quarantine_report()
        ]
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(entries, indent=1), encoding="utf-8")

    def load_quarantine(self, path: str | Path) -> None:
        path = Path(path)
        if not path.exists():
            return
        with self._lock:
            for rec in json.loads(path.read_text()):
                self._quarantine[rec["raw_ref"]] = QuarantineEntry(
                    raw_ref=rec["raw_ref"],
                    reason=rec["reason"],
                    first_seen=parse_rfc3339(rec["first_seen"]),
                )
