"""Seed registry: the curated list of tracked actors and their platform handles.

The registry is loaded from a CSV file with one row per (entity, platform)
handle; entity-level attributes are repeated on every row for that entity.
Exports reproduce the same format byte-for-byte, so export/import round-trips
are stable.
"""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Iterable, Iterator

import yaml

from .errors import EligibilityRuleError, NotFoundError, ObservatoryError
from .platforms import MainType, Platform, parse_main_type, parse_platform
from .util import ensure_utc, utcnow

CSV_COLUMNS = [
    "id", "name", "main_type", "sub_type", "federal_party", "provincial_party",
    "province", "riding", "country", "platform", "handle", "verified",
    "followers", "following", "collection_tags",
]

NEWS_SUB_TYPES = {"national", "local"}

# follower floors per platform; telegram intentionally absent
FOLLOWER_THRESHOLDS = {
    Platform.X_TWITTER: 10_000,
    Platform.TIKTOK: 10_000,
    Platform.FACEBOOK: 5_000,
    Platform.INSTAGRAM: 5_000,
    Platform.YOUTUBE: 5_000,
    Platform.BLUESKY: 5_000,
}

ACTIVITY_WINDOW = timedelta(days=365)

_PARTY_MAP_PATH = Path(__file__).parent / "data" / "party_map.yaml"
_party_map_cache: dict[str, str] | None = None


def load_party_map() -> dict[str, str]:
    """Provincial party -> federal counterpart lookup, shipped as data."""
    global _party_map_cache
    if _party_map_cache is None:
        with open(_PARTY_MAP_PATH, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        _party_map_cache = {str(k): str(v) for k, v in raw.items()}
    return _party_map_cache


def map_provincial_party(provincial_party: str) -> str:
    """Map a provincial party to its federal counterpart; unknown -> unaffiliated."""
    return load_party_map().get(provincial_party, "unaffiliated")


@dataclass
class PlatformHandle:
    platform: Platform
    handle: str
    verified: bool = False
    followers: int | None = None
    following: int | None = None

    def __post_init__(self) -> None:
        if not self.handle:
            raise ValueError("handle must be non-empty")
        for label, value in (("followers", self.followers), ("following", self.following)):
            if value is not None and value < 0:
                raise ValueError(f"{label} must be >= 0")


@dataclass
class SeedEntity:
    id: str
    name: str
    main_type: MainType
    sub_type: str | None = None
    federal_party: str | None = None
    provincial_party: str | None = None
    province: str | None = None
    riding: str | None = None
    country: str | None = None
    handles: dict[Platform, PlatformHandle] = field(default_factory=dict)
    collection_tags: set[str] = field(default_factory=set)
    created_at: datetime = field(default_factory=utcnow)
    last_activity_at: dict[Platform, datetime] = field(default_factory=dict)

    def attributes_key(self) -> tuple:
        """Entity-level attributes that must agree across a multi-row import."""
        return (
            self.name, self.main_type, self.sub_type, self.federal_party,
            self.provincial_party, self.province, self.riding, self.country,
            tuple(sorted(self.collection_tags)),
        )


@dataclass
class EligibilityProfile:
    platform: Platform
    followers: int
    following: int
    political_content_majority: bool


@dataclass
class EligibilityResult:
    eligible: bool
    failed_rules: list[str]


@dataclass
class LoadReport:
    accepted: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)  # (data row number, reason)


def check_influencer_eligibility(profile: EligibilityProfile) -> EligibilityResult:
    """Apply the influencer inclusion rules for one platform profile.

    Rules: platform-specific follower floor, followers >= 2 * following,
    and majority-political content. Telegram has no defined rule.
    """
    threshold = FOLLOWER_THRESHOLDS.get(profile.platform)
    if threshold is None:
        raise EligibilityRuleError(
            f"no eligibility rule defined for platform {profile.platform}"
        )
    failed: list[str] = []
    if profile.followers < threshold:
        failed.append("follower_threshold")
    if profile.followers < 2 * profile.following:
        failed.append("ratio")
    if not profile.political_content_majority:
        failed.append("political_content")
    return EligibilityResult(eligible=not failed, failed_rules=failed)


def check_activity_retention(entity: SeedEntity, now: datetime) -> bool:
    """True iff the entity posted on any platform within the last 365 days.

    The boundary is inclusive: activity exactly 365 days old still counts.
    Entities with no recorded activity fail retention.
    """
    cutoff = ensure_utc(now) - ACTIVITY_WINDOW
    return any(ensure_utc(ts) >= cutoff for ts in entity.last_activity_at.values())


def _parse_bool(token: str) -> bool:
    token = token.strip().lower()
    if token in ("true", "1", "yes"):
        return True
    if token in ("false", "0", "no", ""):
        return False
    raise ValueError(f"not a boolean: {token!r}")


def _parse_count(token: str, label: str) -> int | None:
    token = token.strip()
    if not token:
        return None
    value = int(token)
    if value < 0:
        raise ValueError(f"negative {label}")
    return value


class SeedRegistry:
    """In-memory registry of seed entities keyed by id.

    Reads are lock-free over immutable snapshots of each entity; mutations
    (import, activity updates) serialize behind a single writer lock.
    """

    def __init__(self, clock: Callable[[], datetime] = utcnow):
        self._entities: dict[str, SeedEntity] = {}
        self._by_handle: dict[tuple[Platform, str], str] = {}
        self._lock = threading.RLock()
        self._clock = clock

    def __len__(self) -> int:
        return len(self._entities)

    def __contains__(self, seed_id: str) -> bool:
        return seed_id in self._entities

    def get(self, seed_id: str) -> SeedEntity:
        try:
            return self._entities[seed_id]
        except KeyError:
            raise NotFoundError(f"no seed with id {seed_id!r}") from None

    def find_by_handle(self, platform: Platform, handle: str) -> SeedEntity | None:
        seed_id = self._by_handle.get((platform, handle))
        return self._entities.get(seed_id) if seed_id else None

    def entities(self) -> list[SeedEntity]:
        return sorted(self._entities.values(), key=lambda e: e.id)

    def handles_on(self, platform: Platform) -> list[str]:
        return sorted(
            e.handles[platform].handle for e in self._entities.values() if platform in e.handles
        )

    def record_activity(self, seed_id: str, platform: Platform, ts: datetime) -> None:
        """Advance the per-platform last-activity watermark (never backwards)."""
        ts = ensure_utc(ts)
        with self._lock:
            entity = self.get(seed_id)
            prior = entity.last_activity_at.get(platform)
            if prior is None or ts > prior:
                entity.last_activity_at[platform] = ts

    # -- import / export ---------------------------------------------------

    def import_seeds(self, source: str | Path | io.TextIOBase) -> LoadReport:
        """Load seed rows from CSV; valid rows insert, invalid rows report.

        A row is rejected (never partially inserted) when it repeats an
        (id, platform) pair, contradicts an earlier row's entity attributes,
        names an unknown platform or type, or violates the annotation rules
        (e.g. local news without a province).
        """
        if isinstance(source, (str, Path)):
            with open(source, newline="", encoding="utf-8") as fh:
                return self._import_rows(csv.reader(fh))
        return self._import_rows(csv.reader(source))

    def _import_rows(self, reader: Iterable[list[str]]) -> LoadReport:
        report = LoadReport()
        rows = iter(reader)
        header = next(rows, None)
        if header is None or [h.strip() for h in header] != CSV_COLUMNS:
            raise ObservatoryError(
                f"seed file header must be exactly: {','.join(CSV_COLUMNS)}"
            )
        with self._lock:
            for row_no, row in enumerate(rows, start=1):
                if not row or all(not cell.strip() for cell in row):
                    continue
                try:
                    self._insert_row(row)
                except _RowError as exc:
                    report.rejected.append((row_no, str(exc)))
                else:
                    report.accepted += 1
        return report

    def _insert_row(self, row: list[str]) -> None:
        if len(row) != len(CSV_COLUMNS):
            raise _RowError(f"expected {len(CSV_COLUMNS)} columns, got {len(row)}")
        rec = {col: row[i].strip() for i, col in enumerate(CSV_COLUMNS)}

        if not rec["id"]:
            raise _RowError("missing id")
        if not rec["name"]:
            raise _RowError("missing name")
        try:
            main_type = parse_main_type(rec["main_type"])
        except ValueError as exc:
            raise _RowError(str(exc)) from None
        try:
            platform = parse_platform(rec["platform"])
        except ValueError as exc:
            raise _RowError(str(exc)) from None

        sub_type = rec["sub_type"] or None
        if main_type is MainType.NEWS and sub_type is not None and sub_type not in NEWS_SUB_TYPES:
            raise _RowError(f"news sub_type must be national or local, got {sub_type!r}")
        if main_type is MainType.NEWS and sub_type == "local" and not rec["province"]:
            raise _RowError("local news requires province")

        try:
            handle = PlatformHandle(
                platform=platform,
                handle=rec["handle"],
                verified=_parse_bool(rec["verified"]),
                followers=_parse_count(rec["followers"], "followers"),
                following=_parse_count(rec["following"], "following"),
            )
        except ValueError as exc:
            raise _RowError(str(exc)) from None

        federal_party = rec["federal_party"] or None
        provincial_party = rec["provincial_party"] or None
        if provincial_party and not federal_party:
            federal_party = map_provincial_party(provincial_party)

        tags = {t.strip() for t in rec["collection_tags"].split(";") if t.strip()}
        candidate = SeedEntity(
            id=rec["id"],
            name=rec["name"],
            main_type=main_type,
            sub_type=sub_type,
            federal_party=federal_party,
            provincial_party=provincial_party,
            province=rec["province"] or None,
            riding=rec["riding"] or None,
            country=rec["country"] or None,
            collection_tags=tags,
            created_at=self._clock(),
        )

        existing = self._entities.get(candidate.id)
        if existing is not None:
            if platform in existing.handles:
                raise _RowError("duplicate id")
            if existing.attributes_key() != candidate.attributes_key():
                raise _RowError("conflicting attributes for id")
            existing.handles[platform] = handle
            self._by_handle[(platform, handle.handle)] = existing.id
        else:
            candidate.handles[platform] = handle
            self._entities[candidate.id] = candidate
            self._by_handle[(platform, handle.handle)] = candidate.id

    def export_csv(self) -> str:
        """Render the registry back to its canonical CSV form."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for entity in self.entities():
            for platform in Platform:
                if platform not in entity.handles:
                    continue
                h = entity.handles[platform]
                writer.writerow([
                    entity.id,
                    entity.name,
                    entity.main_type.value,
                    entity.sub_type or "",
                    entity.federal_party or "",
                    entity.provincial_party or "",
                    entity.province or "",
                    entity.riding or "",
                    entity.country or "",
                    platform.value,
                    h.handle,
                    "true" if h.verified else "false",
                    "" if h.followers is None else str(h.followers),
                    "" if h.following is None else str(h.following),
                    ";".join(sorted(entity.collection_tags)),
                ])
        return buf.getvalue()

    def save_csv(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.export_csv(), encoding="utf-8")

    # -- filtering ----------------------------------------------------------

    def select(
        self,
        main_type: MainType | None = None,
        province: str | None = None,
        party: str | None = None,
        platform: Platform | None = None,
    ) -> list[SeedEntity]:
        out = []
        for entity in self.entities():
            if main_type is not None and entity.main_type is not main_type:
                continue
            if province is not None and entity.province != province:
                continue
            if party is not None and entity.federal_party != party:
                continue
            if platform is not None and platform not in entity.handles:
                continue
            out.append(entity)
        return out


class _RowError(ValueError):
    """Internal: row-level rejection reason during import."""


# -- distribution report -----------------------------------------------------

TYPE_COLUMN_ORDER = [
    MainType.POLITICIAN, MainType.NEWS, MainType.INFLUENCER,
    MainType.GOVERNMENT, MainType.CSO, MainType.FOREIGN,
]

TYPE_LABELS = {
    MainType.POLITICIAN: "Politician",
    MainType.NEWS: "News",
    MainType.INFLUENCER: "Influencer",
    MainType.GOVERNMENT: "Government",
    MainType.CSO: "CSO",
    MainType.FOREIGN: "Foreign",
}


@dataclass
class DistributionReport:
    """Per-(platform, type) presence counts with type-population percentages."""

    counts: dict[tuple[Platform, MainType], int]
    type_populations: dict[MainType, int]

    def cell(self, platform: Platform, main_type: MainType) -> str:
        count = self.counts.get((platform, main_type), 0)
        population = self.type_populations.get(main_type, 0)
        from .util import format_comma

        if population == 0:
            return f"{format_comma(count)} (—)"
        pct = count / population * 100.0
        return f"{format_comma(count)} ({pct:.1f}%)"

    def row_total(self, platform: Platform) -> int:
        return sum(self.counts.get((platform, t), 0) for t in TYPE_COLUMN_ORDER)

    def column_total(self, main_type: MainType) -> int:
        return sum(self.counts.get((p, main_type), 0) for p in Platform)

    def to_dict(self) -> dict:
        from .util import format_comma

        return {
            "columns": [t.value for t in TYPE_COLUMN_ORDER],
            "rows": [
                {
                    "platform": p.value,
                    "cells": {t.value: self.cell(p, t) for t in TYPE_COLUMN_ORDER},
                    "total": self.row_total(p),
                }
                for p in Platform
            ],
            "totals": {t.value: format_comma(self.column_total(t)) for t in TYPE_COLUMN_ORDER},
        }

    def render(self) -> str:
        """Plain-text table: platforms as rows, entity types as columns."""
        from .util import format_comma

        headers = ["Platform"] + [TYPE_LABELS[t] for t in TYPE_COLUMN_ORDER] + ["Total"]
        body: list[list[str]] = []
        for p in Platform:
            body.append(
                [p.value]
                + [self.cell(p, t) for t in TYPE_COLUMN_ORDER]
                + [format_comma(self.row_total(p))]
            )
        total_row = (
            ["Total"]
            + [format_comma(self.column_total(t)) for t in TYPE_COLUMN_ORDER]
            + [format_comma(sum(self.row_total(p) for p in Platform))]
        )
        body.append(total_row)

        widths = [max(len(r[i]) for r in [headers] + body) for i in range(len(headers))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
        lines.append("  ".join("-" * w for w in widths))
        for r in body:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"


def distribution_report(registry: SeedRegistry) -> DistributionReport:
    """Count entities of each type holding a handle on each platform."""
    counts: dict[tuple[Platform, MainType], int] = {}
    populations: dict[MainType, int] = {t: 0 for t in MainType}
    for entity in registry.entities():
        populations[entity.main_type] += 1
        for platform in entity.handles:
            key = (platform, entity.main_type)
            counts[key] = counts.get(key, 0) + 1
    return DistributionReport(counts=counts, type_populations=populations)
