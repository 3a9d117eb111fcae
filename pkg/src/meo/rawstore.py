"""Append-only, content-addressed store for raw platform payloads.

Layout: raw/{platform}/{YYYY-MM-DD}/{object_id}.json, where object_id is the
lowercase hex SHA-256 of the payload bytes. Each partition directory also
carries MANIFEST.json {count, bytes, ids} plus META.ndjson, an append-only
journal of per-object provenance (handle, collected_at, crawl_run_id) that
makes recovery possible if a manifest write never happened.

Identical payload bytes within one (platform, day) partition deduplicate to
the first stored object; the same bytes re-collected on a later day are kept
as separate evidence of metric drift.
"""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Iterator, NamedTuple

from .errors import InvalidPayloadError, NotFoundError
from .platforms import Platform
from .util import (
    atomic_write_bytes,
    day_of,
    ensure_utc,
    format_rfc3339,
    parse_rfc3339,
    sha256_hex,
)

_FLUSH_EVERY = 512  # puts per partition between automatic manifest rewrites


@dataclass
class RawObject:
    object_id: str
    platform: Platform
    handle: str
    payload: bytes
    collected_at: datetime
    crawl_run_id: str


class PutResult(NamedTuple):
    object_id: str
    deduped: bool


@dataclass
class _Meta:
    handle: str
    collected_at: datetime
    crawl_run_id: str


class _Partition:
    def __init__(self, directory: Path):
        self.dir = directory
        self.meta: dict[str, _Meta] = {}
        self.bytes = 0
        self.dirty = False
        self.puts_since_flush = 0


def _partition_rel(platform: Platform, day: date) -> Path:
    return Path(platform.value) / day.isoformat()


class RawStore:
    """Filesystem-backed raw object store with per-partition manifests."""

    def __init__(self, root: str | Path):
        self._root = Path(root) / "raw"
        self._root.mkdir(parents=True, exist_ok=True)
        self._partitions: dict[tuple[Platform, date], _Partition] = {}
        self._locations: dict[str, tuple[Platform, date]] = {}
        self._locks: dict[tuple[Platform, date], threading.Lock] = defaultdict(threading.Lock)
        self._global_lock = threading.Lock()
        self._load_existing()

    # -- loading / recovery --------------------------------------------------

    def _load_existing(self) -> None:
        for platform_dir in sorted(self._root.iterdir()) if self._root.is_dir() else []:
            if not platform_dir.is_dir():
                continue
            try:
                platform = Platform(platform_dir.name)
            except ValueError:
                continue
            for day_dir in sorted(platform_dir.iterdir()):
                if not day_dir.is_dir():
                    continue
                try:
                    day = date.fromisoformat(day_dir.name)
                except ValueError:
                    continue
                part = _Partition(day_dir)
                meta_path = day_dir / "META.ndjson"
                if meta_path.exists():
                    for line in meta_path.read_bytes().splitlines():
                        if not line.strip():
                            continue
                        rec = json.loads(line)
                        part.meta[rec["object_id"]] = _Meta(
                            handle=rec["handle"],
                            collected_at=parse_rfc3339(rec["collected_at"]),
                            crawl_run_id=rec["crawl_run_id"],
                        )
                        part.bytes += rec["bytes"]
                # recover objects whose meta append was lost
                for obj_path in day_dir.glob("*.json"):
                    if obj_path.name == "MANIFEST.json":
                        continue
                    object_id = obj_path.stem
                    if object_id not in part.meta:
                        part.meta[object_id] = _Meta(
                            handle="", collected_at=ensure_utc(datetime.min.replace(year=1970)),
                            crawl_run_id="",
                        )
                        part.bytes += obj_path.stat().st_size
                        part.dirty = True
                manifest_path = day_dir / "MANIFEST.json"
                if not manifest_path.exists():
                    part.dirty = True
                else:
                    manifest = json.loads(manifest_path.read_text())
                    if manifest.get("count") != len(part.meta):
                        part.dirty = True
                key = (platform, day)
                self._partitions[key] = part
                for object_id in part.meta:
                    self._locations[object_id] = key

    # -- write path ------------------------------------------------------------

    def put(
        self,
        platform: Platform,
        handle: str,
        payload: bytes,
        collected_at: datetime,
        crawl_run_id: str,
    ) -> PutResult:
        """Store one payload; returns its content hash and a dedup flag."""
        if not payload:
            raise InvalidPayloadError("payload must be non-empty")
        try:
            json.loads(payload)
        except (ValueError, UnicodeDecodeError):
            raise InvalidPayloadError("payload is not valid JSON") from None

        collected_at = ensure_utc(collected_at)
        object_id = sha256_hex(payload)
        key = (platform, day_of(collected_at))
        with self._locks[key]:
            part = self._partition(key)
            if object_id in part.meta:
                return PutResult(object_id, True)
            atomic_write_bytes(part.dir / f"{object_id}.json", payload)
            meta = _Meta(handle=handle, collected_at=collected_at, crawl_run_id=crawl_run_id)
            meta_line = json.dumps({
                "object_id": object_id,
                "handle": handle,
                "collected_at": format_rfc3339(collected_at),
                "crawl_run_id": crawl_run_id,
                "bytes": len(payload),
            }, sort_keys=True)
            with open(part.dir / "META.ndjson", "a", encoding="utf-8") as fh:
                fh.write(meta_line + "\n")
            part.meta[object_id] = meta
            part.bytes += len(payload)
            part.dirty = True
            part.puts_since_flush += 1
            if part.puts_since_flush >= _FLUSH_EVERY:
                self._flush_partition(part)
        with self._global_lock:
            self._locations[object_id] = key
        return PutResult(object_id, False)

    def _partition(self, key: tuple[Platform, date]) -> _Partition:
        part = self._partitions.get(key)
        if part is None:
            directory = self._root / _partition_rel(*key)
            directory.mkdir(parents=True, exist_ok=True)
            part = _Partition(directory)
            self._partitions[key] = part
        return part

    def _flush_partition(self, part: _Partition) -> None:
        manifest = {
            "count": len(part.meta),
            "bytes": part.bytes,
            "ids": sorted(part.meta),
        }
        atomic_write_bytes(
            part.dir / "MANIFEST.json",
            json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8"),
        )
        part.dirty = False
        part.puts_since_flush = 0

    def flush(self) -> None:
        """Write out every dirty partition manifest (quiescence point)."""
        for key, part in sorted(self._partitions.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            with self._locks[key]:
                if part.dirty:
                    self._flush_partition(part)

    # -- read path ---------------------------------------------------------------

    def get(self, object_id: str) -> RawObject:
        key = self._locations.get(object_id)
        if key is None:
            raise NotFoundError(f"no raw object {object_id!r}")
        part = self._partitions[key]
        payload = (part.dir / f"{object_id}.json").read_bytes()
        meta = part.meta[object_id]
        return RawObject(
            object_id=object_id,
            platform=key[0],
            handle=meta.handle,
            payload=payload,
            collected_at=meta.collected_at,
            crawl_run_id=meta.crawl_run_id,
        )

    def scan(
        self,
        platform: Platform | None = None,
        start_day: date | None = None,
        end_day: date | None = None,
    ) -> Iterator[RawObject]:
        """Yield matching objects exactly once, ordered by (platform, collected_at, id)."""
        self.flush()
        keys = sorted(
            self._partitions,
            key=lambda k: (list(Platform).index(k[0]), k[1]),
        )
        for key in keys:
            part_platform, day = key
            if platform is not None and part_platform is not platform:
                continue
            if start_day is not None and day < start_day:
                continue
            if end_day is not None and day >= end_day:
                continue
            part = self._partitions[key]
            ordered = sorted(
                part.meta.items(), key=lambda kv: (kv[1].collected_at, kv[0])
            )
            for object_id, _ in ordered:
                yield self.get(object_id)

    def partitions(self) -> list[tuple[Platform, date]]:
        return sorted(self._partitions, key=lambda k: (list(Platform).index(k[0]), k[1]))

    def manifest(self, platform: Platform, day: date) -> dict:
        key = (platform, day)
        if key not in self._partitions:
            raise NotFoundError(f"no partition {platform}/{day}")
        with self._locks[key]:
            part = self._partitions[key]
            if part.dirty:
                self._flush_partition(part)
        return json.loads((self._partitions[key].dir / "MANIFEST.json").read_text())

    def count(self, platform: Platform | None = None) -> int:
        return sum(
            len(part.meta)
            for (p, _), part in self._partitions.items()
            if platform is None or p is platform
        )

    def verify(self) -> list[str]:
        """Hash-recheck every payload and cross-check manifests; return problems."""
        problems = []
        self.flush()
        for key, part in self._partitions.items():
            manifest = json.loads((part.dir / "MANIFEST.json").read_text())
            if manifest["count"] != len(part.meta):
                problems.append(f"{key}: manifest count {manifest['count']} != {len(part.meta)}")
            for object_id in part.meta:
                payload = (part.dir / f"{object_id}.json").read_bytes()
                if sha256_hex(payload) != object_id:
                    problems.append(f"{key}: hash mismatch for {object_id}")
        return problems
