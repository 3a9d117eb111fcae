"""Small shared helpers: UTC time handling, canonical JSON, file atomics."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from datetime import date, datetime, timezone
from pathlib import Path


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def ensure_utc(dt: datetime) -> datetime:
    """Attach UTC to naive datetimes, convert aware ones to UTC."""
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def day_of(dt: datetime) -> date:
    return ensure_utc(dt).date()


def day_start(d: date) -> datetime:
    return datetime(d.year, d.month, d.day, tzinfo=timezone.utc)


def format_rfc3339(dt: datetime) -> str:
    """Render a UTC timestamp as RFC 3339 with a trailing Z."""
    dt = ensure_utc(dt)
    text = dt.isoformat()
    if text.endswith("+00:00"):
        text = text[:-6] + "Z"
    return text


def parse_rfc3339(text: str) -> datetime:
    """Parse RFC 3339 timestamps, accepting both Z and +00:00 suffixes."""
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    return ensure_utc(datetime.fromisoformat(cleaned))


def parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())


def canonical_json_bytes(obj) -> bytes:
    """Serialize to the canonical byte form used for hashing and transport.

    Keys sorted, no whitespace, UTF-8 without ASCII escaping, so the same
    document always maps to the same bytes regardless of construction order.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def stable_hash64(text: str) -> int:
    """Process-stable 64-bit hash (unlike builtin hash, which is salted)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file + rename so readers never observe partial files."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def format_comma(n: int) -> str:
    """1459 -> '1,459'."""
    return f"{n:,}"


def format_spaced(n: int) -> str:
    """7322094 -> '7 322 094' (space-grouped thousands)."""
    return f"{n:,}".replace(",", " ")
