"""Crawl ledger: run records, coverage algebra, gap detection, backfill tasks.

Coverage is tracked per (platform, handle) as disjoint, sorted, half-open
day intervals [start, end) in UTC. The ledger itself is an append-only
newline-delimited JSON journal of crawl runs; the coverage map is a
deterministic fold over it, so replaying the journal always reproduces the
same state.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import date, datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import MalformedRunError, NotFoundError
from .platforms import Platform
from .util import ensure_utc, format_rfc3339, parse_rfc3339, utcnow

MAX_BACKFILL_ATTEMPTS = 5


class Interval(NamedTuple):
    """Half-open day interval [start, end)."""

    start: date
    end: date

    def days(self) -> int:
        return (self.end - self.start).days

    def contains_day(self, d: date) -> bool:
        return self.start <= d < self.end


def make_interval(start: date, end: date) -> Interval:
    if start >= end:
        raise ValueError(f"interval start {start} must be before end {end}")
    return Interval(start, end)


def normalize_intervals(intervals: Iterable[Interval]) -> list[Interval]:
    """Merge to the canonical disjoint sorted form; adjacent intervals fuse."""
    ordered = sorted(intervals)
    merged: list[Interval] = []
    for iv in ordered:
        if iv.start >= iv.end:
            raise ValueError(f"empty or inverted interval {iv}")
        if merged and iv.start <= merged[-1].end:
            if iv.end > merged[-1].end:
                merged[-1] = Interval(merged[-1].start, iv.end)
        else:
            merged.append(Interval(iv.start, iv.end))
    return merged


def is_disjoint_sorted(intervals: list[Interval]) -> bool:
    for i, iv in enumerate(intervals):
        if iv.start >= iv.end:
            return False
        if i and intervals[i - 1].end > iv.start:
            return False
        if i and intervals[i - 1].start > iv.start:
            return False
    return True


def union_intervals(a: Iterable[Interval], b: Iterable[Interval]) -> list[Interval]:
    return normalize_intervals(list(a) + list(b))


def subtract_intervals(window: Interval, covered: Iterable[Interval]) -> list[Interval]:
    """Relative complement window \\ covered, as disjoint sorted intervals."""
    gaps: list[Interval] = []
    cursor = window.start
    for iv in normalize_intervals(covered):
        if iv.end <= window.start or iv.start >= window.end:
            continue
        if iv.start > cursor:
            gaps.append(Interval(cursor, min(iv.start, window.end)))
        cursor = max(cursor, iv.end)
        if cursor >= window.end:
            break
    if cursor < window.end:
        gaps.append(Interval(cursor, window.end))
    return gaps


def intersect_total_days(a: Iterable[Interval], window: Interval) -> int:
    total = 0
    for iv in normalize_intervals(a):
        lo = max(iv.start, window.start)
        hi = min(iv.end, window.end)
        if lo < hi:
            total += (hi - lo).days
    return total


class RunStatus(str, Enum):
    SUCCESS = "success"
    PARTIAL = "partial"
    FAILED = "failed"


@dataclass
class CrawlRun:
    run_id: str
    platform: Platform
    handle: str
    window: Interval
    status: RunStatus
    covered: list[Interval]
    counts: dict[str, int] = field(default_factory=dict)  # payloads, deduped, quarantined
    started_at: datetime = field(default_factory=utcnow)
    finished_at: datetime = field(default_factory=utcnow)

    def validate(self) -> None:
        if not is_disjoint_sorted(self.covered):
            raise MalformedRunError(
                f"run {self.run_id}: covered intervals must be disjoint and sorted"
            )
        for iv in self.covered:
            if iv.start < self.window.start or iv.end > self.window.end:
                raise MalformedRunError(
                    f"run {self.run_id}: covered interval {iv} outside window {self.window}"
                )

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "platform": self.platform.value,
            "handle": self.handle,
            "window": [self.window.start.isoformat(), self.window.end.isoformat()],
            "status": self.status.value,
            "covered": [[iv.start.isoformat(), iv.end.isoformat()] for iv in self.covered],
            "counts": dict(self.counts),
            "started_at": format_rfc3339(self.started_at),
            "finished_at": format_rfc3339(self.finished_at),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CrawlRun":
        return cls(
            run_id=doc["run_id"],
            platform=Platform(doc["platform"]),
            handle=doc["handle"],
            window=Interval(date.fromisoformat(doc["window"][0]), date.fromisoformat(doc["window"][1])),
            status=RunStatus(doc["status"]),
            covered=[Interval(date.fromisoformat(a), date.fromisoformat(b)) for a, b in doc["covered"]],
            counts=dict(doc["counts"]),
            started_at=parse_rfc3339(doc["started_at"]),
            finished_at=parse_rfc3339(doc["finished_at"]),
        )


def new_run_id() -> str:
    return uuid.uuid4().hex


class CrawlLedger:
    """Journal of crawl runs plus the coverage map folded from it."""

    def __init__(self, journal_path: str | Path | None = None):
        self._journal_path = Path(journal_path) if journal_path else None
        self._runs: list[CrawlRun] = []
        self._coverage: dict[tuple[Platform, str], list[Interval]] = {}
        self._lock = threading.RLock()
        if self._journal_path and self._journal_path.exists():
            for line in self._journal_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._apply(CrawlRun.from_json(json.loads(line)), persist=False)

    def record_run(self, run: CrawlRun) -> list[Interval]:
        """Fold one run into coverage; failed runs contribute nothing."""
        run.validate()
        return self._apply(run, persist=True)

    def _apply(self, run: CrawlRun, persist: bool) -> list[Interval]:
        with self._lock:
            self._runs.append(run)
            key = (run.platform, run.handle)
            if run.status is not RunStatus.FAILED and run.covered:
                self._coverage[key] = union_intervals(
                    self._coverage.get(key, []), run.covered
                )
            if persist and self._journal_path:
                self._journal_path.parent.mkdir(parents=True, exist_ok=True)
                with open(self._journal_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(run.to_json(), sort_keys=True) + "\n")
            return list(self._coverage.get(key, []))

    def coverage(self, platform: Platform, handle: str) -> list[Interval]:
        return list(self._coverage.get((platform, handle), []))

    def coverage_keys(self) -> list[tuple[Platform, str]]:
        return sorted(self._coverage, key=lambda k: (k[0].value, k[1]))

    def detect_gaps(self, platform: Platform, handle: str, window: Interval) -> list[Interval]:
        """target window minus coverage, as disjoint sorted day intervals."""
        if window.start >= window.end:
            raise ValueError("window start must be before end")
        return subtract_intervals(window, self.coverage(platform, handle))

    def runs(self) -> list[CrawlRun]:
        return list(self._runs)

    def last_success_at(self) -> dict[Platform, datetime]:
        out: dict[Platform, datetime] = {}
        for run in self._runs:
            if run.status is RunStatus.SUCCESS:
                prior = out.get(run.platform)
                if prior is None or run.finished_at > prior:
                    out[run.platform] = run.finished_at
        return out


class TaskState(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    ABANDONED = "abandoned"


@dataclass
class BackfillTask:
    task_id: str
    platform: Platform
    handle: str
    gap: Interval
    priority: int  # days since the gap started; older gaps rank higher
    attempts: int = 0
    state: TaskState = TaskState.PENDING
    created_at: datetime = field(default_factory=utcnow)

    def key(self) -> tuple[Platform, str, date, date]:
        return (self.platform, self.handle, self.gap.start, self.gap.end)

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "platform": self.platform.value,
            "handle": self.handle,
            "gap": [self.gap.start.isoformat(), self.gap.end.isoformat()],
            "priority": self.priority,
            "attempts": self.attempts,
            "state": self.state.value,
            "created_at": format_rfc3339(self.created_at),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BackfillTask":
        return cls(
            task_id=doc["task_id"],
            platform=Platform(doc["platform"]),
            handle=doc["handle"],
            gap=Interval(date.fromisoformat(doc["gap"][0]), date.fromisoformat(doc["gap"][1])),
            priority=doc["priority"],
            attempts=doc["attempts"],
            state=TaskState(doc["state"]),
            created_at=parse_rfc3339(doc["created_at"]),
        )


class BackfillQueue:
    """Deduplicating task queue with at-most-once claim transitions."""

    def __init__(self, state_path: str | Path | None = None):
        self._state_path = Path(state_path) if state_path else None
        self._tasks: dict[str, BackfillTask] = {}
        self._by_key: dict[tuple, str] = {}
        self._lock = threading.RLock()
        self._counter = 0
        if self._state_path and self._state_path.exists():
            for doc in json.loads(self._state_path.read_text(encoding="utf-8")):
                task = BackfillTask.from_json(doc)
                self._tasks[task.task_id] = task
                self._by_key[task.key()] = task.task_id
                self._counter = max(self._counter, int(task.task_id.split("-")[-1]) + 1)

    def emit(
        self,
        platform: Platform,
        handle: str,
        gaps: Iterable[Interval],
        now: datetime | None = None,
    ) -> list[BackfillTask]:
        """One task per new gap; re-emitting a known (platform, handle, gap) is a no-op."""
        now = ensure_utc(now) if now else utcnow()
        created = []
        with self._lock:
            for gap in normalize_intervals(gaps):
                key = (platform, handle, gap.start, gap.end)
                if key in self._by_key:
                    continue
                task = BackfillTask(
                    task_id=f"bf-{self._counter:06d}",
                    platform=platform,
                    handle=handle,
                    gap=gap,
                    priority=(now.date() - gap.start).days,
                    created_at=now,
                )
                self._counter += 1
                self._tasks[task.task_id] = task
                self._by_key[key] = task.task_id
                created.append(task)
            if created:
                self._persist()
        return created

    def claim(self) -> BackfillTask | None:
        """Move the highest-priority pending task to running and return it."""
        with self._lock:
            pending = [t for t in self._tasks.values() if t.state is TaskState.PENDING]
            if not pending:
                return None
            pending.sort(key=lambda t: (-t.priority, t.created_at, t.task_id))
            task = pending[0]
            task.state = TaskState.RUNNING
            self._persist()
            return task

    def complete(self, task_id: str) -> None:
        self._transition(task_id, TaskState.DONE)

    def fail(self, task_id: str) -> None:
        with self._lock:
            task = self._get(task_id)
            task.attempts += 1
            task.state = (
                TaskState.ABANDONED if task.attempts >= MAX_BACKFILL_ATTEMPTS else TaskState.PENDING
            )
            self._persist()

    def _transition(self, task_id: str, state: TaskState) -> None:
        with self._lock:
            self._get(task_id).state = state
            self._persist()

    def _get(self, task_id: str) -> BackfillTask:
        task = self._tasks.get(task_id)
        if task is None:
            raise NotFoundError(f"no backfill task {task_id!r}")
        return task

    def get(self, task_id: str) -> BackfillTask:
        return self._get(task_id)

    def tasks(self, state: TaskState | None = None) -> list[BackfillTask]:
        with self._lock:
            out = [t for t in self._tasks.values() if state is None or t.state is state]
        return sorted(out, key=lambda t: t.task_id)

    def pending_count(self) -> int:
        return sum(1 for t in self._tasks.values() if t.state is TaskState.PENDING)

    def abandoned_count(self) -> int:
        return sum(1 for t in self._tasks.values() if t.state is TaskState.ABANDONED)

    def has_task(self, platform: Platform, handle: str, gap: Interval) -> bool:
        return (platform, handle, gap.start, gap.end) in self._by_key

    def _persist(self) -> None:
        if not self._state_path:
            return
        self._state_path.parent.mkdir(parents=True, exist_ok=True)
        docs = [t.to_json() for t in sorted(self._tasks.values(), key=lambda t: t.task_id)]
        self._state_path.write_text(json.dumps(docs, indent=1), encoding="utf-8")
