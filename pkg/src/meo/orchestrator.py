"""Pipeline orchestration: staged runs, scheduling, and health metrics.

A pipeline run drives crawl -> raw store -> normalize -> index -> embed for
one platform and a set of handles, page by page, and records a crawl run in
the ledger with the day intervals that made it through every stage. The
sinks are idempotent (content-addressed store, upsert index), so re-running
any window converges rather than duplicating.

The scheduler is in-process and driven by an injectable clock, which makes
time-travel tests deterministic.
"""

from __future__ import annotations

import json
import logging
import threading
import time as _time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Callable, Protocol

from .connectors import Connector, FetchRequest, ThrottlePolicy
from .errors import (
    AbortPipeline,
    InvalidPayloadError,
    NotFoundError,
    RetryableError,
    ThrottledError,
)
from .indexing import IndexEngine
from .ledger import (
    BackfillQueue,
    CrawlLedger,
    CrawlRun,
    Interval,
    RunStatus,
    new_run_id,
)
from .normalize import Normalizer
from .platforms import Platform
from .rawstore import RawObject, RawStore
from .seeds import SeedRegistry
from .util import day_start, ensure_utc, utcnow

logger = logging.getLogger(__name__)

STAGES = ("fetch", "store", "normalize", "index", "embed")


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return utcnow()


class ManualClock:
    """Settable clock for deterministic tests and replay."""

    def __init__(self, start: datetime):
        self._now = ensure_utc(start)

    def now(self) -> datetime:
        return self._now

    def advance(self, delta: timedelta) -> datetime:
        self._now += delta
        return self._now

    def set(self, value: datetime) -> None:
        self._now = ensure_utc(value)


class Metrics:
    """Thread-safe flat counter map; gauges are set explicitly."""

    COUNTERS = (
        "fetched", "rejected_invalid", "stored", "deduped",
        "normalized", "quarantined", "indexed", "embedded",
        "runs_total", "runs_failed",
    )

    def __init__(self):
        self._lock = threading.Lock()
        self._counters: dict[str, float] = {name: 0 for name in self.COUNTERS}
        self._gauges: dict[str, float] = {}

    def inc(self, name: str, n: float = 1) -> None:
        with self._lock:
            self._counters[name] = self._counters.get(name, 0) + n

    def set_gauge(self, name: str, value: float) -> None:
        with self._lock:
            self._gauges[name] = value

    def snapshot(self) -> dict[str, float]:
        with self._lock:
            out = dict(self._counters)
            out.update(self._gauges)
        return out


@dataclass
class PipelineRunReport:
    platform: Platform
    handles: list[str]
    window: Interval
    counts: dict[str, int] = field(default_factory=lambda: {
        "fetched": 0, "rejected_invalid": 0, "stored": 0, "deduped": 0,
        "normalized": 0, "quarantined": 0, "indexed": 0, "embedded": 0,
    })
    durations: dict[str, float] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    runs: list[CrawlRun] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def check_conservation(self) -> list[str]:
        """Stage equalities that must hold for completed runs."""
        c = self.counts
        problems = []
        if c["fetched"] != c["stored"] + c["rejected_invalid"]:
            problems.append("fetched != stored + rejected_invalid")
        if c["stored"] != c["normalized"] + c["quarantined"]:
            problems.append("stored != normalized + quarantined")
        if c["normalized"] != c["indexed"]:
            problems.append("normalized != indexed")
        if c["indexed"] != c["embedded"]:
            problems.append("indexed != embedded")
        return problems

    def to_json(self) -> dict:
        return {
            "platform": self.platform.value,
            "handles": list(self.handles),
            "window": [self.window.start.isoformat(), self.window.end.isoformat()],
            "counts": dict(self.counts),
            "durations": {k: round(v, 6) for k, v in self.durations.items()},
            "errors": list(self.errors),
            "runs": [r.run_id for r in self.runs],
        }


StageHook = Callable[[str, dict], None]


class Pipeline:
    """Drives all stages for one window and records coverage in the ledger."""

    def __init__(
        self,
        connector: Connector,
        raw_store: RawStore,
        normalizer: Normalizer,
        engine: IndexEngine,
        ledger: CrawlLedger,
        registry: SeedRegistry | None = None,
        metrics: Metrics | None = None,
        clock: Clock | None = None,
        sleeper: Callable[[float], None] = _time.sleep,
        stage_hook: StageHook | None = None,
        page_size: int = 100,
        throttle_policy: ThrottlePolicy | None = None,
        max_retries: int = 5,
    ):
        self.connector = connector
        self.raw_store = raw_store
        self.normalizer = normalizer
        self.engine = engine
        self.ledger = ledger
        self.registry = registry
        self.metrics = metrics or Metrics()
        self.clock = clock or SystemClock()
        self.sleeper = sleeper
        self.stage_hook = stage_hook
        self.page_size = page_size
        self.throttle_policy = throttle_policy or ThrottlePolicy()
        self.max_retries = max_retries

    # -- fetching with retry -------------------------------------------------

    def _fetch_with_retry(self, req: FetchRequest):
        attempt = 0
        while True:
            try:
                return self.connector.fetch(req)
            except ThrottledError as exc:
                attempt += 1
                if attempt > self.max_retries:
                    raise
                self.sleeper(exc.retry_after)
            except RetryableError:
                attempt += 1
                if attempt > self.max_retries:
                    raise
                self.sleeper(self.throttle_policy.backoff_delay(attempt))

    def _hook(self, stage: str, ctx: dict) -> None:
        if self.stage_hook is not None:
            self.stage_hook(stage, ctx)

    # -- the run ---------------------------------------------------------------

    def run(self, platform: Platform, handles: list[str], window: Interval) -> PipelineRunReport:
        """Run every stage for each handle over the day window [start, end)."""
        report = PipelineRunReport(platform=platform, handles=list(handles), window=window)
        aborted = False
        for handle in sorted(handles):
            if aborted:
                break
            try:
                self._run_handle(platform, handle, window, report)
            except AbortPipeline as exc:
                report.errors.append(f"{handle}: aborted at {exc}")
                aborted = True
            except (NotFoundError, ThrottledError, RetryableError) as exc:
                report.errors.append(f"{handle}: {exc}")
                self.metrics.inc("runs_failed")
        self.raw_store.flush()
        for problem in ([] if report.errors else report.check_conservation()):
            report.errors.append(f"conservation violated: {problem}")
        return report

    def _run_handle(
        self, platform: Platform, handle: str, window: Interval, report: PipelineRunReport
    ) -> None:
        run_id = new_run_id()
        started_at = self.clock.now()
        counts = {"payloads": 0, "deduped": 0, "quarantined": 0}
        start_dt, end_dt = day_start(window.start), day_start(window.end)
        cursor: str | None = None
        watermark: datetime | None = None  # oldest fully processed publish time
        completed = False
        t0 = _time.monotonic()

        try:
            while True:
                req = FetchRequest(
                    platform=platform, handle=handle, start=start_dt, end=end_dt,
                    cursor=cursor, page_size=self.page_size,
                )
                page = self._fetch_with_retry(req)
                report.counts["fetched"] += len(page.payloads)
                self.metrics.inc("fetched", len(page.payloads))
                counts["payloads"] += len(page.payloads)
                self._hook("fetch", {"handle": handle, "page": len(page.payloads)})

                raws: list[RawObject] = []
                for payload in page.payloads:
                    try:
                        result = self.raw_store.put(
                            platform, handle, payload, page.collected_at, run_id
                        )
                    except InvalidPayloadError:
                        report.counts["rejected_invalid"] += 1
                        self.metrics.inc("rejected_invalid")
                        continue
                    report.counts["stored"] += 1
                    self.metrics.inc("stored")
                    if result.deduped:
                        counts["deduped"] += 1
                        report.counts["deduped"] += 1
                        self.metrics.inc("deduped")
                    raws.append(RawObject(
                        object_id=result.object_id, platform=platform, handle=handle,
                        payload=payload, collected_at=page.collected_at, crawl_run_id=run_id,
                    ))
                self._hook("store", {"handle": handle, "stored": len(raws)})

                page_posts = []
                for raw in raws:
                    post = self.normalizer.process(raw)
                    if post is None:
                        counts["quarantined"] += 1
                        report.counts["quarantined"] += 1
                        self.metrics.inc("quarantined")
                    else:
                        page_posts.append((post, raw))
                report.counts["normalized"] += len(page_posts)
                self.metrics.inc("normalized", len(page_posts))
                self._hook("normalize", {"handle": handle, "normalized": len(page_posts)})

                for post, raw in page_posts:
                    self.engine.index_post(post, raw_doc=json.loads(raw.payload))
                    if self.registry is not None:
                        self.registry.record_activity(post.seed_id, platform, post.published_at)
                report.counts["indexed"] += len(page_posts)
                self.metrics.inc("indexed", len(page_posts))
                self._hook("index", {"handle": handle, "indexed": len(page_posts)})

                # embedding happens inside index_post; null embeddings count too
                report.counts["embedded"] += len(page_posts)
                self.metrics.inc("embedded", len(page_posts))
                self._hook("embed", {"handle": handle, "embedded": len(page_posts)})

                if page_posts:
                    oldest = min(post.published_at for post, _ in page_posts)
                    watermark = oldest if watermark is None or oldest < watermark else watermark

                if page.next_cursor is None:
                    completed = True
                    break
                cursor = page.next_cursor
        finally:
            covered = self._covered_intervals(window, watermark, completed)
            status = (
                RunStatus.SUCCESS if completed
                else (RunStatus.PARTIAL if covered else RunStatus.FAILED)
            )
            run = CrawlRun(
                run_id=run_id, platform=platform, handle=handle, window=window,
                status=status, covered=covered, counts=counts,
                started_at=started_at, finished_at=self.clock.now(),
            )
            self.ledger.record_run(run)
            report.runs.append(run)
            report.durations[f"{platform.value}:{handle}"] = _time.monotonic() - t0
            self.metrics.inc("runs_total")
            if status is RunStatus.FAILED:
                self.metrics.inc("runs_failed")
            else:
                self.metrics.set_gauge(
                    f"last_success_epoch_{platform.value}",
                    ensure_utc(run.finished_at).timestamp(),
                )

    @staticmethod
    def _covered_intervals(
        window: Interval, watermark: datetime | None, completed: bool
    ) -> list[Interval]:
        """Day intervals fully processed through every stage.

        Pages arrive newest-first, so an interrupted run has processed all of
        (watermark, window.end); the watermark's own day may be split across
        an unfetched page boundary and is claimed only on completion.
        """
        if completed:
            return [window]
        if watermark is None:
            return []
        first_full_day = ensure_utc(watermark).date() + timedelta(days=1)
        if first_full_day >= window.end:
            return []
        return [Interval(first_full_day, window.end)]

    # -- backfill consumption --------------------------------------------------

    def run_backfill(
        self, queue: BackfillQueue, limit: int | None = None
    ) -> list[PipelineRunReport]:
        """Claim and execute pending backfill tasks, highest priority first."""
        reports = []
        while limit is None or len(reports) < limit:
            task = queue.claim()
            if task is None:
                break
            report = self.run(task.platform, [task.handle], task.gap)
            reports.append(report)
            remaining = self.ledger.detect_gaps(task.platform, task.handle, task.gap)
            if report.ok and not remaining:
                queue.complete(task.task_id)
            else:
                queue.fail(task.task_id)
        return reports


# -- scheduling -------------------------------------------------------------------

class JobKind(str, Enum):
    SCHEDULED_CRAWL = "scheduled_crawl"
    BACKFILL = "backfill"
    RENORMALIZE = "renormalize"
    REINDEX = "reindex"
    STATS_EXPORT = "stats_export"


@dataclass
class JobSpec:
    job_id: str
    kind: JobKind
    platform: Platform | None = None
    handles: tuple[str, ...] | None = None
    cadence: timedelta | None = None  # None -> one-shot
    first_due: datetime | None = None

    def __post_init__(self) -> None:
        if self.cadence is not None and self.cadence <= timedelta(0):
            raise ValueError("cadence must be positive for recurring jobs")

    def scope(self) -> tuple:
        return (self.kind, self.platform, self.handles)


class Scheduler:
    """Launches due jobs on tick; missed slots coalesce into one launch.

    A job never launches while a previous instance of the same scope is
    still running; callers release the scope with `mark_done`.
    """

    def __init__(self, clock: Clock, runner: Callable[[JobSpec], None] | None = None):
        self.clock = clock
        self.runner = runner
        self._jobs: dict[str, JobSpec] = {}
        self._next_due: dict[str, datetime | None] = {}
        self._running: set[tuple] = set()
        self._lock = threading.Lock()
        self.launch_log: list[tuple[datetime, str]] = []

    def add_job(self, spec: JobSpec) -> None:
        with self._lock:
            if spec.job_id in self._jobs:
                raise ValueError(f"duplicate job id {spec.job_id!r}")
            self._jobs[spec.job_id] = spec
            self._next_due[spec.job_id] = spec.first_due or self.clock.now()

    def mark_done(self, job_id: str) -> None:
        with self._lock:
            spec = self._jobs.get(job_id)
            if spec is not None:
                self._running.discard(spec.scope())

    def next_due(self, job_id: str) -> datetime | None:
        return self._next_due.get(job_id)

    def tick(self, now: datetime | None = None) -> list[str]:
        """Launch every job whose next due time has arrived; advance schedules."""
        now = ensure_utc(now) if now else self.clock.now()
        launched = []
        with self._lock:
            for job_id in sorted(self._jobs):
                spec = self._jobs[job_id]
                due = self._next_due[job_id]
                if due is None or due > now:
                    continue
                if spec.scope() in self._running:
                    continue
                if spec.cadence is None:
                    self._next_due[job_id] = None
                else:
                    slots = due
                    while slots <= now:
                        slots += spec.cadence
                    self._next_due[job_id] = slots
                self._running.add(spec.scope())
                self.launch_log.append((now, job_id))
                launched.append(job_id)
        for job_id in launched:
            if self.runner is not None:
                self.runner(self._jobs[job_id])
        return launched
