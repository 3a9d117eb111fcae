"""Observatory facade: wires every subsystem over one storage root.

Layout under the storage root:
    seeds.csv           canonical registry export
    raw/...             content-addressed raw store
    index/              lexical segments + vector store
    ledger/runs.ndjson  crawl run journal
    ledger/tasks.json   backfill task state
    quarantine.json     normalization quarantine log
"""

from __future__ import annotations

import csv
import io
import json
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable

from .config import Config
from .connectors import MockConnector, ThrottlePolicy, TokenBucket
from .errors import ConfigError, ObservatoryError
from .indexing import HashingEmbedder, IndexEngine
from .ledger import BackfillQueue, CrawlLedger, Interval
from .mockserver import MockPlatformServer
from .normalize import Normalizer, UnifiedPost, load_default_rules
from .orchestrator import Clock, JobKind, JobSpec, Metrics, Pipeline, Scheduler, SystemClock
from .platforms import MainType, Platform
from .rawstore import RawStore
from .scenarios import ScenarioSpec, build_scenario
from .seeds import SeedRegistry, distribution_report
from .util import format_spaced, utcnow


class _VirtualThrottleClock:
    """Monotonic time base for rate limiting against in-process mock servers.

    Throttle waits advance this clock instead of stalling the wall clock, so
    the token-bucket algebra (and every Throttled/retry path) is enforced and
    observable without real sleeps. Live connectors would wire real time.
    """

    def __init__(self):
        self._now = time.monotonic()
        self._lock = threading.Lock()

    def monotonic(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self._now += max(0.0, seconds)


class Observatory:
    def __init__(self, config: Config, clock: Clock | None = None):
        config.validate()
        self.config = config
        self.clock = clock or SystemClock()
        root = Path(config.storage_root)
        root.mkdir(parents=True, exist_ok=True)

        self.registry = SeedRegistry()
        seeds_path = root / "seeds.csv"
        if seeds_path.exists():
            self.registry.import_seeds(seeds_path)

        self.rules = load_default_rules()
        self.raw_store = RawStore(root)
        index_dir = root / "index"
        embedder = HashingEmbedder(dimension=config.embedding_dim)
        if (index_dir / "unified.json").exists():
            self.engine = IndexEngine.load(index_dir, embedder=embedder)
        else:
            self.engine = IndexEngine(embedder=embedder)
        self.normalizer = Normalizer(rules=self.rules, registry=self.registry)
        self.normalizer.load_quarantine(root / "quarantine.json")
        self.ledger = CrawlLedger(root / "ledger" / "runs.ndjson")
        self.backfills = BackfillQueue(root / "ledger" / "tasks.json")
        self.metrics = Metrics()

        self.servers: dict[Platform, MockPlatformServer] = {}
        self.scenario = None
        if config.scenario_path is not None:
            self.scenario = build_scenario(ScenarioSpec.from_yaml(config.scenario_path))
            self.servers = self.scenario.servers
            if len(self.registry) == 0:
                self.registry.import_seeds(io.StringIO(self.scenario.seed_csv))

        buckets = {
            p: TokenBucket(pc.rate_per_minute)
            for p, pc in config.platforms.items()
            if pc.enabled
        }
        self.connector = MockConnector(self.servers, buckets=buckets, clock=self.clock.now)
        self.pipeline = Pipeline(
            connector=self.connector,
            raw_store=self.raw_store,
            normalizer=self.normalizer,
            engine=self.engine,
            ledger=self.ledger,
            registry=self.registry,
            metrics=self.metrics,
            clock=self.clock,
            page_size=config.page_size,
            throttle_policy=ThrottlePolicy(
                backoff_initial=config.backoff_initial, backoff_cap=config.backoff_cap
            ),
        )
        self.scheduler = Scheduler(self.clock, runner=self._run_job)
        self._register_scheduled_crawls()

    # -- persistence ------------------------------------------------------------

    def save(self) -> None:
        root = Path(self.config.storage_root)
        self.registry.save_csv(root / "seeds.csv")
        self.raw_store.flush()
        self.engine.save(root / "index")
        self.normalizer.save_quarantine(root / "quarantine.json")

    # -- registry operations -------------------------------------------------------

    def import_seeds(self, path: str | Path, replace: bool = True):
        """Load a curated seed list; by default the file replaces the registry."""
        if replace:
            self.registry = SeedRegistry()
            self.normalizer.registry = self.registry
            self.pipeline.registry = self.registry
        report = self.registry.import_seeds(path)
        self.save()
        return report

    # -- crawling ----------------------------------------------------------------------

    def handles_for(self, platform: Platform) -> list[str]:
        if self.servers.get(platform) is not None:
            known = set(self.servers[platform].handles())
            return [h for h in self.registry.handles_on(platform) if h in known]
        return self.registry.handles_on(platform)

    def crawl(
        self,
        platform: Platform,
        window: Interval,
        handles: list[str] | None = None,
    ):
        if platform not in self.servers:
            raise ObservatoryError(
                f"no data source for platform {platform.value}; configure a scenario"
            )
        if not self.config.platforms[platform].enabled:
            raise ObservatoryError(f"platform {platform.value} is disabled in config")
        handles = handles if handles is not None else self.handles_for(platform)
        report = self.pipeline.run(platform, handles, window)
        self.save()
        return report

    def detect_gaps(
        self, platform: Platform, window: Interval, handle: str | None = None
    ) -> list[dict]:
        handles = [handle] if handle else self.handles_for(platform)
        out = []
        for h in handles:
            for gap in self.ledger.detect_gaps(platform, h, window):
                out.append({
                    "platform": platform.value,
                    "handle": h,
                    "start": gap.start.isoformat(),
                    "end": gap.end.isoformat(),
                })
        return out

    def enqueue_backfills(self, platform: Platform, handle: str, gaps: list[Interval]):
        return self.backfills.emit(platform, handle, gaps, now=self.clock.now())

    def run_backfills(self, limit: int | None = None):
        reports = self.pipeline.run_backfill(self.backfills, limit=limit)
        self.save()
        return reports

    # -- scheduled jobs ---------------------------------------------------------------------

    def _register_scheduled_crawls(self) -> None:
        for platform, pc in self.config.platforms.items():
            if not pc.enabled or pc.cadence_days is None:
                continue
            self.scheduler.add_job(JobSpec(
                job_id=f"crawl-{platform.value}",
                kind=JobKind.SCHEDULED_CRAWL,
                platform=platform,
                cadence=timedelta(days=pc.cadence_days),
                first_due=self.clock.now(),
            ))

    def _run_job(self, spec: JobSpec) -> None:
        try:
            if spec.kind is JobKind.SCHEDULED_CRAWL and spec.platform in self.servers:
                now = self.clock.now()
                cadence = self.config.platforms[spec.platform].cadence_days or 1.0
                window = Interval(
                    (now - timedelta(days=max(1, round(cadence)))).date(),
                    now.date() + timedelta(days=1),
                )
                self.crawl(spec.platform, window)
            elif spec.kind is JobKind.BACKFILL:
                self.run_backfills()
        finally:
            self.scheduler.mark_done(spec.job_id)

    # -- query / stats ---------------------------------------------------------------------

    def timeline(self, window: Interval, platforms: Iterable[Platform] | None = None) -> dict:
        """Zero-filled daily post counts per platform over the window."""
        from .analysis import timeline_counts

        series = timeline_counts(self.engine.iter_docs(), window)
        chosen = list(platforms) if platforms else list(Platform)
        n_days = (window.end - window.start).days
        dates = [(window.start + timedelta(days=i)).isoformat() for i in range(n_days)]
        return {
            "dates": dates,
            "series": {p.value: [int(v) for v in series[p].values] for p in chosen},
        }

    def timeline_csv(self, window: Interval, platforms: Iterable[Platform] | None = None) -> str:
        data = self.timeline(window, platforms)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = list(data["series"])
        writer.writerow(["date"] + names)
        for i, d in enumerate(data["dates"]):
            writer.writerow([d] + [data["series"][n][i] for n in names])
        return buf.getvalue()

    def stats_table2(self) -> dict:
        """Per-(platform, type) post totals with per-seed averages.

        Cells render as "TOTAL (AVG)" with space-grouped digits; pairs with
        no posts render as an en dash.
        """
        totals: dict[tuple[Platform, MainType], int] = {}
        seeds_with_posts: dict[tuple[Platform, MainType], set[str]] = {}
        for doc in self.engine.iter_docs():
            platform = Platform(doc["platform"])
            main_type = MainType(doc["seed_meta"]["main_type"])
            key = (platform, main_type)
            totals[key] = totals.get(key, 0) + 1
            seeds_with_posts.setdefault(key, set()).add(doc["seed_id"])

        column_order = [
            MainType.NEWS, MainType.FOREIGN, MainType.INFLUENCER,
            MainType.POLITICIAN, MainType.CSO, MainType.GOVERNMENT,
        ]
        rows = []
        for platform in Platform:
            cells = {}
            for main_type in column_order:
                key = (platform, main_type)
                total = totals.get(key, 0)
                if total == 0:
                    cells[main_type.value] = "–"
                else:
                    avg = round(total / len(seeds_with_posts[key]))
                    cells[main_type.value] = f"{format_spaced(total)} ({format_spaced(avg)})"
            rows.append({"platform": platform.value, "cells": cells})
        return {"columns": [t.value for t in column_order], "rows": rows}

    def render_table2(self) -> str:
        data = self.stats_table2()
        headers = ["Platform"] + [c.title() for c in data["columns"]]
        body = [
            [row["platform"]] + [row["cells"][c] for c in data["columns"]]
            for row in data["rows"]
        ]
        widths = [max(len(r[i]) for r in [headers] + body) for i in range(len(headers))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
        lines.append("  ".join("-" * w for w in widths))
        for r in body:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def distribution(self):
        return distribution_report(self.registry)

    def export_ndjson(self, window: Interval | None = None) -> Iterable[str]:
        """Unified posts as one JSON document per line, ordered by post id."""
        docs = sorted(self.engine.iter_docs(), key=lambda d: d["post_id"])
        for doc in docs:
            if window is not None:
                day = date.fromisoformat(doc["published_at"][:10])
                if not window.contains_day(day):
                    continue
            yield json.dumps(doc, sort_keys=True, ensure_ascii=False)

    def export_csv(self, window: Interval | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([
            "post_id", "platform", "seed_id", "published_at", "collected_at",
            "likes", "shares", "comments", "views", "text",
        ])
        for line in self.export_ndjson(window):
            doc = json.loads(line)
            eng = doc["engagement"]
            writer.writerow([
                doc["post_id"], doc["platform"], doc["seed_id"],
                doc["published_at"], doc["collected_at"],
                eng.get("likes"), eng.get("shares"), eng.get("comments"), eng.get("views"),
                doc["text"],
            ])
        return buf.getvalue()

    def metrics_snapshot(self) -> dict[str, float]:
        """Flat counter/gauge map; cross-module gauges computed live."""
        snap = self.metrics.snapshot()
        snap["backfill_pending"] = self.backfills.pending_count()
        snap["backfill_abandoned"] = self.backfills.abandoned_count()
        snap["quarantine_count"] = self.normalizer.quarantine_count()
        snap["indexed_documents"] = self.engine.document_count()
        snap["registry_entities"] = len(self.registry)
        return snap

    def posts(self) -> list[UnifiedPost]:
        return [UnifiedPost.from_doc(d) for d in self.engine.iter_docs()]
