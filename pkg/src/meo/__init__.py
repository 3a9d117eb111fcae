"""meo: a desk-scale media ecosystem observatory.

Collects posts from deterministic mock platform sources, preserves raw
payloads in a content-addressed store, normalizes them into a unified
cross-platform model, indexes them lexically and semantically, tracks crawl
coverage with gap detection and backfill, and exposes query, analysis, and
operations surfaces over REST and a CLI.
"""

from .config import Config, load_config
from .indexing import Fusion, HybridQuery, IndexEngine, SearchFilters, tokenize
from .ledger import BackfillQueue, CrawlLedger, CrawlRun, Interval
from .normalize import Normalizer, UnifiedPost, load_default_rules
from .observatory import Observatory
from .orchestrator import ManualClock, Metrics, Pipeline, Scheduler, SystemClock
from .platforms import MainType, Platform
from .rawstore import RawStore
from .seeds import SeedRegistry, distribution_report
from .scenarios import Scenario, ScenarioSpec, build_scenario

__version__ = "0.1.0"

__all__ = [
    "BackfillQueue",
    "Config",
    "CrawlLedger",
    "CrawlRun",
    "Fusion",
    "HybridQuery",
    "IndexEngine",
    "Interval",
    "MainType",
    "ManualClock",
    "Metrics",
    "Normalizer",
    "Observatory",
    "Pipeline",
    "Platform",
    "RawStore",
    "Scenario",
    "ScenarioSpec",
    "Scheduler",
    "SearchFilters",
    "SeedRegistry",
    "SystemClock",
    "UnifiedPost",
    "build_scenario",
    "distribution_report",
    "load_config",
    "load_default_rules",
    "tokenize",
]
