"""Configuration: one YAML file plus MEO_* environment overrides.

Defaults are conservative and fully usable without a file; anything present
in the file overrides them, and a handful of environment variables override
the file (MEO_STORAGE_ROOT, MEO_API_TOKENS, MEO_SCENARIO, MEO_PAGE_SIZE,
MEO_JOB_THRESHOLD).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .platforms import Platform

# crawl cadence defaults, in days; None disables scheduled crawling
DEFAULT_CADENCE_DAYS: dict[Platform, float | None] = {
    Platform.X_TWITTER: 3.5,  # twice weekly
    Platform.INSTAGRAM: 7.0,
    Platform.YOUTUBE: 1.0,
    Platform.TIKTOK: 7.0,
    Platform.FACEBOOK: None,  # collection paused by default
    Platform.TELEGRAM: 7.0,
    Platform.BLUESKY: 1.0,
}

DEFAULT_RATE_PER_MINUTE = 60.0


@dataclass
class PlatformConfig:
    cadence_days: float | None
    rate_per_minute: float = DEFAULT_RATE_PER_MINUTE
    enabled: bool = True

    def validate(self, platform: Platform) -> None:
        if self.rate_per_minute <= 0:
            raise ConfigError(f"{platform.value}: rate must be positive")
        if self.cadence_days is not None and self.cadence_days <= 0:
            raise ConfigError(f"{platform.value}: cadence must be positive")


@dataclass
class Config:
    storage_root: Path = Path("./meo-data")
    platforms: dict[Platform, PlatformConfig] = field(default_factory=dict)
    page_size: int = 100
    embedding_dim: int = 256
    api_tokens: list[str] = field(default_factory=list)
    job_threshold: int = 10_000  # analysis requests above this size run as jobs
    backoff_initial: float = 1.0
    backoff_cap: float = 60.0
    scenario_path: Path | None = None

    def validate(self) -> None:
        if self.page_size < 1:
            raise ConfigError("page_size must be >= 1")
        if self.embedding_dim < 2:
            raise ConfigError("embedding_dim must be >= 2")
        for platform, pc in self.platforms.items():
            pc.validate(platform)

    def platform(self, platform: Platform) -> PlatformConfig:
        return self.platforms[platform]


def _default_platforms() -> dict[Platform, PlatformConfig]:
    return {
        p: PlatformConfig(
            cadence_days=DEFAULT_CADENCE_DAYS[p],
            enabled=DEFAULT_CADENCE_DAYS[p] is not None,
        )
        for p in Platform
    }


def load_config(path: str | Path | None = None, env: dict | None = None) -> Config:
    env = env if env is not None else dict(os.environ)
    cfg = Config(platforms=_default_platforms())

    raw: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None

    storage = raw.get("storage", {})
    if "root" in storage:
        cfg.storage_root = Path(storage["root"])
    for token, pc_raw in (raw.get("platforms") or {}).items():
        try:
            platform = Platform(token)
        except ValueError:
            raise ConfigError(f"unknown platform in config: {token!r}") from None
        pc = cfg.platforms[platform]
        if pc_raw is None:
            continue
        if "cadence_days" in pc_raw:
            pc.cadence_days = (
                None if pc_raw["cadence_days"] is None else float(pc_raw["cadence_days"])
            )
        if "rate_per_minute" in pc_raw:
            pc.rate_per_minute = float(pc_raw["rate_per_minute"])
        if "enabled" in pc_raw:
            pc.enabled = bool(pc_raw["enabled"])
    pipeline = raw.get("pipeline", {})
    if "page_size" in pipeline:
        cfg.page_size = int(pipeline["page_size"])
    if "backoff_initial" in pipeline:
        cfg.backoff_initial = float(pipeline["backoff_initial"])
    if "backoff_cap" in pipeline:
        cfg.backoff_cap = float(pipeline["backoff_cap"])
    index = raw.get("index", {})
    if "embedding_dim" in index:
        cfg.embedding_dim = int(index["embedding_dim"])
    api = raw.get("api", {})
    if "tokens" in api:
        cfg.api_tokens = [str(t) for t in api["tokens"]]
    if "job_threshold" in api:
        cfg.job_threshold = int(api["job_threshold"])
    if "scenario" in raw and raw["scenario"]:
        cfg.scenario_path = Path(raw["scenario"])

    # environment overrides
    if env.get("MEO_STORAGE_ROOT"):
        cfg.storage_root = Path(env["MEO_STORAGE_ROOT"])
    if env.get("MEO_API_TOKENS"):
        cfg.api_tokens = [t for t in env["MEO_API_TOKENS"].split(",") if t]
    if env.get("MEO_SCENARIO"):
        cfg.scenario_path = Path(env["MEO_SCENARIO"])
    if env.get("MEO_PAGE_SIZE"):
        cfg.page_size = int(env["MEO_PAGE_SIZE"])
    if env.get("MEO_JOB_THRESHOLD"):
        cfg.job_threshold = int(env["MEO_JOB_THRESHOLD"])

    cfg.validate()
    return cfg
