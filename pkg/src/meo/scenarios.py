"""Deterministic end-to-end scenario builder for verification runs.

A ScenarioSpec fully determines (given its rng seed) a seed registry, one
mock platform server per platform, and an expected-values ledger holding the
ground truth the scenario planted: per-handle post counts, malformed-payload
counts, coverage gaps, and engagement drops with their realized magnitudes.
Assertion suites compare pipeline output against this ledger.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from datetime import date, datetime, time, timezone
from io import StringIO
from pathlib import Path

import yaml

from .ledger import CrawlLedger, CrawlRun, Interval, RunStatus, new_run_id, subtract_intervals
from .mockserver import MockPlatformServer, _native_id_of, _published_at_of, generate_datasets
from .normalize import load_default_rules
from .platforms import MainType, Platform
from .seeds import CSV_COLUMNS, SeedRegistry
from .util import stable_hash64, utcnow

_PROVINCES = ["Ontario", "Quebec", "British Columbia", "Alberta", "Manitoba", "Nova Scotia"]
_PARTIES = [
    "Liberal Party of Canada", "Conservative Party of Canada",
    "New Democratic Party", "Bloc Québécois", "Green Party of Canada",
]
_COUNTRIES = ["USA", "Russia", "India", "China"]


@dataclass(frozen=True)
class PlantedDrop:
    platform: Platform
    main_type: MainType
    sub_type: str | None
    metric: str
    pct: float  # e.g. -64.0
    cutover: date
    base: int = 1000


@dataclass(frozen=True)
class PlantedGap:
    platform: Platform
    handle: str
    start: date
    end: date


@dataclass
class ScenarioSpec:
    rng_seed: int
    window: tuple[date, date]
    platforms: list[Platform]
    seeds_per_type: dict[MainType, int]
    posts_per_seed: int | dict[MainType, int] = 20
    planted_drops: list[PlantedDrop] = field(default_factory=list)
    planted_gaps: list[PlantedGap] = field(default_factory=list)
    malformed_per_platform: int = 0
    empty_text_rate: float = 0.02
    probe_text: str | None = None

    def posts_for(self, main_type: MainType) -> int:
        if isinstance(self.posts_per_seed, dict):
            return self.posts_per_seed.get(main_type, 0)
        return self.posts_per_seed

    def to_dict(self) -> dict:
        posts = self.posts_per_seed
        if isinstance(posts, dict):
            posts = {k.value: v for k, v in posts.items()}
        return {
            "rng_seed": self.rng_seed,
            "window": [self.window[0].isoformat(), self.window[1].isoformat()],
            "platforms": [p.value for p in self.platforms],
            "seeds_per_type": {k.value: v for k, v in self.seeds_per_type.items()},
            "posts_per_seed": posts,
            "planted_drops": [
                {
                    "platform": d.platform.value,
                    "main_type": d.main_type.value,
                    "sub_type": d.sub_type,
                    "metric": d.metric,
                    "pct": d.pct,
                    "cutover": d.cutover.isoformat(),
                    "base": d.base,
                }
                for d in self.planted_drops
            ],
            "planted_gaps": [
                {
                    "platform": g.platform.value,
                    "handle": g.handle,
                    "start": g.start.isoformat(),
                    "end": g.end.isoformat(),
                }
                for g in self.planted_gaps
            ],
            "malformed_per_platform": self.malformed_per_platform,
            "empty_text_rate": self.empty_text_rate,
            "probe_text": self.probe_text,
        }

    def to_yaml(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8")

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ScenarioSpec":
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        posts = raw.get("posts_per_seed", 20)
        if isinstance(posts, dict):
            posts = {MainType(k): int(v) for k, v in posts.items()}
        return cls(
            rng_seed=int(raw["rng_seed"]),
            window=(date.fromisoformat(raw["window"][0]), date.fromisoformat(raw["window"][1])),
            platforms=[Platform(p) for p in raw["platforms"]],
            seeds_per_type={MainType(k): int(v) for k, v in raw["seeds_per_type"].items()},
            posts_per_seed=posts,
            planted_drops=[
                PlantedDrop(
                    platform=Platform(d["platform"]),
                    main_type=MainType(d["main_type"]),
                    sub_type=d.get("sub_type"),
                    metric=d["metric"],
                    pct=float(d["pct"]),
                    cutover=date.fromisoformat(d["cutover"]),
                    base=int(d.get("base", 1000)),
                )
                for d in raw.get("planted_drops", [])
            ],
            planted_gaps=[
                PlantedGap(
                    platform=Platform(g["platform"]),
                    handle=g["handle"],
                    start=date.fromisoformat(g["start"]),
                    end=date.fromisoformat(g["end"]),
                )
                for g in raw.get("planted_gaps", [])
            ],
            malformed_per_platform=int(raw.get("malformed_per_platform", 0)),
            empty_text_rate=float(raw.get("empty_text_rate", 0.02)),
            probe_text=raw.get("probe_text"),
        )


@dataclass
class Scenario:
    spec: ScenarioSpec
    registry: SeedRegistry
    servers: dict[Platform, MockPlatformServer]
    expected: dict
    seed_csv: str

    def apply_gap_runs(self, ledger: CrawlLedger, now: datetime | None = None) -> None:
        """Record synthetic successful runs covering the window minus the
        planted gaps, so gap detection has something to detect against."""
        now = now or utcnow()
        window = Interval(*self.spec.window)
        by_key: dict[tuple[Platform, str], list[Interval]] = {}
        for gap in self.spec.planted_gaps:
            by_key.setdefault((gap.platform, gap.handle), []).append(
                Interval(gap.start, gap.end)
            )
        for (platform, handle), gaps in sorted(by_key.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            covered = subtract_intervals(window, gaps)
            ledger.record_run(CrawlRun(
                run_id=new_run_id(),
                platform=platform,
                handle=handle,
                window=window,
                status=RunStatus.PARTIAL,
                covered=covered,
                counts={},
                started_at=now,
                finished_at=now,
            ))


def _seed_rows(spec: ScenarioSpec, rng: random.Random) -> list[list[str]]:
    rows = []
    for main_type in MainType:
        count = spec.seeds_per_type.get(main_type, 0)
        for i in range(count):
            seed_id = f"{main_type.value}{i:03d}"
            sub_type = ""
            province = ""
            federal_party = ""
            riding = ""
            country = ""
            if main_type is MainType.NEWS:
                sub_type = "local" if i % 2 else "national"
                if sub_type == "local":
                    province = _PROVINCES[i % len(_PROVINCES)]
            elif main_type is MainType.POLITICIAN:
                province = _PROVINCES[i % len(_PROVINCES)]
                federal_party = _PARTIES[i % len(_PARTIES)]
                riding = f"Riding {i:03d}"
            elif main_type is MainType.FOREIGN:
                country = _COUNTRIES[i % len(_COUNTRIES)]
            for platform in spec.platforms:
                followers = rng.randrange(5_000, 300_000)
                rows.append([
                    seed_id,
                    f"{main_type.value.title()} {i:03d}",
                    main_type.value,
                    sub_type,
                    federal_party,
                    "",
                    province,
                    riding,
                    country,
                    platform.value,
                    f"{seed_id}_{platform.value}",
                    "true",
                    str(followers),
                    str(followers // 4),
                    f"core;{main_type.value}",
                ])
    return rows


def _set_path(doc: dict, path: str, value) -> None:
    parts = path.split(".")
    current = doc
    for part in parts[:-1]:
        current = current[part]
    old = current.get(parts[-1])
    current[parts[-1]] = str(value) if isinstance(old, str) else value


def build_scenario(spec: ScenarioSpec) -> Scenario:
    """Materialize registry, mock servers, and the expected-values ledger."""
    if not spec.platforms:
        raise ValueError("scenario needs at least one platform")
    rng = random.Random(stable_hash64(f"scenario:{spec.rng_seed}"))
    rules = load_default_rules()

    rows = _seed_rows(spec, rng)
    buf = StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(row) + "\n")
    seed_csv = buf.getvalue()

    registry = SeedRegistry()
    report = registry.import_seeds(StringIO(seed_csv))
    if report.rejected:
        raise ValueError(f"scenario seed rows rejected: {report.rejected[:3]}")

    window_dt = (
        datetime.combine(spec.window[0], time(0), tzinfo=timezone.utc),
        datetime.combine(spec.window[1], time(0), tzinfo=timezone.utc),
    )

    drops_by_platform: dict[Platform, list[PlantedDrop]] = {}
    for drop in spec.planted_drops:
        drops_by_platform.setdefault(drop.platform, []).append(drop)

    servers: dict[Platform, MockPlatformServer] = {}
    expected: dict = {
        "post_counts": {},
        "total_posts": 0,
        "malformed": {},
        "gaps": [
            {"platform": g.platform.value, "handle": g.handle,
             "start": g.start.isoformat(), "end": g.end.isoformat()}
            for g in spec.planted_gaps
        ],
        "drops": [],
    }
    drop_values: dict[int, tuple[list[int], list[int]]] = {
        i: ([], []) for i in range(len(spec.planted_drops))
    }

    for platform in spec.platforms:
        handle_types = {}
        for entity in registry.entities():
            if platform in entity.handles:
                handle = entity.handles[platform].handle
                handle_types[handle] = entity
        per_handle_counts = {
            handle: spec.posts_for(entity.main_type)
            for handle, entity in handle_types.items()
        }
        datasets = generate_datasets(
            platform,
            sorted(per_handle_counts),
            per_handle_counts,
            spec.rng_seed,
            window=window_dt,
            empty_text_rate=spec.empty_text_rate,
        )
        records: dict[str, list[tuple[str, datetime, dict]]] = {
            handle: [
                (_native_id_of(platform, doc), _published_at_of(platform, doc), doc)
                for doc in docs
            ]
            for handle, docs in datasets.items()
        }

        # plant engagement drops
        for drop_idx, drop in enumerate(spec.planted_drops):
            if drop.platform is not platform:
                continue
            metric_path = rules[platform].engagement_paths.get(drop.metric)
            if metric_path is None:
                raise ValueError(f"platform {platform} does not expose metric {drop.metric}")
            for handle, entity in sorted(handle_types.items()):
                if entity.main_type is not drop.main_type:
                    continue
                if drop.sub_type is not None and entity.sub_type != drop.sub_type:
                    continue
                for native_id, ts, doc in records[handle]:
                    drop_rng = random.Random(
                        stable_hash64(f"{spec.rng_seed}:drop:{drop_idx}:{native_id}")
                    )
                    level = drop.base * (1.0 + drop.pct / 100.0) if ts.date() >= drop.cutover else drop.base
                    value = max(0, round(level * drop_rng.uniform(0.9, 1.1)))
                    _set_path(doc, metric_path, value)
                    before, after = drop_values[drop_idx]
                    (after if ts.date() >= drop.cutover else before).append(value)

        # plant malformed timestamps on the first handle's oldest docs
        malformed = 0
        if spec.malformed_per_platform > 0 and records:
            first_handle = sorted(records)[0]
            ordered = sorted(records[first_handle], key=lambda rec: (rec[1], rec[0]))
            for native_id, ts, doc in ordered[: spec.malformed_per_platform]:
                _set_path(doc, rules[platform].published_at_path, "malformed")
                malformed += 1
        expected["malformed"][platform.value] = malformed

        for handle, recs in sorted(records.items()):
            expected["post_counts"][f"{platform.value}:{handle}"] = len(recs)
            expected["total_posts"] += len(recs)

        servers[platform] = MockPlatformServer.from_records(platform, records)

    for drop_idx, drop in enumerate(spec.planted_drops):
        before, after = drop_values[drop_idx]
        mean_before = sum(before) / len(before) if before else 0.0
        mean_after = sum(after) / len(after) if after else 0.0
        realized = (
            (mean_after - mean_before) / mean_before * 100.0 if mean_before else float("nan")
        )
        expected["drops"].append({
            "platform": drop.platform.value,
            "main_type": drop.main_type.value,
            "sub_type": drop.sub_type,
            "metric": drop.metric,
            "planted_pct": drop.pct,
            "cutover": drop.cutover.isoformat(),
            "mean_before": mean_before,
            "mean_after": mean_after,
            "realized_pct": realized,
        })

    if spec.probe_text is not None:
        expected["probe"] = _probe_neighbours(spec, servers, rules)

    return Scenario(
        spec=spec, registry=registry, servers=servers, expected=expected, seed_csv=seed_csv
    )


def _probe_neighbours(spec, servers, rules, k: int = 5) -> dict:
    """True top-k semantic neighbours of the probe text, by exhaustive scan."""
    from .indexing import HashingEmbedder
    from .normalize import extract_path
    from .oracles import oracle_knn

    embedder = HashingEmbedder()
    vectors = {}
    for platform, server in sorted(servers.items(), key=lambda kv: kv[0].value):
        for handle in server.handles():
            docs, cursor = server.query(handle, datetime(1970, 1, 2, tzinfo=timezone.utc),
                                        datetime(2100, 1, 1, tzinfo=timezone.utc), None, 10_000)
            for doc in docs:
                pieces = []
                for path in rules[platform].text_paths:
                    value = extract_path(doc, path)
                    if value is not None and not isinstance(value, (dict, list)):
                        pieces.append(str(value))
                text = "\n".join(pieces)
                vec = embedder.embed(text)
                if vec is not None:
                    post_id = f"{platform.value}:{_native_id_of(platform, doc)}"
                    vectors[post_id] = [float(x) for x in vec]
    query = embedder.embed(spec.probe_text)
    neighbours = oracle_knn(vectors, [float(x) for x in query], k) if query is not None else []
    return {
        "text": spec.probe_text,
        "k": k,
        "neighbours": [{"post_id": pid, "cosine": score} for pid, score in neighbours],
    }
