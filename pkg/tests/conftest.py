"""Shared fixtures: a small deterministic registry and scenario."""

from __future__ import annotations

import io
from datetime import date, datetime, timezone

import pytest

from meo.ledger import Interval
from meo.orchestrator import ManualClock
from meo.platforms import MainType, Platform
from meo.scenarios import PlantedDrop, PlantedGap, ScenarioSpec, build_scenario
from meo.seeds import SeedRegistry

HEADER = (
    "id,name,main_type,sub_type,federal_party,provincial_party,province,riding,"
    "country,platform,handle,verified,followers,following,collection_tags"
)

SMALL_SEED_ROWS = [
    "mp-001,Alice Ahern,politician,,Liberal Party of Canada,,Ontario,Ottawa Centre,,x_twitter,alice_mp,true,12000,300,core",
    "mp-001,Alice Ahern,politician,,Liberal Party of Canada,,Ontario,Ottawa Centre,,instagram,alice_mp_ig,true,8000,150,core",
    "mp-002,Bob Brandt,politician,,Conservative Party of Canada,,Alberta,Calgary Heritage,,x_twitter,bob_mp,true,9000,200,core",
    "mp-003,Carol Cyr,politician,,New Democratic Party,,Manitoba,Winnipeg North,,x_twitter,carol_mp,false,4000,90,core",
    "mp-004,Dev Dhillon,politician,,Green Party of Canada,,British Columbia,Victoria,,tiktok,dev_mp,true,15000,400,core",
    "news-001,Maple Times,news,national,,,,,,x_twitter,mapletimes,true,80000,20,media",
    "news-002,Prairie Post,news,local,,,Manitoba,,,facebook,prairiepost,true,20000,10,media",
    "inf-001,Quinn Q,influencer,commentary,,,,,,tiktok,quinnq,true,50000,1000,watch",
]


@pytest.fixture
def seed_csv_text() -> str:
    return HEADER + "\n" + "\n".join(SMALL_SEED_ROWS) + "\n"


@pytest.fixture
def small_registry(seed_csv_text) -> SeedRegistry:
    registry = SeedRegistry()
    report = registry.import_seeds(io.StringIO(seed_csv_text))
    assert not report.rejected, report.rejected
    return registry


SMALL_WINDOW = Interval(date(2024, 1, 1), date(2024, 2, 1))


def small_spec(**overrides) -> ScenarioSpec:
    base = dict(
        rng_seed=11,
        window=(SMALL_WINDOW.start, SMALL_WINDOW.end),
        platforms=[Platform.TIKTOK, Platform.YOUTUBE, Platform.X_TWITTER],
        seeds_per_type={MainType.NEWS: 2, MainType.POLITICIAN: 3, MainType.INFLUENCER: 2},
        posts_per_seed=12,
    )
    base.update(overrides)
    return ScenarioSpec(**base)


@pytest.fixture(scope="session")
def small_scenario():
    return build_scenario(small_spec())


@pytest.fixture
def manual_clock() -> ManualClock:
    return ManualClock(datetime(2024, 3, 1, tzinfo=timezone.utc))
