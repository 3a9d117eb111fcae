"""Crawl ledger: interval algebra vs day-set oracle, coverage, backfills."""

from __future__ import annotations

import random
from datetime import date, datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meo.errors import MalformedRunError, NotFoundError
from meo.ledger import (
    BackfillQueue,
    CrawlLedger,
    CrawlRun,
    Interval,
    RunStatus,
    new_run_id,
    normalize_intervals,
    subtract_intervals,
    union_intervals,
)
from meo.oracles import oracle_coverage_days, oracle_gaps
from meo.platforms import Platform

JAN1 = date(2024, 1, 1)
JAN10 = date(2024, 1, 10)
JAN11 = date(2024, 1, 11)
JAN20 = date(2024, 1, 20)
FEB1 = date(2024, 2, 1)
NOW = datetime(2024, 3, 1, tzinfo=timezone.utc)


def run_for(covered, window=Interval(JAN1, FEB1), status=RunStatus.SUCCESS,
            platform=Platform.TIKTOK, handle="h") -> CrawlRun:
    return CrawlRun(
        run_id=new_run_id(), platform=platform, handle=handle, window=window,
        status=status, covered=covered, started_at=NOW, finished_at=NOW,
    )


class TestIntervalAlgebra:
    def test_merge_adjacent(self):
        merged = union_intervals([Interval(JAN1, JAN10)], [Interval(JAN10, JAN20)])
        assert merged == [Interval(JAN1, JAN20)]

    def test_merge_overlapping(self):
        merged = normalize_intervals([Interval(JAN1, JAN11), Interval(JAN10, JAN20)])
        assert merged == [Interval(JAN1, JAN20)]

    def test_disjoint_stay_separate(self):
        merged = normalize_intervals([Interval(JAN11, JAN20), Interval(JAN1, JAN10)])
        assert merged == [Interval(JAN1, JAN10), Interval(JAN11, JAN20)]

    def test_complement_example(self):
        gaps = subtract_intervals(
            Interval(JAN1, FEB1), [Interval(JAN1, JAN11), Interval(JAN20, FEB1)]
        )
        assert gaps == [Interval(JAN11, JAN20)]

    def test_empty_interval_rejected(self):
        with pytest.raises(ValueError):
            normalize_intervals([Interval(JAN10, JAN10)])

    @given(st.lists(
        st.tuples(st.integers(0, 60), st.integers(1, 14)), min_size=0, max_size=8
    ))
    @settings(max_examples=100, deadline=None)
    def test_subtract_matches_day_oracle(self, raw):
        window = Interval(JAN1, FEB1)
        covered = [
            Interval(JAN1 + timedelta(days=o), JAN1 + timedelta(days=o + n))
            for o, n in raw
        ]
        got = subtract_intervals(window, covered)
        expected = oracle_gaps((window.start, window.end), [covered])
        assert [(iv.start, iv.end) for iv in got] == expected


class TestCoverage:
    def test_first_run_sets_coverage(self):
        ledger = CrawlLedger()
        coverage = ledger.record_run(run_for([Interval(JAN1, JAN10)]))
        assert coverage == [Interval(JAN1, JAN10)]

    def test_adjacent_runs_merge(self):
        ledger = CrawlLedger()
        ledger.record_run(run_for([Interval(JAN1, JAN10)]))
        coverage = ledger.record_run(run_for([Interval(JAN10, JAN20)]))
        assert coverage == [Interval(JAN1, JAN20)]

    def test_failed_run_contributes_nothing(self):
        ledger = CrawlLedger()
        ledger.record_run(run_for([Interval(JAN1, JAN10)], status=RunStatus.FAILED))
        assert ledger.coverage(Platform.TIKTOK, "h") == []
        assert len(ledger.runs()) == 1  # still journaled

    def test_overlapping_covered_list_rejected(self):
        with pytest.raises(MalformedRunError):
            CrawlLedger().record_run(
                run_for([Interval(JAN1, JAN11), Interval(JAN10, JAN20)])
            )

    def test_covered_outside_window_rejected(self):
        with pytest.raises(MalformedRunError):
            CrawlLedger().record_run(
                run_for([Interval(JAN1, JAN10)], window=Interval(JAN11, FEB1))
            )

    def test_idempotent_rerecord(self):
        ledger = CrawlLedger()
        run = run_for([Interval(JAN1, JAN10)])
        first = ledger.record_run(run)
        second = ledger.record_run(run)
        assert first == second

    def test_monotone_growth(self):
        ledger = CrawlLedger()
        rng = random.Random(5)
        seen_days: set = set()
        for _ in range(50):
            o = rng.randrange(0, 25)
            n = rng.randrange(1, 6)
            iv = Interval(JAN1 + timedelta(days=o), JAN1 + timedelta(days=o + n))
            coverage = ledger.record_run(run_for([iv]))
            days = oracle_coverage_days([[(c.start, c.end) for c in coverage]])
            assert seen_days <= days
            seen_days = days

    def test_random_runs_match_day_set_oracle(self):
        rng = random.Random(99)
        for _ in range(100):
            ledger = CrawlLedger()
            all_covered = []
            for _ in range(rng.randrange(0, 12)):
                o = rng.randrange(0, 40)
                n = rng.randrange(1, 10)
                iv = Interval(JAN1 + timedelta(days=o), JAN1 + timedelta(days=o + n))
                ledger.record_run(run_for([iv], window=Interval(JAN1, JAN1 + timedelta(days=60))))
                all_covered.append([(iv.start, iv.end)])
            window = Interval(JAN1, FEB1)
            got = ledger.detect_gaps(Platform.TIKTOK, "h", window)
            expected = oracle_gaps((window.start, window.end), all_covered)
            assert [(g.start, g.end) for g in got] == expected

    def test_no_runs_whole_window_is_gap(self):
        ledger = CrawlLedger()
        assert ledger.detect_gaps(Platform.TIKTOK, "h", Interval(JAN1, FEB1)) == [
            Interval(JAN1, FEB1)
        ]

    def test_gap_coverage_partition(self):
        ledger = CrawlLedger()
        ledger.record_run(run_for([Interval(JAN1, JAN11), Interval(JAN20, FEB1)]))
        window = Interval(JAN1, FEB1)
        gaps = ledger.detect_gaps(Platform.TIKTOK, "h", window)
        covered = ledger.coverage(Platform.TIKTOK, "h")
        gap_days = oracle_coverage_days([[(g.start, g.end) for g in gaps]])
        cov_days = oracle_coverage_days([[(c.start, c.end) for c in covered]])
        window_days = oracle_coverage_days([[(window.start, window.end)]])
        assert gap_days | (cov_days & window_days) == window_days
        assert gap_days & cov_days == set()
        assert len(gap_days) + len(cov_days & window_days) == len(window_days)

    def test_journal_replay(self, tmp_path):
        path = tmp_path / "runs.ndjson"
        ledger = CrawlLedger(path)
        ledger.record_run(run_for([Interval(JAN1, JAN10)]))
        ledger.record_run(run_for([Interval(JAN20, FEB1)]))

        replayed = CrawlLedger(path)
        assert replayed.coverage(Platform.TIKTOK, "h") == ledger.coverage(Platform.TIKTOK, "h")
        assert len(replayed.runs()) == 2


class TestBackfillQueue:
    def test_priorities_older_first(self):
        queue = BackfillQueue()
        tasks = queue.emit(Platform.TIKTOK, "h",
                           [Interval(JAN11, JAN20), Interval(JAN1, JAN10)], now=NOW)
        assert len(tasks) == 2
        claimed = queue.claim()
        assert claimed.gap == Interval(JAN1, JAN10)  # older gap first
        assert claimed.priority > queue.claim().priority

    def test_reemit_suppressed(self):
        queue = BackfillQueue()
        first = queue.emit(Platform.TIKTOK, "h", [Interval(JAN1, JAN10)], now=NOW)
        second = queue.emit(Platform.TIKTOK, "h", [Interval(JAN1, JAN10)], now=NOW)
        assert len(first) == 1
        assert second == []

    def test_lifecycle_complete(self):
        queue = BackfillQueue()
        (task,) = queue.emit(Platform.TIKTOK, "h", [Interval(JAN1, JAN10)], now=NOW)
        claimed = queue.claim()
        assert claimed.task_id == task.task_id
        queue.complete(task.task_id)
        assert queue.pending_count() == 0
        assert queue.claim() is None

    def test_abandon_after_five_failures(self):
        queue = BackfillQueue()
        (task,) = queue.emit(Platform.TIKTOK, "h", [Interval(JAN1, JAN10)], now=NOW)
        for i in range(5):
            claimed = queue.claim()
            assert claimed is not None, f"claim {i} failed"
            queue.fail(claimed.task_id)
        assert queue.claim() is None
        assert queue.abandoned_count() == 1
        assert queue.get(task.task_id).attempts == 5

    def test_unknown_task_raises(self):
        with pytest.raises(NotFoundError):
            BackfillQueue().complete("bf-999999")

    def test_state_persistence(self, tmp_path):
        path = tmp_path / "tasks.json"
        queue = BackfillQueue(path)
        queue.emit(Platform.TIKTOK, "h", [Interval(JAN1, JAN10)], now=NOW)
        queue.claim()

        reloaded = BackfillQueue(path)
        assert reloaded.pending_count() == 0
        assert len(reloaded.tasks()) == 1
        # dedup survives restart
        assert reloaded.emit(Platform.TIKTOK, "h", [Interval(JAN1, JAN10)], now=NOW) == []

    def test_gap_must_not_intersect_coverage_at_creation(self):
        # emitting from detect_gaps guarantees this; double-check the loop
        ledger = CrawlLedger()
        ledger.record_run(run_for([Interval(JAN1, JAN11)]))
        gaps = ledger.detect_gaps(Platform.TIKTOK, "h", Interval(JAN1, FEB1))
        queue = BackfillQueue()
        for task in queue.emit(Platform.TIKTOK, "h", gaps, now=NOW):
            for c in ledger.coverage(Platform.TIKTOK, "h"):
                assert task.gap.end <= c.start or task.gap.start >= c.end
