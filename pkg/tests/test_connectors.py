"""Connector contracts: pagination, cursors, throttling, HTTP wire format."""

from __future__ import annotations

import hashlib
from datetime import datetime, timedelta, timezone

import pytest

from meo.connectors import (
    FetchRequest,
    HttpConnector,
    MockConnector,
    ThrottlePolicy,
    TokenBucket,
    decode_cursor,
    encode_cursor,
)
from meo.errors import NotFoundError, RetryableError, ThrottledError
from meo.mockserver import MockHttpService, MockPlatformServer, generate_datasets
from meo.platforms import Platform

WINDOW = (
    datetime(2024, 1, 1, tzinfo=timezone.utc),
    datetime(2024, 2, 1, tzinfo=timezone.utc),
)


@pytest.fixture(scope="module")
def tiktok_server() -> MockPlatformServer:
    datasets = generate_datasets(Platform.TIKTOK, ["acct_a", "acct_b"], 5, rng_seed=3,
                                 window=WINDOW, empty_text_rate=0.0)
    return MockPlatformServer(Platform.TIKTOK, datasets)


def _connector(server, clock_dt=None):
    clock_dt = clock_dt or datetime(2024, 3, 1, tzinfo=timezone.utc)
    return MockConnector({Platform.TIKTOK: server}, clock=lambda: clock_dt)


class TestFetchRequest:
    def test_window_must_be_ordered(self):
        with pytest.raises(ValueError, match="before end"):
            FetchRequest(Platform.TIKTOK, "a", WINDOW[1], WINDOW[0])

    def test_page_size_positive(self):
        with pytest.raises(ValueError, match="page_size"):
            FetchRequest(Platform.TIKTOK, "a", WINDOW[0], WINDOW[1], page_size=0)


class TestCursor:
    def test_roundtrip(self):
        ts = datetime(2024, 1, 5, 12, 30, tzinfo=timezone.utc)
        native_id, decoded_ts = decode_cursor(encode_cursor("post-9", ts))
        assert native_id == "post-9"
        assert decoded_ts == ts

    def test_malformed_cursor_rejected(self):
        with pytest.raises(ValueError, match="malformed cursor"):
            decode_cursor("!!!not-base64!!!")


class TestPagination:
    def test_five_posts_page_size_two(self, tiktok_server):
        conn = _connector(tiktok_server)
        sizes = []
        cursor = None
        while True:
            page = conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW,
                                           cursor=cursor, page_size=2))
            sizes.append(len(page.payloads))
            if page.next_cursor is None:
                break
            cursor = page.next_cursor
        assert sizes == [2, 2, 1]

    def test_window_before_first_post_is_empty(self, tiktok_server):
        conn = _connector(tiktok_server)
        page = conn.fetch(FetchRequest(
            Platform.TIKTOK, "acct_a",
            datetime(2020, 1, 1, tzinfo=timezone.utc),
            datetime(2020, 2, 1, tzinfo=timezone.utc),
        ))
        assert page.payloads == []
        assert page.next_cursor is None

    def test_pages_partition_the_window(self, tiktok_server):
        conn = _connector(tiktok_server)
        full = conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW, page_size=100))
        paged: list[bytes] = []
        cursor = None
        while True:
            page = conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW,
                                           cursor=cursor, page_size=2))
            paged.extend(page.payloads)
            if page.next_cursor is None:
                break
            cursor = page.next_cursor
        assert paged == full.payloads  # no loss, no duplication, same order

    def test_fetch_determinism_byte_identical(self, tiktok_server):
        conn = _connector(tiktok_server)
        a = conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW))
        b = conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW))
        assert a.payloads == b.payloads

    def test_unknown_handle_not_found(self, tiktok_server):
        conn = _connector(tiktok_server)
        with pytest.raises(NotFoundError):
            conn.fetch(FetchRequest(Platform.TIKTOK, "ghost", *WINDOW))

    def test_collected_at_comes_from_connector_clock(self, tiktok_server):
        stamp = datetime(2024, 6, 15, tzinfo=timezone.utc)
        conn = _connector(tiktok_server, clock_dt=stamp)
        page = conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW))
        assert page.collected_at == stamp


class TestThrottle:
    def test_default_policy_numbers(self):
        policy = ThrottlePolicy()
        assert policy.max_requests_per_minute == 60
        assert [policy.backoff_delay(n) for n in (1, 2, 3)] == [1.0, 2.0, 4.0]
        assert policy.backoff_delay(30) == 60.0  # capped

    def test_zero_rate_rejected(self):
        with pytest.raises(ValueError, match="rate must be positive"):
            ThrottlePolicy(max_requests_per_minute=0)
        with pytest.raises(ValueError, match="rate must be positive"):
            TokenBucket(0)

    def test_bucket_exhaustion_reports_wait(self):
        t = [0.0]
        bucket = TokenBucket(60, capacity=1, clock=lambda: t[0])
        assert bucket.try_acquire() == 0.0
        wait = bucket.try_acquire()
        assert wait > 0
        t[0] += wait
        assert bucket.try_acquire() == 0.0

    def test_connector_raises_throttled(self, tiktok_server):
        t = [0.0]
        bucket = TokenBucket(60, capacity=1, clock=lambda: t[0])
        conn = MockConnector(
            {Platform.TIKTOK: tiktok_server},
            buckets={Platform.TIKTOK: bucket},
            clock=lambda: datetime(2024, 3, 1, tzinfo=timezone.utc),
        )
        conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW))
        with pytest.raises(ThrottledError) as err:
            conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW))
        assert err.value.retry_after > 0


class TestHttpWire:
    def test_http_matches_in_process_bytes(self, tiktok_server):
        clock_dt = datetime(2024, 3, 1, tzinfo=timezone.utc)
        with MockHttpService({Platform.TIKTOK: tiktok_server}) as svc:
            http_conn = HttpConnector(svc.base_url, clock=lambda: clock_dt)
            direct = _connector(tiktok_server, clock_dt).fetch(
                FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW)
            )
            over_http = http_conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW))
        assert over_http.payloads == direct.payloads
        hashes = {hashlib.sha256(p).hexdigest() for p in direct.payloads}
        assert {hashlib.sha256(p).hexdigest() for p in over_http.payloads} == hashes

    def test_http_unknown_handle_404(self, tiktok_server):
        with MockHttpService({Platform.TIKTOK: tiktok_server}) as svc:
            conn = HttpConnector(svc.base_url)
            with pytest.raises(NotFoundError):
                conn.fetch(FetchRequest(Platform.TIKTOK, "ghost", *WINDOW))

    def test_http_transient_failure_is_retryable(self, tiktok_server):
        with MockHttpService({Platform.TIKTOK: tiktok_server}) as svc:
            conn = HttpConnector(svc.base_url)
            tiktok_server.fail_next(1)
            with pytest.raises(RetryableError):
                conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW))
            page = conn.fetch(FetchRequest(Platform.TIKTOK, "acct_a", *WINDOW))
            assert page.payloads
