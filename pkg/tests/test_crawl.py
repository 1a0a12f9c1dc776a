import json

import pytest
import requests
from hypothesis import given
from hypothesis import strategies as st

from conftest import fixture_endpoints, rev
from forkdiff.crawl import (MediaWikiClient, ResponseCache, TokenBucket, WikiEndpoint, crawl, crawl_page,
                            fetch_history, fetch_monthly_views, load_title_list, match_lineage)
from forkdiff.errors import EmptyInputError, PreconditionError, TransportError
from forkdiff.fixtures import FixtureTransport, fixture_dir
from forkdiff.records import PageRecord, Status


class FakeClock:
    def __init__(self):
        self.now = 0.0
        self.sleeps = []

    def __call__(self):
        return self.now

    def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.now += seconds


def make_client(transport, rate_limit=1000.0, max_retries=5, cache=None, clock=None):
    clock = clock or FakeClock()
    endpoint = WikiEndpoint("http://wiki.test/api.php", "test", rate_limit=rate_limit, max_retries=max_retries)
    return MediaWikiClient(endpoint, transport=transport, cache=cache, clock=clock, sleep=clock.sleep,
                           wall_clock=lambda: 1_700_000_000.0), clock


def site_with_history(n, title="P"):
    revisions = [{"rev_id": i, "parent_id": i - 1, "timestamp": f"2023-01-{i:02d}T00:00:00Z", "user": "U",
                  "comment": "", "content": f"text {i}"} for i in range(1, n + 1)]
    return {"pages": {title: {"revisions": revisions}}}


# -- title list ------------------------------------------------------------------


def test_title_list_dedup(tmp_path):
    path = tmp_path / "titles.txt"
    path.write_text("A\nB\nA\n\n", encoding="utf-8")
    assert load_title_list(path) == ["A", "B"]


def test_empty_title_list(tmp_path):
    path = tmp_path / "titles.txt"
    path.write_text("\n", encoding="utf-8")
    with pytest.raises(EmptyInputError):
        load_title_list(path)


def test_missing_title_file(tmp_path):
    with pytest.raises(OSError):
        load_title_list(tmp_path / "nope.txt")


# -- lineage ---------------------------------------------------------------------


def test_exact_copy_is_duplicated():
    history = [rev(3, 2), rev(2, 1), rev(1, 0)]
    assert match_lineage(history, history) == (Status.DUPLICATED, history[0])


def test_local_edits_on_top_of_upstream():
    upstream = [rev(3, 2), rev(2, 1), rev(1, 0)]
    fork = [rev(101, 100), rev(100, 2), rev(2, 1), rev(1, 0)]
    assert match_lineage(fork, upstream) == (Status.CHANGED, upstream[1])


def test_disjoint_histories():
    assert match_lineage([rev(10, 9)], [rev(3, 2)]) == (Status.CHANGED, None)


def test_same_rev_id_different_parent_does_not_match():
    assert match_lineage([rev(3, 1)], [rev(3, 2)]) == (Status.CHANGED, None)


def test_empty_fork_history():
    with pytest.raises(PreconditionError):
        match_lineage([], [rev(1, 0)])


pairs = st.lists(st.tuples(st.integers(1, 30), st.integers(0, 30)).filter(lambda p: p[0] != p[1]),
                 min_size=1, max_size=8)


@given(pairs, pairs, st.integers(0, 10**6))
def test_lineage_ignores_timestamps_and_users(fork_pairs, up_pairs, shift):
    fork = [rev(a, b) for a, b in fork_pairs]
    upstream = [rev(a, b) for a, b in up_pairs]
    moved = [rev(a, b, minutes=shift, user="Other") for a, b in fork_pairs]
    status, parent = match_lineage(fork, upstream)
    status2, parent2 = match_lineage(moved, upstream)
    assert status == status2
    assert (parent.key if parent else None) == (parent2.key if parent2 else None)
    assert match_lineage(fork, fork)[0] is Status.DUPLICATED


# -- history & pagination -------------------------------------------------------


def test_history_newest_first_and_paginated(monkeypatch):
    monkeypatch.setattr("forkdiff.crawl.HISTORY_PAGE_SIZE", 2)
    transport = FixtureTransport(site_with_history(5))
    client, _ = make_client(transport)
    history = fetch_history(client, "P")
    assert [r.rev_id for r in history] == [5, 4, 3, 2, 1]
    assert len(transport.requests) == 3


@pytest.mark.parametrize("until, expected", [(1, [3, 2, 1]), (2, [3, 2]), (3, [3])])
def test_history_until(until, expected):
    client, _ = make_client(FixtureTransport(site_with_history(3)))
    assert [r.rev_id for r in fetch_history(client, "P", until=until)] == expected


def test_malformed_continuation_is_transport_error():
    class Broken:
        def get(self, url, params=None):
            return 200, {"query": {"pages": [{"title": "P", "revisions": [
                {"revid": 2, "parentid": 1, "timestamp": "2023-01-01T00:00:00Z", "user": "U"}]}]},
                "continue": {"bogus": "x"}}

    client, _ = make_client(Broken())
    with pytest.raises(TransportError):
        fetch_history(client, "P")


# -- retries, status codes, rate limit -------------------------------------------


class Scripted:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = 0

    def get(self, url, params=None):
        self.calls += 1
        item = self.responses.pop(0) if self.responses else self.responses_last
        if isinstance(item, Exception):
            raise item
        return item


def test_retries_with_exponential_backoff():
    body = {"query": {"pages": [{"title": "P", "missing": True}]}}
    transport = Scripted([(503, None), (429, None), requests.ConnectionError("down"), (200, body)])
    client, clock = make_client(transport)
    assert client.last_revision("P") is None
    assert transport.calls == 4
    assert [s for s in clock.sleeps if s >= 1] == [1.0, 2.0, 4.0]


def test_network_down_raises_after_max_retries():
    transport = Scripted([requests.ConnectionError("down")] * 4)
    client, _ = make_client(transport, max_retries=3)
    with pytest.raises(TransportError):
        client.last_revision("P")
    assert transport.calls == 4


def test_blocked_page_is_missing_with_flag():
    client, _ = make_client(Scripted([(403, None)]))
    assert client.last_revision("P") is None
    assert client.blocked_titles == {"P"}


def test_rate_limit_spacing():
    body = {"query": {"pages": [{"title": "P", "missing": True}]}}
    stamps = []
    clock = FakeClock()

    class Recording:
        def get(self, url, params=None):
            stamps.append(clock.now)
            return 200, body

    client, _ = make_client(Recording(), rate_limit=4.0, clock=clock)
    for i in range(10):
        client.request({"action": "query", "titles": str(i)})
    gaps = [b - a for a, b in zip(stamps, stamps[1:])]
    assert min(gaps) >= 0.25 - 1e-12


def test_token_bucket_allows_first_request_immediately():
    clock = FakeClock()
    bucket = TokenBucket(2.0, clock=clock, sleep=clock.sleep)
    bucket.acquire()
    assert clock.sleeps == []
    bucket.acquire()
    assert clock.sleeps == [0.5]


# -- page views --------------------------------------------------------------------


def test_monthly_views_replay():
    upstream, _ = fixture_endpoints()
    site = json.loads((fixture_dir() / "upstream.json").read_text(encoding="utf-8"))
    title, monthly = next(iter(site["pageviews"].items()))
    month, count = next(iter(monthly.items()))
    assert fetch_monthly_views(upstream, title, month) == count
    assert fetch_monthly_views(upstream, title, "2001-01") == 0


def test_monthly_views_rest_endpoint():
    class Rest:
        def get(self, url, params=None):
            assert "20230201" in url and "20230228" in url and "Some_page" in url
            return 200, {"items": [{"views": 10}, {"views": 5}]}

    endpoint = WikiEndpoint("http://wiki.test/api.php", "t", rate_limit=1000.0,
                            pageviews_url="http://wiki.test/rest/{article}/daily/{start}/{end}")
    assert MediaWikiClient(endpoint, transport=Rest()).monthly_views("Some page", "2023-02") == 15


@pytest.mark.parametrize("month", ["2023-13", "23-01", "2023/01", ""])
def test_monthly_views_bad_month(month):
    upstream, _ = fixture_endpoints()
    with pytest.raises(PreconditionError):
        fetch_monthly_views(upstream, "Moscow", month)


# -- whole crawl -------------------------------------------------------------------


def test_fixture_crawl_counts(fixture_crawl, fixture_pages):
    _, manifest = fixture_crawl
    assert manifest.counts == {"duplicated": 2, "changed": 8, "missing": 2}
    assert sum(manifest.counts.values()) == len(manifest.titles) == 12
    assert manifest.blocked == ["Sanctions against Russia"]
    for page in fixture_pages:
        if page.status is Status.CHANGED:
            assert page.fork_text is not None and page.upstream_text is not None
        if page.status is Status.MISSING:
            assert page.fork_last_rev is None


def test_pages_jsonl_field_names(fixture_crawl):
    first = json.loads((fixture_crawl[0] / "pages.jsonl").read_text(encoding="utf-8").splitlines()[0])
    assert list(first) == ["title", "status", "fork_last_rev", "upstream_parent_rev", "fork_text", "upstream_text"]


def test_crawl_idempotent_under_cache(tmp_path):
    titles = load_title_list(fixture_dir() / "titles.txt")
    cache = ResponseCache(tmp_path / "cache")
    outputs = []
    for run in range(2):
        upstream, fork = fixture_endpoints()
        clients = [MediaWikiClient(e, cache=cache, wall_clock=lambda run=run: 1_700_000_000.0 + run)
                   for e in (upstream, fork)]
        crawl(clients[0], clients[1], titles, tmp_path / f"out{run}")
        outputs.append(((tmp_path / f"out{run}" / "manifest.json").read_bytes(),
                        (tmp_path / f"out{run}" / "pages.jsonl").read_bytes()))
        if run == 1:
            assert all(not c.transport.requests for c in clients)
    assert outputs[0] == outputs[1]


def test_unmatched_lineage_flagged():
    up = {"pages": {"P": {"revisions": [{"rev_id": 1, "parent_id": 0, "timestamp": "2023-01-01T00:00:00Z",
                                         "user": "U", "content": "Old text."}]}}}
    fork = {"pages": {"P": {"revisions": [{"rev_id": 50, "parent_id": 0, "timestamp": "2023-02-01T00:00:00Z",
                                           "user": "F", "content": "New text."}]}}}
    upstream_client, _ = make_client(FixtureTransport(up))
    fork_client, _ = make_client(FixtureTransport(fork))
    record, flagged = crawl_page("P", upstream_client, fork_client)
    assert flagged and record.status is Status.CHANGED and record.upstream_parent_rev is None
    assert record.upstream_text == "Old text."


def test_page_record_invariants():
    with pytest.raises(Exception):
        PageRecord("P", Status.MISSING, fork_text="x")
    with pytest.raises(Exception):
        PageRecord("P", Status.CHANGED, fork_last_rev=rev(2, 1), fork_text="x")
