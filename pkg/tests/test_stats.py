import json
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forkdiff.errors import DataError, PreconditionError
from forkdiff.records import Status
from forkdiff.stats import (RelevanceMetrics, RevisionLogEntry, bootstrap_estimate, compute_metrics, derive_seed,
                            group_estimates, is_ip_literal, months_between, read_revlog, relevance_report,
                            views_share)

T0 = datetime(2023, 3, 1, 12, tzinfo=timezone.utc)
MARCH = (date(2023, 3, 1), date(2023, 3, 31))


def entry(i, user="Editor", reverted=False, title="P", days=0):
    return RevisionLogEntry(title, i, T0 + timedelta(days=days), user, is_ip_literal(user), reverted)


# -- per-page metrics -------------------------------------------------------------


def test_rates_on_ten_edits():
    users = ["10.0.0.1", "2001:db8::1"] + ["Editor"] * 8
    log = [entry(i, user=u, reverted=(i == 5)) for i, u in enumerate(users)]
    m = compute_metrics(log, {"2023-03": 300}, MARCH)
    assert (m.edit_count, m.ip_edit_rate, m.revert_rate, m.monthly_views) == (10, 0.2, 0.1, 300.0)


def test_empty_log_gives_zeros():
    m = compute_metrics([], {}, MARCH, title="Quiet")
    assert m == RelevanceMetrics("Quiet", 0.0, 0, 0.0, 0.0)


def test_hand_counted_log():
    # 25 edits spread over March-April; 7 from IPs, 4 reverted, 5 fall outside the window
    log = []
    for i in range(25):
        user = f"192.168.0.{i}" if i % 3 == 0 and i < 21 else f"User{i}"
        log.append(entry(i, user=user, reverted=i in (1, 2, 4, 22), days=i * 2))
    window = (date(2023, 3, 1), date(2023, 4, 9))
    m = compute_metrics(log, {"2023-03": 100, "2023-04": 50, "2023-05": 999}, window)
    inside = [e for e in log if e.timestamp.date() <= window[1]]
    assert len(inside) == 20 == m.edit_count
    assert m.ip_edit_rate == 7 / 20
    assert m.revert_rate == 3 / 20
    assert m.monthly_views == 75.0


def test_mixed_titles_rejected():
    with pytest.raises(PreconditionError):
        compute_metrics([entry(1, title="A"), entry(2, title="B")], {}, MARCH)


def test_is_ip_must_agree_with_user(tmp_path):
    path = tmp_path / "revlog.jsonl"
    path.write_text(json.dumps({"title": "P", "rev_id": 1, "timestamp": "2023-03-01T00:00:00Z",
                                "user": "Editor", "is_ip": True}) + "\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_revlog(path)


def test_months_between():
    assert months_between(date(2022, 11, 30), date(2023, 2, 1)) == ["2022-11", "2022-12", "2023-01", "2023-02"]


# -- bootstrap --------------------------------------------------------------------


def test_zero_variance_has_zero_width():
    est = bootstrap_estimate([3.5] * 50, n_resamples=500, sample_size=100)
    assert est.mean == est.ci_low == est.ci_high == 3.5


def test_single_value():
    est = bootstrap_estimate([7], n_resamples=100, sample_size=10)
    assert (est.mean, est.ci_low, est.ci_high) == (7.0, 7.0, 7.0)


def test_width_matches_normal_approximation():
    values = np.random.default_rng(1).normal(0, 1, 10000)
    est = bootstrap_estimate(values, n_resamples=4000, sample_size=1000, seed=3)
    expected = 2 * 1.959964 / np.sqrt(1000)
    assert abs((est.ci_high - est.ci_low) - expected) / expected < 0.15


def test_bootstrap_deterministic_per_seed():
    values = np.arange(100.0)
    a = bootstrap_estimate(values, 300, 50, seed=9)
    assert a == bootstrap_estimate(values, 300, 50, seed=9)
    assert a != bootstrap_estimate(values, 300, 50, seed=10)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30), st.sampled_from([0.5, 2.0, 4.0]))
def test_bootstrap_scales_with_data(values, c):
    a = bootstrap_estimate(values, 200, 20, seed=1)
    b = bootstrap_estimate([c * v for v in values], 200, 20, seed=1)
    for x, y in ((a.mean, b.mean), (a.ci_low, b.ci_low), (a.ci_high, b.ci_high)):
        assert y == pytest.approx(c * x, rel=1e-9, abs=1e-9)
    assert a.ci_low <= a.mean <= a.ci_high


@pytest.mark.parametrize("kwargs", [{"values": []}, {"values": [1, 2], "confidence": 1.0},
                                    {"values": [1, 2], "n_resamples": 0}])
def test_bootstrap_preconditions(kwargs):
    with pytest.raises(PreconditionError):
        bootstrap_estimate(**kwargs)


def test_non_finite_values_rejected():
    with pytest.raises(DataError):
        bootstrap_estimate([1.0, float("nan")])


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(42, "stats") == derive_seed(42, "stats")
    assert derive_seed(42, "stats") != derive_seed(42, "taxonomy")
    assert 0 <= derive_seed(1, "x") < 2 ** 63


# -- groups ------------------------------------------------------------------------


def _group_metrics(rng):
    metrics, statuses = [], {}
    for status, scale in ((Status.DUPLICATED, 1.0), (Status.CHANGED, 10.0)):
        for i in range(200):
            title = f"{status.value}-{i}"
            metrics.append(RelevanceMetrics(title, float(rng.poisson(100 * scale)), 1, 0.0, 0.0))
            statuses[title] = status.value
    return metrics, statuses


def test_ten_times_views_separates_intervals():
    metrics, statuses = _group_metrics(np.random.default_rng(0))
    est = group_estimates(metrics, statuses, n_resamples=1000, sample_size=200, seed=5)
    low, high = est["duplicated", "monthly_views"], est["changed", "monthly_views"]
    assert low.ci_high < high.ci_low
    assert ("missing", "monthly_views") not in est


def test_group_needs_every_status():
    with pytest.raises(PreconditionError):
        group_estimates([RelevanceMetrics("x", 1.0, 1, 0.0, 0.0)], {})


def test_views_share():
    metrics = [RelevanceMetrics("a", 30.0, 0, 0, 0), RelevanceMetrics("b", 70.0, 0, 0, 0),
               RelevanceMetrics("c", 0.0, 0, 0, 0)]
    statuses = {"a": "changed", "b": "duplicated", "c": "missing"}
    assert views_share(metrics, statuses) == {"changed": 0.3, "duplicated": 0.7, "missing": 0.0}
    zero = [RelevanceMetrics("a", 0.0, 0, 0, 0)]
    assert views_share(zero, {"a": "changed"}) == {"changed": 0.0}


def test_relevance_report_on_fixture(fixture_pages):
    from forkdiff.fixtures import fixture_dir
    from forkdiff.stats import read_views

    revlog = read_revlog(fixture_dir() / "revlog_upstream.jsonl")
    views = read_views(fixture_dir() / "views.jsonl")
    report = relevance_report(fixture_pages, revlog, views, n_resamples=200, sample_size=50, seed=1)
    assert report["page_counts"] == {"duplicated": 2, "changed": 8, "missing": 2}
    assert sum(report["views_share"].values()) == pytest.approx(1.0)
    for metrics in report["groups"].values():
        for est in metrics.values():
            assert est["ci_low"] <= est["mean"] <= est["ci_high"]
    again = relevance_report(fixture_pages, revlog, views, n_resamples=200, sample_size=50, seed=1)
    assert json.dumps(report) == json.dumps(again)
