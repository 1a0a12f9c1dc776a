import csv
from collections import Counter
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forkdiff.analytics import (GazetteerRecognizer, GeoAnnotation, NamedEntity, analyze, entity_deltas,
                                geo_group_rates, office_hours_share, read_geo, temporal_heatmap,
                                top_category_changes, top_reference_changes)
from forkdiff.diff import ContentDiff
from forkdiff.errors import DataError, PreconditionError, UndefinedShareError
from forkdiff.stats import RevisionLogEntry

MONDAY = datetime(2023, 1, 2, tzinfo=timezone.utc)


def edit(ts, user="Editor", i=0):
    return RevisionLogEntry("P", i, ts, user, False, False)


# -- temporal -------------------------------------------------------------------


def test_one_edit_per_day_at_midnight():
    log = [edit(MONDAY + timedelta(days=d)) for d in range(28)]
    cells = temporal_heatmap(log).cells
    assert cells.shape == (7, 24)
    assert np.all(cells[:, 0] == 1.0)
    assert cells[:, 1:].sum() == 0


def test_bot_edits_are_filtered():
    log = [edit(MONDAY, user="ArchiverBot"), edit(MONDAY, user="Robo")]
    assert temporal_heatmap(log, bot_list=["Robo"]).cells.sum() == 0
    assert temporal_heatmap(log, bot_filter=False).cells.sum() > 0


def test_uniform_activity_office_share():
    log = [edit(MONDAY + timedelta(hours=h)) for h in range(7 * 24)]
    heatmap = temporal_heatmap(log)
    assert office_hours_share(heatmap) == pytest.approx(50 / 168)


def test_monday_morning_only():
    log = [edit(MONDAY + timedelta(weeks=w, hours=9)) for w in range(4)]
    assert office_hours_share(temporal_heatmap(log)) == 1.0


def test_empty_heatmap_share_undefined():
    with pytest.raises(UndefinedShareError):
        office_hours_share(temporal_heatmap([]))


# -- geography --------------------------------------------------------------------


def test_geo_rates_sum_to_one_per_key():
    statuses = {"a": "changed", "b": "duplicated", "c": "changed", "d": "missing", "e": "changed"}
    geo = [GeoAnnotation("a", frozenset({"UA", "RU"})), GeoAnnotation("b", frozenset({"RU", "UA"})),
           GeoAnnotation("c", frozenset({"US"})), GeoAnnotation("d", frozenset({"US"})),
           GeoAnnotation("e", frozenset())]
    rates = geo_group_rates(statuses, geo)
    keys = {k for k, _ in rates}
    assert keys == {"RU+UA", "US"}
    for key in keys:
        assert sum(r for (k, _), r in rates.items() if k == key) == pytest.approx(1.0)
    assert rates["RU+UA", "changed"] == 0.5


def test_bad_country_code():
    with pytest.raises(DataError):
        GeoAnnotation("x", frozenset({"Russia"}))


def test_duplicate_geo_rows():
    geo = [GeoAnnotation("a", frozenset({"RU"}))] * 2
    with pytest.raises(PreconditionError):
        geo_group_rates({"a": "changed"}, geo)


def test_read_geo(tmp_path):
    path = tmp_path / "geo.tsv"
    path.write_text("title\tcountries\nA\tru, ua\nB\t\n", encoding="utf-8")
    geo = read_geo(path)
    assert geo[0].key == "RU+UA" and geo[1].countries == frozenset()


# -- categories, references -------------------------------------------------------------


def test_category_ranking_and_percent():
    diffs = [ContentDiff("a", categories_removed={"X", "Y"}), ContentDiff("b", categories_removed={"X"}),
             ContentDiff("c", categories_added={"Z"}), ContentDiff("d")]
    added, removed = top_category_changes(diffs, k=5)
    assert removed == [("X", 2, 200 / 3), ("Y", 1, 100 / 3)]
    assert added == [("Z", 1, 100 / 3)]


def test_reference_domains_count_once_per_page():
    diffs = [ContentDiff("a", references_added={"a.gov": ["http://a.gov/1", "http://a.gov/2"]}),
             ContentDiff("b", references_added={"a.gov": ["https://www.a.gov/x"], "b.org": ["http://b.org"]})]
    added, removed = top_reference_changes(diffs, k=10)
    assert added == [("a.gov", 2), ("b.org", 1)] and removed == []


def test_top_k_must_be_positive():
    with pytest.raises(PreconditionError):
        top_category_changes([], k=0)


# -- entities --------------------------------------------------------------------------


def test_gazetteer_maps_abbreviation_to_lemma():
    found = GazetteerRecognizer.default().recognize("Город входит в состав ДНР.")
    assert NamedEntity("ДНР", "LOC", "Донецкая Народная Республика") in found


def test_entities_counted_once_per_page():
    diffs = [ContentDiff("a", inserted=["Россия и России.", "Снова Россия."]),
             ContentDiff("b", changed=[("Часть Украины.", "Часть России.", 0.8)])]
    added, deleted = entity_deltas(diffs, GazetteerRecognizer.default(fallback=False))
    assert added == [("Россия", "LOC", 2, 100.0)]
    assert deleted == [("Украина", "LOC", 1, 50.0)]


def test_failing_recognizer_is_tallied():
    class Broken:
        def recognize(self, text):
            raise RuntimeError("offline")

    diagnostics = Counter()
    assert entity_deltas([ContentDiff("a", inserted=["Текст."])], Broken(), diagnostics=diagnostics) == ([], [])
    assert diagnostics["recognizer_failures"] == 1


def test_entity_label_validated():
    with pytest.raises(DataError):
        NamedEntity("X", "CITY", "X")


# -- report files ---------------------------------------------------------------------------


def _read(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


def test_empty_diffs_give_header_only_tables(tmp_path):
    meta = analyze([], tmp_path)
    for name in ("categories", "references", "entities", "geo"):
        assert len(_read(tmp_path / f"{name}.csv")) == 1
    assert meta["denominators"]["changed_pages"] == 0
    assert meta["office_hours_share_fork"] is None


diff_lists = st.lists(
    st.builds(lambda i, cats, refs, words: ContentDiff(
        f"p{i}", categories_added=set(cats), references_removed={r: [f"http://{r}"] for r in refs},
        inserted=[" ".join(words) + "."] if words else []),
        st.integers(0, 10 ** 6), st.sets(st.sampled_from("ABCDE")), st.sets(st.sampled_from(["a.gov", "b.org"])),
        st.lists(st.sampled_from(["Россия", "Украина", "Киев", "город"]), max_size=4)),
    max_size=8, unique_by=lambda d: d.title)


@settings(max_examples=30, deadline=None)
@given(diff_lists, st.randoms(use_true_random=False))
def test_tables_are_order_independent(tmp_path_factory, diffs, rnd):
    shuffled = list(diffs)
    rnd.shuffle(shuffled)
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    analyze(diffs, a)
    analyze(shuffled, b)
    for name in ("categories.csv", "references.csv", "entities.csv", "analysis.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_fixture_analysis(tmp_path, fixture_diffs):
    meta = analyze(fixture_diffs.values(), tmp_path)
    removed = [row for row in _read(tmp_path / "categories.csv") if row[0] == "removed"]
    names = {row[2] for row in removed}
    assert "Persons under the sanctions related to the conflict in Ukraine" in names
    assert meta["denominators"]["changed_pages"] == 8
