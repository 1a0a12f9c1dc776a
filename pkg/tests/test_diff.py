from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from forkdiff.diff import ContentDiff, WikitextDiffer, diff_pages, diff_texts, pair_changed
from forkdiff.errors import PreconditionError
from forkdiff.records import PageRecord, Status
from forkdiff.similarity import normalized_levenshtein
from forkdiff.wikitext import parse_wikitext


def test_similar_sentences_pair():
    changed, ins, dele = pair_changed(["Кот спал тут."], ["Кот спал дома."])
    assert [(o, n) for o, n, _ in changed] == [("Кот спал дома.", "Кот спал тут.")]
    assert abs(changed[0][2] - normalized_levenshtein("Кот спал дома.", "Кот спал тут.")) < 1e-12
    assert ins == [] and dele == []


def test_unrelated_sentences_stay_residual():
    changed, ins, dele = pair_changed(["Совсем другое предложение."], ["Кот."])
    assert changed == []
    assert ins == ["Совсем другое предложение."] and dele == ["Кот."]


def test_greedy_prefers_best_pair_and_ties_by_index():
    deleted = ["abcdefghij", "abcdefghij"]
    inserted = ["abcdefghiX", "abcdefghij!"]
    changed, ins, dele = pair_changed(inserted, deleted)
    # both inserted candidates score 0.9 / 0.909; the best goes to the first deleted
    assert changed[0][:2] == ("abcdefghij", "abcdefghij!")
    assert len(changed) == 2 and ins == [] and dele == []


def test_threshold_bounds():
    with pytest.raises(PreconditionError):
        pair_changed([], [], threshold=1.0)
    with pytest.raises(PreconditionError):
        pair_changed([], [], threshold=0)


def test_identical_texts_give_empty_diff():
    text = "Озеро. [[Категория:Озёра]] {{cite web|url=https://a.gov/x}} [[File:A.png]]"
    assert diff_texts("T", text, text).is_empty


def test_diff_requires_changed_status():
    with pytest.raises(PreconditionError):
        diff_pages(PageRecord("T", Status.MISSING))


def test_roundtrip_serialisation(fixture_diffs):
    for diff in fixture_diffs.values():
        data = diff.to_dict()
        assert list(data) == ["title", "inserted", "deleted", "changed", "categories_added",
                              "categories_removed", "references_added", "references_removed", "media_added",
                              "media_removed", "templates_added", "templates_removed", "tags_added",
                              "tags_removed"]
        assert ContentDiff.from_dict(data).to_dict() == data


def test_reference_and_category_deltas(fixture_diffs):
    d = fixture_diffs["Novoselovka"]
    assert d.categories_added == {"Villages of the Donetsk People's Republic"}
    assert d.categories_removed == {"Villages of Donetsk Oblast"}
    assert d.references_added == {"government.ru": {"http://government.ru/settlements"}}
    assert d.references_removed == {"rada.gov.ua": {"https://rada.gov.ua/villages"}}


def test_media_only_change(fixture_diffs):
    d = fixture_diffs["Kyiv Metro"]
    assert not d.has_text_change
    assert d.media_added == {"Kyiv Metro map 2018.png"}


def test_differ_estimator_filters_statuses(fixture_pages):
    differ = WikitextDiffer(threshold=0.6).fit()
    diffs = differ.transform(fixture_pages)
    assert len(diffs) == sum(p.status is Status.CHANGED for p in fixture_pages)
    assert differ.get_params() == {"threshold": 0.6}


words = st.sampled_from(["Кот", "спал", "дома", "тут", "Пёс", "лежал", "на", "полу", "долго"])
sentence = st.lists(words, min_size=1, max_size=5).map(lambda ws: " ".join(ws) + ".")
documents = st.lists(sentence, max_size=8)


@given(documents, documents)
def test_multiset_conservation_and_pair_invariants(base, fork):
    diff = diff_texts("T", " ".join(base), " ".join(fork))
    base_s = Counter(parse_wikitext(" ".join(base)).sentences)
    fork_s = Counter(parse_wikitext(" ".join(fork)).sentences)
    common = sum((base_s & fork_s).values())
    assert sum(base_s.values()) - len(diff.deleted) - len(diff.changed) == common
    assert sum(fork_s.values()) - len(diff.inserted) - len(diff.changed) == common
    assert not set(diff.inserted) & set(diff.deleted)
    for old, new, sim in diff.changed:
        assert sim > 0.6
        assert sim == normalized_levenshtein(old, new)


@given(documents)
def test_self_diff_is_empty(doc):
    assert diff_texts("T", " ".join(doc), " ".join(doc)).is_empty
