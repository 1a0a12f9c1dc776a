from fractions import Fraction
from functools import lru_cache

from hypothesis import given, settings
from hypothesis import strategies as st

from forkdiff.similarity import exceeds_threshold, levenshtein_distance, normalized_levenshtein


def oracle_distance(a, b):
    """Textbook recursive definition, memoised."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


texts = st.text(max_size=25)


def test_identity_and_empty():
    assert normalized_levenshtein("abc", "abc") == 1.0
    assert normalized_levenshtein("", "") == 1.0
    assert normalized_levenshtein("", "x") == 0.0


def test_kitten_sitting():
    assert levenshtein_distance("kitten", "sitting") == 3
    assert abs(normalized_levenshtein("kitten", "sitting") - (1 - 3 / 7)) < 1e-12


def test_short_russian_pair():
    # distance 4 over 14 characters
    assert levenshtein_distance("Кот спал дома.", "Кот спал тут.") == oracle_distance("Кот спал дома.", "Кот спал тут.")
    assert abs(normalized_levenshtein("Кот спал дома.", "Кот спал тут.") - (1 - 4 / 14)) < 1e-12


def test_counts_code_points_not_bytes():
    assert levenshtein_distance("ё", "е") == 1
    assert levenshtein_distance("𝔸b", "b") == 1


@settings(max_examples=300)
@given(texts, texts)
def test_matches_recursive_oracle(a, b):
    assert levenshtein_distance(a, b) == oracle_distance(a, b)


@given(texts, texts)
def test_symmetric_and_bounded(a, b):
    s = normalized_levenshtein(a, b)
    assert s == normalized_levenshtein(b, a)
    assert 0.0 <= s <= 1.0
    assert (s == 1.0) == (a == b)


@given(texts, texts, texts)
def test_triangle_inequality(a, b, c):
    assert levenshtein_distance(a, c) <= levenshtein_distance(a, b) + levenshtein_distance(b, c)


def test_threshold_is_strict_and_exact():
    # 6/10 exactly: distance 4 over length 10
    a, b = "aaaaaaaaaa", "aaaaaabbbb"
    assert Fraction(10 - levenshtein_distance(a, b), 10) == Fraction(3, 5)
    assert not exceeds_threshold(a, b, 0.6)
    assert exceeds_threshold(a, b, 0.59)
