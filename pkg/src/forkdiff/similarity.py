"""Character-level Levenshtein distance and the normalized similarity built on it."""

from fractions import Fraction


def levenshtein_distance(a, b):
    """Number of single-character insertions, deletions and substitutions
    needed to turn ``a`` into ``b``.

    Works on Unicode code points (Python ``str`` indexing), so combining
    sequences count per code point. Uses two rolling rows, O(len(a)*len(b))
    time and O(min(len(a), len(b))) memory.
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)

    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        append = current.append
        for j, cb in enumerate(b, 1):
            cost = previous[j - 1] + (ca != cb)
            ins = current[j - 1] + 1
            dele = previous[j] + 1
            if ins < cost:
                cost = ins
            if dele < cost:
                cost = dele
            append(cost)
        previous = current
    return previous[-1]


def normalized_levenshtein(a, b):
    """Similarity in [0, 1]: ``1 - distance / max(len(a), len(b))``.

    Two empty strings are fully similar (1.0).
    """
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein_distance(a, b) / longest


def exceeds_threshold(a, b, threshold, distance=None):
    """Strict ``similarity(a, b) > threshold`` evaluated in exact rationals.

    Float rounding would otherwise make a similarity of exactly 0.6 land on
    either side of 0.6 depending on the lengths involved.
    """
    longest = max(len(a), len(b))
    if longest == 0:
        return Fraction(1) > Fraction(str(threshold))
    if distance is None:
        distance = levenshtein_distance(a, b)
    return Fraction(longest - distance, longest) > Fraction(str(threshold))
