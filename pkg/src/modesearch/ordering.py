"""Deterministic ranking of scored token sequences.

Every search routine in the package ranks candidates the same way: higher
log-probability first, and when two log-probabilities agree to within
``TIE_TOL`` the lexicographically smaller content (shorter first on a shared
prefix) wins, then the smaller terminator id. Sharing one comparator keeps
the DFS, the brute-force enumerator and the beam searches in agreement on
tied instances, where summation order would otherwise pick a winner by
rounding noise.
"""

from __future__ import annotations

import functools
import math
from typing import Sequence as Seq

# Absolute nats. Distinct sequences of a generic model never come this close,
# while re-associated sums of identical terms land well inside it.
TIE_TOL = 1e-10


def compare_scored(a_score: float, a_key: tuple, b_score: float, b_key: tuple) -> int:
    """Return -1 if ``a`` ranks before ``b``, 1 if after, 0 if identical."""
    if a_score == b_score or (
        math.isfinite(a_score) and math.isfinite(b_score) and abs(a_score - b_score) <= TIE_TOL
    ):
        if a_key < b_key:
            return -1
        if a_key > b_key:
            return 1
        return 0
    return -1 if a_score > b_score else 1


def ranks_before(a_score: float, a_key: tuple, b_score: float, b_key: tuple) -> bool:
    return compare_scored(a_score, a_key, b_score, b_key) < 0


def sort_scored(items: Seq, score, key) -> list:
    """Sort ``items`` best-first using ``score(item)`` and tiebreak ``key(item)``."""

    def cmp(x, y):
        return compare_scored(score(x), key(x), score(y), key(y))

    return sorted(items, key=functools.cmp_to_key(cmp))


def tie_key(content: tuple, terminator: int) -> tuple:
    return (content, terminator)
