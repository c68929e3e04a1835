"""Exact MAP inference: pruned DFS, the cache ledger, and the brute-force oracle."""

from modesearch.search.brute import (
    DEFAULT_ENUMERATION_CAP,
    brute_force_conditional_mode,
    brute_force_mode,
    brute_force_top_n,
    brute_force_value_distribution,
    enumerate_complete,
)
from modesearch.search.dfs import (
    ModeResult,
    SearchBudget,
    SearchStats,
    exact_conditional_mode,
    exact_mode,
    exact_top_n,
)
from modesearch.search.ledger import CacheLedger
from modesearch.search.report import empty_mode_report, equal_population_bins, geometric_mean

__all__ = [
    "CacheLedger",
    "DEFAULT_ENUMERATION_CAP",
    "ModeResult",
    "SearchBudget",
    "SearchStats",
    "brute_force_conditional_mode",
    "brute_force_mode",
    "brute_force_top_n",
    "brute_force_value_distribution",
    "empty_mode_report",
    "enumerate_complete",
    "equal_population_bins",
    "exact_conditional_mode",
    "exact_mode",
    "exact_top_n",
    "geometric_mean",
]
