from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence as Seq

import numpy as np

from modesearch.search.dfs import SearchBudget, exact_mode
from modesearch.seqmodel.base import SequenceModel


def geometric_mean(probs: Iterable[float]) -> float:
    """``exp(mean(log p))``; zero if any probability is zero."""
    logs = np.log(np.asarray(list(probs), dtype=np.float64))
    if logs.size == 0:
        raise ValueError("geometric mean of an empty set")
    return float(np.exp(logs.mean()))


def equal_population_bins(lengths: Seq[int], n_bins: int) -> list[np.ndarray]:
    """Split entry indices, sorted by length (stable), into ``n_bins`` near-equal groups."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    order = np.argsort(np.asarray(lengths), kind="stable")
    return [chunk for chunk in np.array_split(order, min(n_bins, len(order))) if chunk.size]


@dataclass
class EmptyModeBin:
    length_lo: int
    length_hi: int
    n: int
    percent_empty_mode: float
    geomean_empty_prob: float
    n_not_exhausted: int

    def to_json(self) -> dict:
        return asdict(self)


def empty_mode_report(
    entries: Seq[tuple[SequenceModel, int]],
    n_bins: int = 10,
    max_len: int = 64,
    budget: SearchBudget | None = None,
) -> list[EmptyModeBin]:
    """Per reference-length bin: how often the exact mode is empty, and the geometric-mean P(empty).

    Bins hold equal numbers of entries after sorting by reference length.
    """
    if not entries:
        raise ValueError("empty_mode_report needs at least one entry")
    lengths = [int(ref) for _, ref in entries]
    empty_flags = []
    empty_logp = []
    exhausted = []
    for model, _ in entries:
        res = exact_mode(model, max_len, budget)
        empty_flags.append(res.empty)
        exhausted.append(res.exhausted)
        empty_logp.append(model.sequence_logprob((model.vocab.eos_id,)))
    report = []
    for idx in equal_population_bins(lengths, n_bins):
        lp = np.array([empty_logp[i] for i in idx])
        report.append(
            EmptyModeBin(
                length_lo=min(lengths[i] for i in idx),
                length_hi=max(lengths[i] for i in idx),
                n=int(idx.size),
                percent_empty_mode=100.0 * float(np.mean([empty_flags[i] for i in idx])),
                geomean_empty_prob=float(np.exp(lp.mean())),
                n_not_exhausted=int(sum(not exhausted[i] for i in idx)),
            )
        )
    return report
