"""Exhaustive enumeration of complete sequences, used as the independent oracle.

The enumerator never prunes: it expands every finite-probability prefix level
by level, vectorized over the rows that share a model state. Chunks are kept
on a stack so memory stays bounded for large spaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from modesearch.errors import EnumerationCapExceeded
from modesearch.ordering import TIE_TOL, ranks_before, sort_scored
from modesearch.search.dfs import ModeResult, SearchStats
from modesearch.seqmodel.base import Sequence, SequenceModel, StateTable

DEFAULT_ENUMERATION_CAP = 2_000_000
_CHUNK = 1 << 16


@dataclass
class CompleteBatch:
    """Complete sequences sharing a content length: ``content`` is ``(m, t)``."""

    content: np.ndarray
    logp: np.ndarray
    term: np.ndarray
    value: np.ndarray | None


def candidate_count(n_content: int, max_len: int, exact_length: int | None = None) -> int:
    if exact_length is not None:
        return n_content**exact_length
    return sum(n_content**l for l in range(max_len + 1))


def enumerate_complete(
    model: SequenceModel,
    max_len: int,
    *,
    exact_length: int | None = None,
    increments: np.ndarray | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> Iterator[CompleteBatch]:
    """Yield every complete sequence of positive probability, in batches.

    ``increments`` (one integer per vocabulary id) accumulates an additive
    attribute value along each sequence.
    """
    vocab = model.vocab
    n_content = len(vocab.content_ids)
    limit = exact_length if exact_length is not None else max_len
    total = candidate_count(n_content, max_len, exact_length)
    if total > cap:
        raise EnumerationCapExceeded(
            f"{total} candidate sequences exceeds the enumeration cap of {cap}"
        )
    table = StateTable(model)
    terms = vocab.terminator_ids
    content_ids = vocab.content_ids
    inc = None if increments is None else np.asarray(increments, dtype=np.int64)
    stack = [
        (
            np.zeros((1, 0), dtype=np.int64),
            np.zeros(1),
            np.array([table.initial()], dtype=np.int64),
            None if inc is None else np.zeros(1, dtype=np.int64),
        )
    ]
    while stack:
        toks, logp, sid, val = stack.pop()
        depth = toks.shape[1]
        emit = exact_length is None or depth == exact_length
        children = []
        for u in np.unique(sid):
            rows = np.flatnonzero(sid == u)
            lp = table.logprobs(int(u))
            if emit:
                for t in terms:
                    if np.isfinite(lp[t]):
                        yield CompleteBatch(
                            toks[rows],
                            logp[rows] + lp[t],
                            np.full(rows.size, t, dtype=np.int64),
                            None if val is None else val[rows],
                        )
            if depth >= limit:
                continue
            ws = content_ids[np.isfinite(lp[content_ids])]
            if ws.size == 0:
                continue
            r, m = rows.size, ws.size
            ctoks = np.concatenate(
                [np.repeat(toks[rows], m, axis=0), np.tile(ws, r)[:, None]], axis=1
            )
            clogp = (logp[rows][:, None] + lp[ws][None, :]).ravel()
            csid = np.tile(np.array([table.step(int(u), int(w)) for w in ws]), r)
            cval = None if val is None else (val[rows][:, None] + inc[ws][None, :]).ravel()
            children.append((ctoks, clogp, csid, cval))
        if not children:
            continue
        ctoks = np.concatenate([c[0] for c in children])
        clogp = np.concatenate([c[1] for c in children])
        csid = np.concatenate([c[2] for c in children])
        cval = None if val is None else np.concatenate([c[3] for c in children])
        step = max(1, _CHUNK // max(1, n_content))
        for lo in range(0, len(clogp), step):
            hi = lo + step
            stack.append(
                (ctoks[lo:hi], clogp[lo:hi], csid[lo:hi], None if cval is None else cval[lo:hi])
            )


def _batch_best(batch: CompleteBatch) -> tuple[float, tuple]:
    top = batch.logp.max()
    near = np.flatnonzero(batch.logp >= top - TIE_TOL)
    # lexicographic minimum of (content..., terminator) among the near-ties
    keys = [batch.term[near]] + [batch.content[near, j] for j in range(batch.content.shape[1] - 1, -1, -1)]
    pick = near[np.lexsort(keys)[0]]
    return float(batch.logp[pick]), (tuple(int(x) for x in batch.content[pick]), int(batch.term[pick]))


def _best_of(batches) -> tuple[float, tuple | None, int]:
    best_lp, best_key, count = -math.inf, None, 0
    for b in batches:
        count += len(b.logp)
        finite = np.isfinite(b.logp)
        if not finite.any():
            continue
        if not finite.all():
            b = CompleteBatch(b.content[finite], b.logp[finite], b.term[finite], None)
        lp, key = _batch_best(b)
        if best_key is None or ranks_before(lp, key, best_lp, best_key):
            best_lp, best_key = lp, key
    return best_lp, best_key, count


def _result(best_lp, best_key, count) -> ModeResult:
    stats = SearchStats(nodes_expanded=count)
    if best_key is None:
        return ModeResult(None, -math.inf, stats, True)
    content, term = best_key
    return ModeResult(Sequence(content + (term,), True), best_lp, stats, True)


def brute_force_mode(model: SequenceModel, max_len: int, cap: int = DEFAULT_ENUMERATION_CAP) -> ModeResult:
    """Exhaustive argmax over complete sequences of at most ``max_len`` content tokens.

    ``stats.nodes_expanded`` reports the number of complete sequences scored.
    """
    return _result(*_best_of(enumerate_complete(model, max_len, cap=cap)))


def brute_force_conditional_mode(
    model: SequenceModel, target_length: int, cap: int = DEFAULT_ENUMERATION_CAP
) -> ModeResult:
    return _result(
        *_best_of(enumerate_complete(model, target_length, exact_length=target_length, cap=cap))
    )


def brute_force_top_n(
    model: SequenceModel, n: int, max_len: int, cap: int = DEFAULT_ENUMERATION_CAP
) -> list[tuple[Sequence, float]]:
    rows = []
    for b in enumerate_complete(model, max_len, cap=cap):
        for i in np.flatnonzero(np.isfinite(b.logp)):
            rows.append((float(b.logp[i]), (tuple(int(x) for x in b.content[i]), int(b.term[i]))))
    ranked = sort_scored(rows, score=lambda r: r[0], key=lambda r: r[1])[:n]
    return [(Sequence(c + (t,), True), lp) for lp, (c, t) in ranked]


def brute_force_value_distribution(
    model: SequenceModel,
    increments: np.ndarray,
    max_len: int,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> dict[int, float]:
    """Probability mass of each additive-attribute value, summed over every sequence."""
    # per-batch partial sums, combined exactly so millions of terms do not drift
    partials: dict[int, list[float]] = {}
    for b in enumerate_complete(model, max_len, increments=increments, cap=cap):
        p = np.exp(b.logp)
        for v in np.unique(b.value):
            partials.setdefault(int(v), []).append(float(p[b.value == v].sum()))
    return {v: math.fsum(parts) for v, parts in partials.items()}
