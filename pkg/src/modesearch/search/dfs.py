"""Exact MAP search by depth-first branch and bound.

Two facts make the search tractable: appending a token can only lower a
prefix's log-probability, so any prefix that cannot beat the incumbent is
discarded with its whole subtree; and every expanded node already has the
terminator's probability in hand, so each node offers its own completion as
a candidate incumbent. Children are visited in descending next-token
probability so good incumbents turn up early.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from modesearch.ordering import ranks_before
from modesearch.search.ledger import CacheLedger, LedgerNode
from modesearch.seqmodel.base import Sequence, SequenceModel

BOS_STEP = "<bos>"
DEFAULT_MAX_NODES = 1_000_000


@dataclass(frozen=True)
class SearchBudget:
    max_nodes: int = DEFAULT_MAX_NODES
    max_depth: int | None = None

    def __post_init__(self):
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


@dataclass
class SearchStats:
    nodes_expanded: int = 0
    subtrees_pruned: int = 0
    incumbent_updates: int = 0
    cache_reconstitutions: int = 0
    peak_stored_full_caches: int = 0
    max_node_materializations: int = 0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class ModeResult:
    best: Sequence | None
    best_logprob: float
    stats: SearchStats
    exhausted: bool

    @property
    def empty(self) -> bool:
        return self.best is not None and len(self.best.content) == 0


@dataclass
class _Frame:
    prefix: tuple[int, ...]
    state: object
    logp: float
    lp: np.ndarray
    order: np.ndarray
    node: LedgerNode
    i: int = 0


@dataclass
class _Incumbents:
    """Best-first list of at most ``n`` complete candidates ``(logp, (content, term))``."""

    n: int
    items: list = field(default_factory=list)

    def admits(self, logp: float, key: tuple) -> bool:
        if len(self.items) < self.n:
            return True
        worst = self.items[-1]
        return ranks_before(logp, key, worst[0], worst[1])

    def offer(self, logp: float, key: tuple) -> bool:
        if not math.isfinite(logp) or not self.admits(logp, key):
            return False
        pos = len(self.items)
        while pos > 0 and ranks_before(logp, key, *self.items[pos - 1]):
            pos -= 1
        self.items.insert(pos, (logp, key))
        del self.items[self.n :]
        return True


def _search(
    model: SequenceModel,
    *,
    max_len: int,
    target_length: int | None,
    n: int,
    budget: SearchBudget,
    prune: bool,
    ledger: CacheLedger | None,
    verify_cache: bool = False,
):
    vocab = model.vocab
    terms = [int(t) for t in vocab.terminator_ids]
    content = vocab.content_ids
    conditional = target_length is not None
    needed = target_length if conditional else max_len
    depth_limit = needed
    depth_cut = False
    if budget.max_depth is not None and budget.max_depth < needed:
        depth_limit = budget.max_depth
        depth_cut = True
    stats = SearchStats()
    ledger = ledger if ledger is not None else CacheLedger()
    inc = _Incumbents(n)

    def expand(prefix, state, logp, node) -> _Frame:
        stats.nodes_expanded += 1
        lp = model.logprobs(state)
        depth = len(prefix)
        if not conditional or depth == target_length:
            for t in terms:
                if inc.offer(logp + lp[t], (prefix, t)):
                    stats.incumbent_updates += 1
        if depth < depth_limit:
            cand = content[np.isfinite(lp[content])]
            order = cand[np.argsort(-lp[cand], kind="stable")]
        else:
            order = content[:0]
        return _Frame(prefix, state, logp, lp, order, node)

    root_node = ledger.root(BOS_STEP)
    stack = [expand((), model.initial_state(), 0.0, root_node)]
    exhausted = True
    while stack:
        f = stack[-1]
        child = None
        while f.i < len(f.order):
            w = int(f.order[f.i])
            f.i += 1
            clogp = f.logp + f.lp[w]
            if prune and not inc.admits(clogp, (f.prefix + (w,), -1)):
                # siblings come in descending probability, so none of the rest can do better
                stats.subtrees_pruned += len(f.order) - f.i + 1
                f.i = len(f.order)
                break
            child = (w, clogp)
            break
        if child is None:
            stack.pop()
            ledger.leave(f.node)
            continue
        if stats.nodes_expanded >= budget.max_nodes:
            exhausted = False
            break
        w, clogp = child
        node, rebuilt = ledger.enter_child(f.node, w)
        if verify_cache and rebuilt is not None and rebuilt != (BOS_STEP,) + f.prefix:
            raise RuntimeError(f"reconstituted cache {rebuilt} does not match prefix {f.prefix}")
        stack.append(expand(f.prefix + (w,), model.advance(f.state, w), clogp, node))

    stats.cache_reconstitutions = ledger.reconstitutions
    stats.peak_stored_full_caches = ledger.peak_stored
    stats.max_node_materializations = ledger.max_materializations
    results = []
    for logp, (content_toks, term) in inc.items:
        results.append(Sequence(tuple(content_toks) + (term,), True))
    return results, [float(x[0]) for x in inc.items], stats, exhausted and not depth_cut


def _check_model_len(max_len: int) -> None:
    if max_len < 0:
        raise ValueError("max_len must be non-negative")


def exact_mode(
    model: SequenceModel,
    max_len: int,
    budget: SearchBudget | None = None,
    *,
    prune: bool = True,
    ledger: CacheLedger | None = None,
    verify_cache: bool = False,
) -> ModeResult:
    """Global argmax over complete sequences with at most ``max_len`` content tokens.

    With ``exhausted=True`` the result is certified optimal; when the node
    budget runs out the best sequence found so far is returned instead.
    """
    _check_model_len(max_len)
    budget = budget or SearchBudget()
    seqs, scores, stats, exhausted = _search(
        model, max_len=max_len, target_length=None, n=1, budget=budget,
        prune=prune, ledger=ledger, verify_cache=verify_cache,
    )
    if not seqs:
        return ModeResult(None, -math.inf, stats, exhausted)
    return ModeResult(seqs[0], scores[0], stats, exhausted)


def exact_conditional_mode(
    model: SequenceModel,
    target_length: int,
    budget: SearchBudget | None = None,
    *,
    prune: bool = True,
    ledger: CacheLedger | None = None,
) -> ModeResult:
    """Argmax over complete sequences with exactly ``target_length`` content tokens.

    The terminator is only considered at depth ``target_length``, so shallow
    nodes contribute no candidates and a subtree is dropped only when its
    prefix is already no better than the best full-length sequence found.
    """
    if target_length < 0:
        raise ValueError("target_length must be non-negative")
    budget = budget or SearchBudget()
    seqs, scores, stats, exhausted = _search(
        model, max_len=target_length, target_length=target_length, n=1,
        budget=budget, prune=prune, ledger=ledger,
    )
    if not seqs:
        return ModeResult(None, -math.inf, stats, exhausted)
    return ModeResult(seqs[0], scores[0], stats, exhausted)


def exact_top_n(
    model: SequenceModel,
    n: int,
    max_len: int,
    budget: SearchBudget | None = None,
    *,
    prune: bool = True,
) -> list[ModeResult]:
    """The ``n`` most probable complete sequences, best first; the bound is the n-th incumbent."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_model_len(max_len)
    budget = budget or SearchBudget()
    seqs, scores, stats, exhausted = _search(
        model, max_len=max_len, target_length=None, n=n, budget=budget, prune=prune, ledger=None,
    )
    return [ModeResult(s, lp, stats, exhausted) for s, lp in zip(seqs, scores)]
