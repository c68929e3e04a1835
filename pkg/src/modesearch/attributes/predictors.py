"""Attribute posterior predictors.

A predictor answers: given a prefix and a candidate next token, how is the
attribute of the eventual complete sequence distributed? All predictors here
estimate the distribution of the *future increment* of the attribute's
additive quantity and map it to classes with ``Attribute.class_of``.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Hashable, Iterable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from modesearch.attributes.core import Attribute
from modesearch.errors import ContractViolation, EnumerationCapExceeded
from modesearch.seqmodel.base import SequenceModel, StateTable
from modesearch.seqmodel.sampling import sample_batch

LOG_FLOOR = -1e9
DEFAULT_DP_CAP = 10_000_000
DEFAULT_ROLLOUT_STEPS = 256


def _log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


class AttributePredictor(ABC):
    """Log-distribution over the attribute's classes for ``prefix + token``."""

    def __init__(self, model: SequenceModel, attribute: Attribute):
        self.model = model
        self.attribute = attribute
        self._inc = attribute.increments(model.vocab)

    @property
    def deterministic(self) -> bool:
        return self.attribute.deterministic

    @abstractmethod
    def _future(self, tokens: tuple[int, ...]) -> np.ndarray:
        """Probabilities of future increments ``0..horizon`` (last entry: at least horizon) after an incomplete prefix."""

    def _classes(self, future: np.ndarray, sofar: int) -> np.ndarray:
        out = np.zeros(self.attribute.n_classes)
        for r, p in enumerate(future):
            out[self.attribute.class_of(sofar, r)] += p
        return out

    def _point_mass(self, sofar: int) -> np.ndarray:
        out = np.full(self.attribute.n_classes, -math.inf)
        out[self.attribute.class_of(sofar, 0)] = 0.0
        return out

    def posterior(self, tokens: Iterable[int]) -> np.ndarray:
        """Class log-probabilities for a prefix, or for a complete sequence (point mass)."""
        tokens = tuple(int(t) for t in tokens)
        vocab = self.model.vocab
        if tokens and vocab.is_terminator(tokens[-1]):
            return self._point_mass(self.attribute.value(tokens[:-1]))
        probs = self._classes(self._future(tokens), self.attribute.value(tokens))
        return _log(probs / probs.sum())

    def query(self, prefix: Iterable[int], token: int) -> np.ndarray:
        return self.posterior(tuple(prefix) + (int(token),))

    def target_logprobs(self, prefix: Iterable[int], tokens: Iterable[int], target: int) -> np.ndarray:
        """``log P(A = target | prefix + w)`` for each candidate ``w``, floored at ``LOG_FLOOR``."""
        prefix = tuple(int(t) for t in prefix)
        out = []
        for w in tokens:
            seq = prefix + (int(w),)
            complete = self.model.vocab.is_terminator(int(w))
            sofar = self.attribute.value(seq[:-1] if complete else seq)
            cls = self.attribute.target_class(target, sofar)
            if cls is None:
                out.append(LOG_FLOOR)
                continue
            out.append(max(float(self.posterior(seq)[cls]), LOG_FLOOR))
        return np.array(out, dtype=np.float64)


class UniformPredictor(AttributePredictor):
    """Constant uniform posterior, including on complete sequences.

    Adding a constant to every candidate's score leaves beam selection
    unchanged, which makes this the no-information baseline.
    """

    def _future(self, tokens):
        raise NotImplementedError

    def posterior(self, tokens):
        return np.full(self.attribute.n_classes, -math.log(self.attribute.n_classes))

    def target_logprobs(self, prefix, tokens, target):
        # constant even where the target has become unreachable
        self.attribute.target_class(target, 0)
        return np.full(len(tokens), -math.log(self.attribute.n_classes))


class ExactDPPosterior(AttributePredictor):
    """Exact posterior by dynamic programming over the model's finite state space.

    ``g[s, r]`` is the probability that, from state ``s``, the sequence adds
    exactly ``r`` to the attribute's quantity before terminating; the last
    column collects everything at or beyond the horizon. Column ``r`` solves
    ``(I - P0) g_r = b [r == 0] + P1 g_{r-1}`` where ``P0``/``P1`` are the
    transitions through tokens that leave the quantity unchanged or add one.
    """

    def __init__(self, model: SequenceModel, attribute: Attribute, cap: int = DEFAULT_DP_CAP):
        super().__init__(model, attribute)
        horizon = attribute.horizon
        self.table = StateTable(model, cap=max(1, cap // (horizon + 1)))
        try:
            self.table.closure()
        except EnumerationCapExceeded as exc:
            raise EnumerationCapExceeded(
                f"state space times horizon {horizon + 1} exceeds the cap of {cap}"
            ) from exc
        self.g = self._solve(horizon)
        self._sid_cache: dict[tuple[int, ...], int] = {(): self.table.initial()}
        self._masks: dict[tuple[int, int], np.ndarray] = {}

    def _solve(self, horizon: int) -> np.ndarray:
        vocab = self.model.vocab
        n = len(self.table)
        content = vocab.content_ids
        terms = vocab.terminator_ids
        b = np.zeros(n)
        rows = {0: [], 1: []}
        for s in range(n):
            p = np.exp(self.table.logprobs(s))
            b[s] = p[terms].sum()
            for w in content[p[content] > 0]:
                rows[int(self._inc[w])].append((s, self.table.step(s, int(w)), p[w]))

        def matrix(entries):
            if not entries:
                return sp.csr_matrix((n, n))
            r, c, v = zip(*entries)
            return sp.csr_matrix((v, (r, c)), shape=(n, n))

        P0, P1 = matrix(rows[0]), matrix(rows[1])
        if P0.nnz:
            lu = splu(sp.csc_matrix(sp.identity(n) - P0))
            solve = lu.solve
        else:
            solve = lambda x: x
        g = np.zeros((n, horizon + 1))
        col = solve(b)
        for r in range(horizon):
            g[:, r] = np.clip(col, 0.0, None)
            col = solve(P1 @ g[:, r])
        g[:, horizon] = np.clip(1.0 - g[:, :horizon].sum(axis=1), 0.0, None)
        return g

    def sid(self, tokens: tuple[int, ...]) -> int:
        sid = self._sid_cache.get(tokens)
        if sid is None:
            sid = self.table.step(self.sid(tokens[:-1]), tokens[-1])
            if sid >= self.g.shape[0]:
                raise ContractViolation(f"prefix {tokens} has zero probability under the model")
            self._sid_cache[tokens] = sid
        return sid

    def _future(self, tokens):
        return self.g[self.sid(tokens)]

    def _mask(self, sofar: int, cls: int) -> np.ndarray:
        key = (sofar, cls)
        mask = self._masks.get(key)
        if mask is None:
            mask = np.array([self.attribute.class_of(sofar, r) == cls for r in range(self.g.shape[1])])
            self._masks[key] = mask
        return mask

    def target_logprobs(self, prefix, tokens, target):
        prefix = tuple(int(t) for t in prefix)
        vocab = self.model.vocab
        base_sofar = self.attribute.value(prefix)
        out = np.full(len(tokens), LOG_FLOOR)
        for i, w in enumerate(tokens):
            w = int(w)
            if vocab.is_terminator(w):
                cls = self.attribute.target_class(target, base_sofar)
                if cls == self.attribute.class_of(base_sofar, 0):
                    out[i] = 0.0
                continue
            sofar = base_sofar + int(self._inc[w])
            cls = self.attribute.target_class(target, sofar)
            if cls is None:
                continue
            row = self.g[self.sid(prefix + (w,))]
            p = row[self._mask(sofar, cls)].sum() / row.sum()
            if p > 0:
                out[i] = max(math.log(p), LOG_FLOOR)
        return out


def _future_histogram(increments: np.ndarray, horizon: int) -> np.ndarray:
    return np.bincount(np.minimum(increments, horizon), minlength=horizon + 1).astype(np.float64)


class _SmoothedPredictor(AttributePredictor):
    def __init__(self, model, attribute, smoothing: float):
        super().__init__(model, attribute)
        if smoothing < 0:
            raise ValueError("smoothing must be non-negative")
        self.smoothing = smoothing

    def _smoothed(self, counts_future: np.ndarray, sofar: int) -> np.ndarray:
        probs = self._classes(counts_future, sofar) + self.smoothing
        total = probs.sum()
        if total == 0:
            probs = np.ones_like(probs)
            total = probs.size
        return _log(probs / total)

    def _future_counts(self, tokens) -> np.ndarray:
        raise NotImplementedError

    def _future(self, tokens):
        return self._future_counts(tokens)

    def posterior(self, tokens):
        tokens = tuple(int(t) for t in tokens)
        if tokens and self.model.vocab.is_terminator(tokens[-1]):
            return self._point_mass(self.attribute.value(tokens[:-1]))
        return self._smoothed(self._future_counts(tokens), self.attribute.value(tokens))


class MonteCarloPosterior(_SmoothedPredictor):
    """Class frequencies over ancestral completions of the queried prefix.

    Each query draws its own generator from ``SeedSequence([seed, len(tokens), *tokens])``
    so answers do not depend on query order. Class counts get ``smoothing``
    pseudo-counts (add-1 by default) so every log-probability is finite.
    """

    def __init__(
        self,
        model: SequenceModel,
        attribute: Attribute,
        n_rollouts: int,
        seed: int = 0,
        smoothing: float = 1.0,
        max_steps: int = DEFAULT_ROLLOUT_STEPS,
    ):
        if n_rollouts < 1:
            raise ValueError("n_rollouts must be >= 1")
        super().__init__(model, attribute, smoothing)
        self.n_rollouts = n_rollouts
        self.seed = int(seed)
        self.max_steps = max_steps
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def _future_counts(self, tokens):
        hit = self._cache.get(tokens)
        if hit is not None:
            return hit
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, len(tokens), *tokens]))
        # a fresh table per query keeps state ids, and so the draws, independent of query history
        table = StateTable(self.model)
        sid = table.intern(self.model.state_of(tokens))
        batch = sample_batch(table, sid, self.n_rollouts, self.max_steps, rng)
        tok = batch.tokens
        inc = np.where(tok >= 0, self._inc[np.maximum(tok, 0)], 0)
        inc[np.isin(tok, self.model.vocab.terminator_ids)] = 0
        counts = _future_histogram(inc.sum(axis=1), self.attribute.horizon)
        self._cache[tokens] = counts
        return counts


def _to_json_key(state) -> object:
    if isinstance(state, tuple):
        return [_to_json_key(s) for s in state]
    if isinstance(state, (np.integer,)):
        return int(state)
    return state


def _from_json_key(obj) -> Hashable:
    if isinstance(obj, list):
        return tuple(_from_json_key(o) for o in obj)
    return obj


class TabularPredictor(_SmoothedPredictor):
    """Future-increment counts per (model state, position) from sampled sequences.

    Keys never seen in training back off to the pooled counts over all keys;
    with no training data at all the answer is uniform.
    """

    def __init__(
        self,
        model: SequenceModel,
        attribute: Attribute,
        counts: dict[tuple[Hashable, int], np.ndarray] | None = None,
        smoothing: float = 1.0,
        use_position: bool = True,
    ):
        super().__init__(model, attribute, smoothing)
        self.use_position = use_position
        self.counts = counts or {}
        width = attribute.horizon + 1
        self.marginal = np.zeros(width)
        for c in self.counts.values():
            self.marginal += c

    @classmethod
    def train(
        cls,
        model: SequenceModel,
        attribute: Attribute,
        n_training_samples: int,
        rng=None,
        smoothing: float = 1.0,
        use_position: bool = True,
        max_steps: int = DEFAULT_ROLLOUT_STEPS,
    ) -> "TabularPredictor":
        horizon = attribute.horizon
        counts: dict[tuple[Hashable, int], np.ndarray] = {}
        if n_training_samples > 0:
            rng = np.random.default_rng(rng)
            table = StateTable(model)
            batch = sample_batch(table, table.initial(), n_training_samples, max_steps, rng)
            inc_table = attribute.increments(model.vocab)
            term = np.isin(batch.tokens, model.vocab.terminator_ids)
            inc = np.where((batch.tokens >= 0) & ~term, inc_table[np.maximum(batch.tokens, 0)], 0)
            # future increment from position t = sum of increments at steps >= t
            future = np.cumsum(inc[:, ::-1], axis=1)[:, ::-1]
            for i in np.flatnonzero(batch.terminated):
                n_steps = int(batch.lengths[i]) + 1
                for t in range(n_steps):
                    key = (table.states[int(batch.states[i, t])], t if use_position else 0)
                    row = counts.get(key)
                    if row is None:
                        row = counts[key] = np.zeros(horizon + 1)
                    row[min(int(future[i, t]), horizon)] += 1
        return cls(model, attribute, counts, smoothing, use_position)

    def _future_counts(self, tokens):
        key = (self.model.state_of(tokens), len(tokens) if self.use_position else 0)
        row = self.counts.get(key)
        return self.marginal if row is None else row

    def to_json(self) -> dict:
        return {
            "attribute": self.attribute.name,
            "key_space": {"fields": ["state", "position"], "use_position": self.use_position,
                          "horizon": self.attribute.horizon},
            "smoothing": self.smoothing,
            "counts": [
                [_to_json_key(state), pos, [int(x) for x in row]]
                for (state, pos), row in sorted(self.counts.items(), key=lambda kv: repr(kv[0]))
            ],
        }

    @classmethod
    def from_json(cls, obj: dict, model: SequenceModel, attribute: Attribute) -> "TabularPredictor":
        if obj.get("attribute") != attribute.name:
            raise ValueError(f"table is for attribute {obj.get('attribute')!r}, not {attribute.name!r}")
        width = attribute.horizon + 1
        counts = {}
        for state, pos, row in obj["counts"]:
            if len(row) != width:
                raise ValueError("count row width does not match the attribute horizon")
            counts[(_from_json_key(state), int(pos))] = np.asarray(row, dtype=np.float64)
        return cls(model, attribute, counts, float(obj.get("smoothing", 1.0)),
                   bool(obj["key_space"]["use_position"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def make_predictor(
    kind: str,
    model: SequenceModel,
    attribute: Attribute,
    *,
    n_samples: int = 1000,
    seed: int = 0,
    cap: int = DEFAULT_DP_CAP,
) -> AttributePredictor:
    """Build a predictor by CLI name: ``exact``, ``mc``, ``tabular`` or ``uniform``."""
    if kind == "exact":
        return ExactDPPosterior(model, attribute, cap=cap)
    if kind == "mc":
        return MonteCarloPosterior(model, attribute, n_samples, seed=seed)
    if kind == "tabular":
        return TabularPredictor.train(model, attribute, n_samples, rng=seed)
    if kind == "uniform":
        return UniformPredictor(model, attribute)
    raise ValueError(f"unknown predictor {kind!r}; expected exact, mc, tabular or uniform")
