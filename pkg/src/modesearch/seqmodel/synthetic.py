"""Analytic sequence distributions whose modes are known in closed form.

These are the oracle models for the search code: biased coin flips,
variable-length strings that are uniform within each length, independently
filled templates with one common and many rare words per slot, per-position
typo corruption of a clean model, and a clean model mixed with a single
degenerate output.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence as Seq

import numpy as np

from modesearch.errors import ContractViolation
from modesearch.seqmodel.base import SequenceModel, frozen, safe_log
from modesearch.seqmodel.vocab import DEFAULT_EOS, Vocabulary


def _check_prob(name: str, p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"{name} must be a probability, got {p}")
    return p


class BiasedCoin(SequenceModel):
    """``n_flips`` independent flips, then EOS with certainty."""

    def __init__(self, p_heads: float, n_flips: int):
        self.p_heads = _check_prob("p_heads", p_heads)
        if n_flips < 0:
            raise ValueError("n_flips must be non-negative")
        self.n_flips = int(n_flips)
        self.vocab = Vocabulary(("H", "T", DEFAULT_EOS), eos_id=2)
        self._flip = frozen(safe_log([self.p_heads, 1.0 - self.p_heads, 0.0]))
        self._stop = frozen(safe_log([0.0, 0.0, 1.0]))

    def initial_state(self):
        return 0

    def advance(self, state, token):
        return state + 1

    def logprobs(self, state):
        return self._flip if state < self.n_flips else self._stop

    def to_spec(self) -> dict:
        return {"family": "biased_coin", "p_heads": self.p_heads, "n_flips": self.n_flips}


class UniformByLength(SequenceModel):
    """Length ``l`` drawn from ``length_profile``; content uniform over ``v`` symbols.

    Every string of length ``l`` has probability ``p_l / v**l``.
    """

    def __init__(self, length_profile: Seq[float], v: int):
        p = np.asarray(length_profile, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("length_profile must be a non-empty vector")
        if (p < 0).any() or (p > 1).any():
            raise ValueError("length_profile entries must be probabilities")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"length_profile sums to {p.sum()}, not 1")
        if v < 1:
            raise ValueError("v must be at least 1")
        self.length_profile = p / p.sum()
        self.v = int(v)
        self.max_length = p.size - 1
        self.vocab = Vocabulary.from_content([f"w{i}" for i in range(self.v)])
        # tail[t] = P(length >= t)
        tail = np.cumsum(self.length_profile[::-1])[::-1]
        log_tail = safe_log(tail)
        log_p = safe_log(self.length_profile)
        rows = []
        for t in range(self.max_length + 1):
            row = np.full(len(self.vocab), -np.inf)
            if tail[t] <= 0.0:
                row[self.vocab.eos_id] = 0.0
            elif t == self.max_length:
                row[self.vocab.eos_id] = 0.0
            else:
                row[self.vocab.eos_id] = log_p[t] - log_tail[t]
                row[: self.v] = log_tail[t + 1] - log_tail[t] - math.log(self.v)
            rows.append(frozen(row))
        self._rows = rows

    def initial_state(self):
        return 0

    def advance(self, state, token):
        return min(state + 1, self.max_length)

    def logprobs(self, state):
        return self._rows[state]

    def modal_length(self) -> int:
        """Most likely length; smallest on ties."""
        return int(np.argmax(self.length_profile))

    def to_spec(self) -> dict:
        return {"family": "uniform_by_length", "length_profile": self.length_profile.tolist(), "v": self.v}


class Template(SequenceModel):
    """``slots`` positions filled independently: one common word or one of ``rare_count`` rare words.

    Token 0 is the common word, tokens ``1..rare_count`` are rare; each rare
    word gets ``(1 - common_prob) / rare_count``.
    """

    def __init__(self, slots: int = 4, common_prob: float = 0.1, rare_count: int = 90):
        self.slots = int(slots)
        self.common_prob = _check_prob("common_prob", common_prob)
        self.rare_count = int(rare_count)
        if self.slots < 0 or self.rare_count < 0:
            raise ValueError("slots and rare_count must be non-negative")
        if self.rare_count == 0 and self.common_prob != 1.0:
            raise ValueError("with no rare words the common word must have probability 1")
        self.rare_prob = (1.0 - self.common_prob) / self.rare_count if self.rare_count else 0.0
        symbols = ["common"] + [f"rare{j}" for j in range(self.rare_count)]
        self.vocab = Vocabulary.from_content(symbols)
        fill = np.full(len(self.vocab), -np.inf)
        fill[0] = safe_log(self.common_prob)
        fill[1 : self.rare_count + 1] = safe_log(self.rare_prob)
        self._fill = frozen(fill)
        stop = np.full(len(self.vocab), -np.inf)
        stop[self.vocab.eos_id] = 0.0
        self._stop = frozen(stop)

    @property
    def rare_ids(self) -> frozenset[int]:
        return frozenset(range(1, self.rare_count + 1))

    def initial_state(self):
        return 0

    def advance(self, state, token):
        return state + 1

    def logprobs(self, state):
        return self._fill if state < self.slots else self._stop

    def to_spec(self) -> dict:
        return {
            "family": "template",
            "slots": self.slots,
            "common_prob": self.common_prob,
            "rare_count": self.rare_count,
        }


class ExplicitDistribution(SequenceModel):
    """A finite distribution given as (content symbols, probability) pairs, stored as a trie."""

    def __init__(self, outputs: Iterable[tuple[Seq[str], float]], eos: str = DEFAULT_EOS):
        outputs = [(tuple(toks), float(p)) for toks, p in outputs]
        if not outputs:
            raise ValueError("explicit distribution needs at least one output")
        total = sum(p for _, p in outputs)
        if abs(total - 1.0) > 1e-9 or any(p < 0 for _, p in outputs):
            raise ValueError(f"output probabilities must be non-negative and sum to 1 (got {total})")
        if len({toks for toks, _ in outputs}) != len(outputs):
            raise ValueError("duplicate outputs")
        symbols = sorted({s for toks, _ in outputs for s in toks})
        if eos in symbols:
            raise ValueError("outputs must not contain the terminator symbol")
        if not symbols:
            symbols = ["<unused>"]
        self.vocab = Vocabulary.from_content(symbols, eos)
        self.outputs = [(self.vocab.encode(toks), p) for toks, p in outputs]
        # node -> mass of all outputs under it; children keyed by token
        mass: dict[tuple, float] = {}
        ends: dict[tuple, float] = {}
        for toks, p in self.outputs:
            for i in range(len(toks) + 1):
                mass[toks[:i]] = mass.get(toks[:i], 0.0) + p
            ends[toks] = p
        probs = {node: np.zeros(len(self.vocab)) for node in mass}
        for node, m in mass.items():
            if m <= 0:
                probs[node][self.vocab.eos_id] = 1.0
                continue
            probs[node][self.vocab.eos_id] = ends.get(node, 0.0) / m
            if node:
                parent = node[:-1]
                if mass[parent] > 0:
                    probs[parent][node[-1]] = m / mass[parent]
        self._rows = {node: frozen(safe_log(row)) for node, row in probs.items()}
        dead = np.full(len(self.vocab), -np.inf)
        dead[self.vocab.eos_id] = 0.0
        self._dead = frozen(dead)

    def initial_state(self):
        return ()

    def advance(self, state, token):
        return state + (int(token),)

    def logprobs(self, state):
        return self._rows.get(state, self._dead)

    def to_spec(self) -> dict:
        return {
            "family": "explicit",
            "outputs": [[self.vocab.decode(t), p] for t, p in self.outputs],
        }


class IndependentErrors(SequenceModel):
    """Each content token of ``clean`` is replaced by its typo variant with probability ``p_e``.

    The typo variant of symbol ``s`` is the new symbol ``s + "~"``, disjoint from
    the clean vocabulary, so the number of typos is read directly off the output.
    """

    def __init__(self, clean: SequenceModel, p_e: float):
        self.clean = clean
        self.p_e = _check_prob("p_e", p_e)
        cv = clean.vocab
        content = [int(i) for i in cv.content_ids]
        typo_symbols = [cv.symbols[i] + "~" for i in content]
        clash = set(typo_symbols) & set(cv.symbols)
        if clash:
            raise ValueError(f"typo symbols collide with clean vocabulary: {sorted(clash)}")
        self.vocab = Vocabulary(cv.symbols + tuple(typo_symbols), cv.eos_id, cv.terminators)
        self.typo_of = {c: len(cv) + j for j, c in enumerate(content)}
        self._clean_of = {v: k for k, v in self.typo_of.items()}
        self._content = np.array(content, dtype=np.int64)
        self._typo = np.array([self.typo_of[c] for c in content], dtype=np.int64)
        self._keep = math.log1p(-self.p_e) if self.p_e < 1.0 else -math.inf
        self._flip = math.log(self.p_e) if self.p_e > 0.0 else -math.inf

    @property
    def typo_ids(self) -> frozenset[int]:
        return frozenset(self._clean_of)

    def initial_state(self):
        return self.clean.initial_state()

    def advance(self, state, token):
        return self.clean.advance(state, self._clean_of.get(int(token), int(token)))

    def logprobs(self, state):
        lp = self.clean.logprobs(state)
        out = np.full(len(self.vocab), -np.inf)
        n = len(lp)
        out[:n] = lp
        out[self._content] = lp[self._content] + self._keep
        out[self._typo] = lp[self._content] + self._flip
        return frozen(out)

    def to_spec(self) -> dict:
        return {"family": "independent_errors", "p_e": self.p_e, "clean": self.clean.to_spec()}


class NoiseMixture(SequenceModel):
    """``(1 - epsilon) * clean + epsilon * [y == y_bad]`` as an autoregressive model.

    The state carries the posterior weight of the degenerate component while
    the prefix still agrees with ``y_bad``; once it diverges the model is the
    clean model.
    """

    def __init__(self, clean: SequenceModel, epsilon: float, y_bad: Seq[int] = ()):
        self.clean = clean
        self.epsilon = _check_prob("epsilon", epsilon)
        self.vocab = clean.vocab
        y_bad = tuple(int(t) for t in y_bad)
        if any(self.vocab.is_terminator(t) for t in y_bad):
            raise ContractViolation("y_bad is given as content tokens; the terminator is implicit")
        if any(not 0 <= t < len(self.vocab) for t in y_bad):
            raise ContractViolation("y_bad token out of range")
        self.y_bad = y_bad + (self.vocab.eos_id,)

    def initial_state(self):
        cs = self.clean.initial_state()
        if self.epsilon == 0.0:
            return (cs, None, -math.inf, 0.0)
        log_clean = math.log1p(-self.epsilon) if self.epsilon < 1.0 else -math.inf
        return (cs, 0, math.log(self.epsilon), log_clean)

    def _mix(self, state):
        cs, k, lw, lc = state
        lp = self.clean.logprobs(cs)
        if k is None:
            return lp
        mixed = lc + lp if math.isfinite(lc) else np.full(len(lp), -np.inf)
        b = self.y_bad[k]
        mixed = np.array(mixed)
        mixed[b] = np.logaddexp(mixed[b], lw)
        return mixed

    def advance(self, state, token):
        cs, k, lw, lc = state
        token = int(token)
        ncs = self.clean.advance(cs, token)
        if k is None or self.y_bad[k] != token:
            return (ncs, None, -math.inf, 0.0)
        mixed = self._mix(state)
        lp = self.clean.logprobs(cs)
        z = mixed[token]
        new_lc = lc + lp[token] - z if math.isfinite(lc) and math.isfinite(lp[token]) else -math.inf
        return (ncs, k + 1, lw - z, new_lc)

    def logprobs(self, state):
        return frozen(self._mix(state))

    def to_spec(self) -> dict:
        return {
            "family": "noise_mixture",
            "epsilon": self.epsilon,
            "y_bad": self.vocab.decode(self.y_bad[:-1]),
            "clean": self.clean.to_spec(),
        }
