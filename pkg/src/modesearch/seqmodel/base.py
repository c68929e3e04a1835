"""The autoregressive model contract and sequence primitives.

A model is a deterministic finite-or-countable state machine over a
vocabulary: ``initial_state`` -> ``advance(state, token)`` -> ... with
``logprobs(state)`` giving the next-token log-distribution. The per-token
state is what the search code treats as the model's incremental cache.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Hashable, Iterable

import numpy as np
from scipy.special import logsumexp

from modesearch.errors import ContractViolation, EnumerationCapExceeded
from modesearch.seqmodel.vocab import Vocabulary

NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class Sequence:
    """Token ids; ``complete`` when the last token is a terminator.

    ``truncated`` marks samples that hit the length cap and had a terminator
    appended rather than emitted by the model.
    """

    tokens: tuple[int, ...]
    complete: bool
    truncated: bool = False

    @classmethod
    def of(cls, tokens: Iterable[int], vocab: Vocabulary, truncated: bool = False) -> "Sequence":
        tokens = tuple(int(t) for t in tokens)
        for t in tokens[:-1]:
            if vocab.is_terminator(t):
                raise ContractViolation("terminator appears before the final position")
        complete = bool(tokens) and vocab.is_terminator(tokens[-1])
        return cls(tokens, complete, truncated)

    @property
    def content(self) -> tuple[int, ...]:
        return self.tokens[:-1] if self.complete else self.tokens

    def __len__(self) -> int:
        return len(self.tokens)


def _as_tokens(seq) -> tuple[int, ...]:
    if isinstance(seq, Sequence):
        return seq.tokens
    return tuple(int(t) for t in seq)


class SequenceModel(ABC):
    """Next-token distributions keyed by a hashable incremental state.

    Subclasses must be immutable after construction: the same state always
    yields the same distribution, and instances are shared between searches.
    """

    vocab: Vocabulary

    @abstractmethod
    def initial_state(self) -> Hashable: ...

    @abstractmethod
    def advance(self, state: Hashable, token: int) -> Hashable:
        """State after appending the content token ``token``."""

    @abstractmethod
    def logprobs(self, state: Hashable) -> np.ndarray:
        """Log-probabilities over the full vocabulary (read-only array)."""

    def state_of(self, prefix: Iterable[int]) -> Hashable:
        state = self.initial_state()
        for t in prefix:
            if self.vocab.is_terminator(t):
                raise ContractViolation("cannot extend a prefix that is already complete")
            state = self.advance(state, t)
        return state

    def next_logprobs(self, prefix) -> np.ndarray:
        return self.logprobs(self.state_of(_as_tokens(prefix)))

    def sequence_logprob(self, seq) -> float:
        tokens = _as_tokens(seq)
        if not tokens or not self.vocab.is_terminator(tokens[-1]):
            raise ContractViolation("sequence_logprob needs a complete sequence")
        state = self.initial_state()
        total = 0.0
        for t in tokens[:-1]:
            if self.vocab.is_terminator(t):
                raise ContractViolation("terminator appears before the final position")
            total += float(self.logprobs(state)[t])
            state = self.advance(state, t)
        return total + float(self.logprobs(state)[tokens[-1]])


def next_logprobs(model: SequenceModel, prefix) -> np.ndarray:
    return model.next_logprobs(prefix)


def sequence_logprob(model: SequenceModel, seq) -> float:
    return model.sequence_logprob(seq)


def log_normalizer(logp: np.ndarray) -> float:
    return float(logsumexp(logp))


def check_normalized(logp: np.ndarray, tol: float = NORMALIZATION_TOL) -> None:
    if np.isnan(logp).any():
        raise ContractViolation("log-distribution contains NaN")
    z = log_normalizer(logp)
    if abs(z) > tol:
        raise ContractViolation(f"log-distribution sums to exp({z:.3g}), not 1")


def frozen(arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def safe_log(p) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=np.float64))


class StateTable:
    """Interns model states as small ints and memoizes transitions.

    Vectorized routines (enumeration, batch sampling, the posterior DP) work
    on integer state ids; this is the only place they touch model states.
    """

    def __init__(self, model: SequenceModel, cap: int | None = None):
        self.model = model
        self.cap = cap
        self.states: list[Hashable] = []
        self._ids: dict[Hashable, int] = {}
        self._lp: list[np.ndarray] = []
        self._next: dict[tuple[int, int], int] = {}

    def __len__(self) -> int:
        return len(self.states)

    def intern(self, state: Hashable) -> int:
        sid = self._ids.get(state)
        if sid is None:
            if self.cap is not None and len(self.states) >= self.cap:
                raise EnumerationCapExceeded(f"more than {self.cap} distinct model states")
            sid = len(self.states)
            self._ids[state] = sid
            self.states.append(state)
            self._lp.append(self.model.logprobs(state))
        return sid

    def initial(self) -> int:
        return self.intern(self.model.initial_state())

    def logprobs(self, sid: int) -> np.ndarray:
        return self._lp[sid]

    def step(self, sid: int, token: int) -> int:
        key = (sid, token)
        nxt = self._next.get(key)
        if nxt is None:
            nxt = self.intern(self.model.advance(self.states[sid], int(token)))
            self._next[key] = nxt
        return nxt

    def closure(self) -> None:
        """Intern every state reachable through finite-probability content tokens."""
        content = self.model.vocab.content_ids
        frontier = [self.initial()]
        seen = set(frontier)
        while frontier:
            sid = frontier.pop()
            lp = self._lp[sid]
            for w in content[np.isfinite(lp[content])]:
                nxt = self.step(sid, int(w))
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
