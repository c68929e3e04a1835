from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from modesearch.seqmodel.base import Sequence, SequenceModel, StateTable

DEFAULT_MAX_LEN = 256


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _tempered(logp: np.ndarray, temperature: float) -> np.ndarray:
    scaled = np.where(np.isfinite(logp), logp / temperature, -np.inf)
    return np.exp(scaled - logsumexp(scaled))


def sample(
    model: SequenceModel,
    max_len: int = DEFAULT_MAX_LEN,
    temperature: float = 1.0,
    rng=None,
    prefix=(),
) -> Sequence:
    """Ancestral sample, continuing ``prefix`` if given.

    Logits are divided by ``temperature``. If ``max_len`` content tokens are
    emitted without a terminator, EOS is appended and the result is flagged
    ``truncated``.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    rng = as_rng(rng)
    vocab = model.vocab
    tokens = list(prefix)
    state = model.state_of(tokens)
    while len(tokens) < max_len:
        p = _tempered(model.logprobs(state), temperature)
        w = int(rng.choice(len(p), p=p))
        tokens.append(w)
        if vocab.is_terminator(w):
            return Sequence(tuple(tokens), True)
        state = model.advance(state, w)
    return Sequence(tuple(tokens) + (vocab.eos_id,), True, truncated=True)


def greedy(model: SequenceModel, max_len: int = DEFAULT_MAX_LEN) -> Sequence:
    """Argmax decoding; ties go to the lowest token id."""
    vocab = model.vocab
    tokens: list[int] = []
    state = model.initial_state()
    while len(tokens) < max_len:
        w = int(np.argmax(model.logprobs(state)))
        tokens.append(w)
        if vocab.is_terminator(w):
            return Sequence(tuple(tokens), True)
        state = model.advance(state, w)
    return Sequence(tuple(tokens) + (vocab.eos_id,), True, truncated=True)


@dataclass
class SampleBatch:
    """``n`` ancestral continuations from a common start state.

    ``tokens`` is ``(n, steps)`` padded with -1; ``lengths`` counts generated
    content tokens; ``terminated`` is False for rows cut at ``max_steps``.
    """

    tokens: np.ndarray
    lengths: np.ndarray
    terminated: np.ndarray
    logprob: np.ndarray
    states: np.ndarray = field(repr=False)


def sample_batch(
    table: StateTable,
    start_sid: int,
    n: int,
    max_steps: int,
    rng: np.random.Generator,
) -> SampleBatch:
    """Vectorized ancestral sampling of ``n`` continuations of one state.

    Rows sharing a state at a step are drawn together, so the Python work per
    step scales with the number of distinct live states, not with ``n``.
    ``states`` records the state id of each row before each step.
    """
    vocab = table.model.vocab
    V = len(vocab)
    is_term = np.zeros(V, dtype=bool)
    is_term[vocab.terminator_ids] = True
    tokens = np.full((n, max_steps), -1, dtype=np.int64)
    states = np.full((n, max_steps + 1), -1, dtype=np.int64)
    sid = np.full(n, start_sid, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    lengths = np.zeros(n, dtype=np.int64)
    logprob = np.zeros(n)
    for step in range(max_steps):
        rows = np.flatnonzero(alive)
        if rows.size == 0:
            break
        current = sid[rows].copy()
        states[rows, step] = current
        for u in np.unique(current):
            members = rows[current == u]
            lp = table.logprobs(int(u))
            p = np.exp(lp)
            draws = rng.choice(V, size=members.size, p=p / p.sum())
            tokens[members, step] = draws
            logprob[members] += lp[draws]
            ended = is_term[draws]
            alive[members[ended]] = False
            cont = members[~ended]
            lengths[cont] += 1
            if cont.size:
                nxt = {int(w): table.step(int(u), int(w)) for w in np.unique(draws[~ended])}
                sid[cont] = [nxt[int(w)] for w in draws[~ended]]
    states[alive, max_steps] = sid[alive]
    return SampleBatch(tokens, lengths, ~alive, logprob, states)


@dataclass
class EntropyEstimate:
    mean_nll: float
    per_sample_nll: list[float]
    n_truncated: int = 0


def entropy_estimate(
    model: SequenceModel,
    n_samples: int,
    rng=None,
    max_len: int = DEFAULT_MAX_LEN,
    include_truncated: bool = False,
) -> EntropyEstimate:
    """Monte-Carlo entropy: mean negative log-probability of ancestral samples.

    Truncated samples are excluded unless ``include_truncated`` (the estimator
    is unbiased only over complete sequences).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    table = StateTable(model)
    # a row still running after max_len tokens is a truncated sample
    batch = sample_batch(table, table.initial(), n_samples, max_len, as_rng(rng))
    nll = []
    for row, lp, done in zip(batch.tokens, batch.logprob, batch.terminated):
        if done:
            nll.append(-float(lp))
        elif include_truncated:
            tokens = tuple(int(t) for t in row) + (model.vocab.eos_id,)
            nll.append(-model.sequence_logprob(tokens))
    n_trunc = int((~batch.terminated).sum())
    if not nll:
        raise RuntimeError("every sample was truncated; raise max_len")
    return EntropyEstimate(float(np.mean(nll)), nll, n_trunc)
