"""Beam search, length-forced beam search and attribute-conditional beam search.

All three share one loop. Each live hypothesis proposes its ``k`` most
probable next tokens; every candidate carries an unconditional score ``U``
(the chain-rule log-probability of the extended prefix), a conditional score
``C = U + log P(A = a | prefix, w)`` and a selection score
``C' = U + alpha * log P(A = a | prefix, w)``. The next beam is the top ``B``
candidates by ``C'``. The running score ``S`` of a hypothesis only ever
accumulates ``U``, so predictor terms steer selection but never enter the
reported log-probability.

A complete hypothesis stays in the pool as its own single continuation with
unchanged scores. When a hypothesis reaches ``max_len`` content tokens its
only continuation is the terminator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from modesearch.attributes.predictors import AttributePredictor
from modesearch.errors import ContractViolation
from modesearch.ordering import sort_scored
from modesearch.seqmodel.base import Sequence, SequenceModel


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 5
    k: int = 100
    alpha: float = 1.0
    max_len: int = 64
    length_force: int | None = None
    keep_all_complete: bool = False

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if self.max_len < 0:
            raise ValueError("max_len must be non-negative")
        if self.length_force is not None and self.length_force < 0:
            raise ValueError("length_force must be non-negative")


@dataclass
class Hypothesis:
    """A beam entry. ``S`` is the chain-rule log-probability of ``tokens``.

    ``R`` is the running score used for selection before predictor terms: it
    equals ``S`` except under length forcing, where it uses the
    renormalized distributions.
    """

    tokens: tuple[int, ...]
    S: float
    complete: bool
    R: float = 0.0
    C: float = 0.0
    Cp: float = 0.0
    state: object = field(default=None, repr=False, compare=False)

    @property
    def content(self) -> tuple[int, ...]:
        return self.tokens[:-1] if self.complete else self.tokens

    def key(self) -> tuple:
        return (self.content, self.tokens[-1] if self.complete else -1)

    def sequence(self) -> Sequence:
        return Sequence(self.tokens, self.complete)


@dataclass
class StepScores:
    """Per-step score arrays, one row per hypothesis of the previous beam.

    Padding (hypotheses with fewer than ``k`` candidates) is ``-1`` in ``W``
    and ``-inf`` elsewhere. ``R`` is the selection base before predictor
    terms (``U`` unless length forcing is on).
    """

    W: np.ndarray
    U: np.ndarray
    R: np.ndarray
    clf: np.ndarray
    C: np.ndarray
    Cp: np.ndarray
    prefixes: list[tuple[int, ...]] = field(default_factory=list)

    def to_json(self) -> dict:
        def clean(a):
            return [[None if not math.isfinite(x) else float(x) for x in row] for row in a]

        return {
            "prefixes": [list(p) for p in self.prefixes],
            "W": self.W.tolist(),
            "U": clean(self.U),
            "R": clean(self.R),
            "clf": clean(self.clf),
            "C": clean(self.C),
            "Cp": clean(self.Cp),
        }


@dataclass
class BeamResult:
    best: Sequence
    best_logprob: float
    running_score: float
    best_C: float
    beam: list[Hypothesis]
    finished: list[Hypothesis] = field(default_factory=list)
    steps: list[StepScores] | None = None


def _candidates(model, config, hyp, forced, clamp):
    """Proposed tokens with their true and selection log-probabilities."""
    vocab = model.vocab
    lp = model.logprobs(hyp.state)
    n = len(hyp.tokens)
    terms = vocab.terminator_ids
    if n >= clamp:
        # only the terminator may follow
        tok = terms[np.isfinite(lp[terms])]
        if tok.size == 0:
            tok = np.array([vocab.eos_id])
        sel = lp[tok]
        if forced is not None:
            sel = sel - np.logaddexp.reduce(lp[terms])
        return tok, lp[tok], sel
    sel = lp
    if forced is not None:
        eos_mass = float(np.exp(lp[terms]).sum())
        sel = lp - math.log1p(-eos_mass) if eos_mass < 1.0 else np.full_like(lp, -math.inf)
        sel = sel.copy()
        sel[terms] = -math.inf
    finite = np.flatnonzero(np.isfinite(sel))
    # descending probability, lower id first on ties
    order = finite[np.lexsort((finite, -sel[finite]))][: config.k]
    return order, lp[order], sel[order]


def _run(
    model: SequenceModel,
    config: BeamConfig,
    predictor: AttributePredictor | None,
    target: int | None,
    dump: bool,
) -> BeamResult:
    vocab = model.vocab
    forced = config.length_force
    clamp = config.max_len if forced is None else forced
    alpha = config.alpha
    beam = [Hypothesis((), 0.0, False, 0.0, 0.0, 0.0, model.initial_state())]
    finished: list[Hypothesis] = []
    steps: list[StepScores] | None = [] if dump else None

    while not all(h.complete for h in beam):
        pool: list[Hypothesis] = []
        pending: dict[int, tuple] = {}
        rows = []
        for h in beam:
            if h.complete:
                pool.append(h)
                rows.append(None)
                continue
            W, lp_true, lp_sel = _candidates(model, config, h, forced, clamp)
            U = h.S + lp_true
            Rsel = h.R + lp_sel
            if predictor is None:
                clf = np.zeros(len(W))
            else:
                clf = np.asarray(predictor.target_logprobs(h.tokens, W, target), dtype=np.float64)
                if np.isnan(clf).any() or (clf > 1e-9).any():
                    raise ContractViolation(f"predictor returned invalid log-probabilities {clf}")
            C = U + clf
            Cp = Rsel + alpha * clf
            rows.append((W, U, Rsel, clf, C, Cp))
            for i, w in enumerate(W):
                w = int(w)
                done = vocab.is_terminator(w)
                cand = Hypothesis(h.tokens + (w,), float(U[i]), done, float(Rsel[i]), float(C[i]), float(Cp[i]))
                if not done:
                    pending[id(cand)] = (h.state, w)
                pool.append(cand)
        if steps is not None:
            steps.append(_step_scores(rows, config.k, [h.tokens for h in beam]))
        ranked = sort_scored(pool, score=lambda x: x.Cp, key=lambda x: x.key())
        beam = ranked[: config.beam_size]
        if config.keep_all_complete:
            finished.extend(h for h in ranked[config.beam_size :] if h.complete)
        for h in beam:
            # model states are only computed for survivors
            if id(h) in pending:
                h.state = model.advance(*pending[id(h)])

    return _finalize(beam, finished, predictor, forced, steps)


def _step_scores(rows, k, prefixes) -> StepScores:
    n = len(rows)
    W = np.full((n, k), -1, dtype=np.int64)
    arrays = [np.full((n, k), -math.inf) for _ in range(5)]
    for b, row in enumerate(rows):
        if row is None:
            continue
        w = row[0]
        W[b, : len(w)] = w
        for arr, vals in zip(arrays, row[1:]):
            arr[b, : len(w)] = vals
    return StepScores(W, *arrays, prefixes=prefixes)


def _finalize(beam, finished, predictor, forced, steps) -> BeamResult:
    final = beam + finished
    if forced is not None:
        # every output has the target length, so the model's own score decides
        pool = sort_scored(final, score=lambda x: x.S, key=lambda x: x.key())
    elif predictor is None or predictor.deterministic:
        # the top-ranked hypothesis by selection order
        pool = sort_scored(final, score=lambda x: x.Cp, key=lambda x: x.key())
    else:
        pool = sort_scored(final, score=lambda x: x.C, key=lambda x: x.key())
    best = pool[0]
    return BeamResult(best.sequence(), best.S, best.R, best.C, beam, finished, steps)


def beam_search(model: SequenceModel, config: BeamConfig | None = None, *, dump: bool = False) -> BeamResult:
    """Standard beam search; the result is the top-ranked hypothesis of the final beam."""
    config = config or BeamConfig()
    if config.length_force is not None:
        raise ValueError("beam_search does not force lengths; use length_forced_beam")
    return _run(model, config, None, None, dump)


def length_forced_beam(
    model: SequenceModel, target_length: int, config: BeamConfig | None = None, *, dump: bool = False
) -> BeamResult:
    """Beam search whose outputs have exactly ``target_length`` content tokens.

    A target of 0 yields the bare terminator.
    Before the target length the terminators' probability is removed and the
    rest renormalized; at the target length only a terminator may follow.
    Pruning ranks by the renormalized running score ``R``; among the final
    hypotheses, which all have the target length, the one with the highest
    unconditional ``S`` is returned.
    """
    if target_length < 0:
        raise ValueError("target_length must be non-negative")
    config = config or BeamConfig()
    config = replace(config, length_force=target_length, max_len=max(config.max_len, target_length))
    return _run(model, config, None, None, dump)


def conditional_beam_search(
    model: SequenceModel,
    predictor: AttributePredictor,
    target: int,
    config: BeamConfig | None = None,
    *,
    dump: bool = False,
) -> BeamResult:
    """Beam search steered towards complete sequences with attribute value ``target``.

    For deterministic attributes the answer is the top-ranked hypothesis of
    the final beam; otherwise the final hypothesis with the highest ``C``.
    """
    config = config or BeamConfig()
    if predictor.model is not model:
        raise ValueError("predictor was built for a different model")
    predictor.attribute.target_class(target, 0)  # validates the class space
    return _run(model, config, predictor, int(target), dump)
