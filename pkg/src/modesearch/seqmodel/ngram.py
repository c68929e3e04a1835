"""Count-based n-gram models with add-delta smoothing.

Seen states use ``(c(s, w) + delta) / (c(s) + delta * |V|)``; states never seen
in training back off to the add-delta unigram distribution. Every
distribution is strictly positive, which keeps DFS pruning bounds finite.
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence as Seq

import numpy as np

from modesearch.errors import ContractViolation
from modesearch.seqmodel.base import SequenceModel, frozen
from modesearch.seqmodel.vocab import DEFAULT_EOS, Vocabulary

BOS = -1
BOS_SYMBOL = "<s>"
DEFAULT_DELTA = 0.1


class NGramModel(SequenceModel):
    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        counts: dict[tuple[tuple[int, ...], int], int],
        delta: float = DEFAULT_DELTA,
    ):
        if order < 1:
            raise ValueError("order must be >= 1")
        if not delta > 0:
            raise ValueError("delta must be positive")
        self.vocab = vocab
        self.order = int(order)
        self.delta = float(delta)
        self.counts = dict(counts)
        V = len(vocab)
        by_state: dict[tuple[int, ...], np.ndarray] = {}
        unigram = np.zeros(V)
        for (state, tok), c in self.counts.items():
            if len(state) != self.order - 1:
                raise ValueError(f"state {state} has wrong width for order {order}")
            if not 0 <= tok < V:
                raise ValueError(f"token id {tok} out of range")
            by_state.setdefault(state, np.zeros(V))[tok] += c
            unigram[tok] += c
        self._backoff = frozen(np.log((unigram + self.delta) / (unigram.sum() + self.delta * V)))
        self._rows = {
            s: frozen(np.log((row + self.delta) / (row.sum() + self.delta * V)))
            for s, row in by_state.items()
        }

    def initial_state(self):
        return (BOS,) * (self.order - 1)

    def advance(self, state, token):
        if self.order == 1:
            return ()
        return state[1:] + (int(token),)

    def logprobs(self, state):
        return self._rows.get(state, self._backoff)

    def is_seen(self, state) -> bool:
        return state in self._rows

    def to_json(self) -> dict:
        def sym(t):
            return BOS_SYMBOL if t == BOS else self.vocab.symbols[t]

        entries = [
            [sym(t) for t in state] + [self.vocab.symbols[tok], c]
            for (state, tok), c in sorted(self.counts.items())
        ]
        return {
            "family": "ngram",
            "order": self.order,
            "delta": self.delta,
            "vocabulary": list(self.vocab.symbols),
            "eos": self.vocab.symbols[self.vocab.eos_id],
            "counts": entries,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NGramModel":
        symbols = tuple(obj["vocabulary"])
        eos = obj.get("eos", DEFAULT_EOS)
        vocab = Vocabulary(symbols, symbols.index(eos))
        order = int(obj["order"])
        counts = {}
        for entry in obj["counts"]:
            *state_syms, tok_sym, c = entry
            if len(state_syms) != order - 1:
                raise ValueError(f"count entry {entry} has wrong width for order {order}")
            state = tuple(BOS if s == BOS_SYMBOL else vocab.index(s) for s in state_syms)
            counts[(state, vocab.index(tok_sym))] = int(c)
        return cls(vocab, order, counts, float(obj.get("delta", DEFAULT_DELTA)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "NGramModel":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_spec(self) -> dict:
        return self.to_json()


def train_ngram(
    corpus: Iterable[Seq[str]],
    order: int,
    delta: float = DEFAULT_DELTA,
    vocab: Vocabulary | None = None,
) -> NGramModel:
    """Count (state, token) events over a corpus of symbol sequences.

    A terminator is appended to each sequence unless it already ends in one.
    Without an explicit ``vocab`` the vocabulary is the sorted corpus symbols
    followed by ``</s>``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    sequences = [list(s) for s in corpus]
    if not sequences:
        raise ContractViolation("cannot train on an empty corpus")
    if vocab is None:
        symbols = sorted({s for seq in sequences for s in seq} - {DEFAULT_EOS})
        vocab = Vocabulary.from_content(symbols)
    counts: Counter = Counter()
    for seq in sequences:
        ids = list(vocab.encode(seq))
        if not ids or not vocab.is_terminator(ids[-1]):
            ids.append(vocab.eos_id)
        if any(vocab.is_terminator(t) for t in ids[:-1]):
            raise ContractViolation("terminator inside a training sequence")
        state = (BOS,) * (order - 1)
        for t in ids:
            counts[(state, t)] += 1
            if order > 1:
                state = state[1:] + (t,)
    return NGramModel(vocab, order, dict(counts), delta)


def read_corpus(path) -> list[list[str]]:
    """UTF-8 text, one whitespace-tokenized sequence per line (blank lines are empty sequences)."""
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def random_ngram(
    rng: np.random.Generator,
    n_content: int,
    order: int,
    n_sequences: int = 40,
    concentration: float = 0.4,
    mean_length: float = 4.0,
    delta: float = DEFAULT_DELTA,
) -> NGramModel:
    """Train an n-gram on a corpus drawn from a random sparse Markov source.

    The source has Dirichlet(``concentration``) transitions, so the fitted
    model is peaked rather than near-uniform; the stop probability targets
    ``mean_length`` content tokens per sequence.
    """
    vocab = Vocabulary.from_content([f"t{i}" for i in range(n_content)])
    stop = 1.0 / (1.0 + mean_length)
    tables: dict[tuple, np.ndarray] = {}
    corpus = []
    for _ in range(n_sequences):
        state = (BOS,) * (order - 1)
        seq = []
        while len(seq) < 4 * mean_length + 4:
            if rng.random() < stop:
                break
            if state not in tables:
                tables[state] = rng.dirichlet(np.full(n_content, concentration))
            w = int(rng.choice(n_content, p=tables[state]))
            seq.append(vocab.symbols[w])
            if order > 1:
                state = state[1:] + (w,)
        corpus.append(seq)
    return train_ngram(corpus, order, delta, vocab)
