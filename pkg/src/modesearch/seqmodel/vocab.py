from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from modesearch.errors import ContractViolation

DEFAULT_EOS = "</s>"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token symbols plus the set of terminator ids.

    ``terminators`` defaults to ``{eos_id}``; models that need an alternative
    end marker can pass a larger set.
    """

    symbols: tuple[str, ...]
    eos_id: int
    terminators: frozenset[int] = field(default=frozenset())

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(symbols) < 2:
            raise ValueError("vocabulary needs at least one content token and a terminator")
        if len(set(symbols)) != len(symbols):
            raise ValueError("vocabulary symbols must be unique")
        if not 0 <= self.eos_id < len(symbols):
            raise ValueError(f"eos_id {self.eos_id} out of range")
        terms = frozenset(self.terminators) | {self.eos_id}
        if any(not 0 <= t < len(symbols) for t in terms):
            raise ValueError("terminator id out of range")
        if len(terms) >= len(symbols):
            raise ValueError("vocabulary has no content tokens")
        object.__setattr__(self, "terminators", terms)
        content = np.array([i for i in range(len(symbols)) if i not in terms], dtype=np.int64)
        content.setflags(write=False)
        object.__setattr__(self, "_content", content)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})
        term = np.array(sorted(terms), dtype=np.int64)
        term.setflags(write=False)
        object.__setattr__(self, "_term", term)

    @classmethod
    def from_content(cls, content: Iterable[str], eos: str = DEFAULT_EOS) -> "Vocabulary":
        """Vocabulary with the given content symbols followed by a single EOS."""
        content = list(content)
        return cls(tuple(content) + (eos,), eos_id=len(content))

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def content_ids(self) -> np.ndarray:
        return self._content

    @property
    def terminator_ids(self) -> np.ndarray:
        return self._term

    def is_terminator(self, token: int) -> bool:
        return token in self.terminators

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise ContractViolation(f"token {symbol!r} is not in the vocabulary") from None

    def encode(self, symbols: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.index(s) for s in symbols)

    def decode(self, tokens: Iterable[int]) -> list[str]:
        return [self.symbols[t] for t in tokens]

    def to_json(self) -> dict:
        return {
            "symbols": list(self.symbols),
            "eos_id": self.eos_id,
            "terminators": sorted(self.terminators),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(tuple(obj["symbols"]), obj["eos_id"], frozenset(obj.get("terminators", ())))
