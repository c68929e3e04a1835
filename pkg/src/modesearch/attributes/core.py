"""Attribute functions over complete sequences.

All supported attributes are functions of one additive quantity: the number
of content tokens drawn from a counted set (every content token for length
and emptiness). That lets every predictor work with the distribution of the
*future increment* of this quantity and map it to classes at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from modesearch.errors import ContractViolation
from modesearch.seqmodel.base import Sequence
from modesearch.seqmodel.vocab import Vocabulary

N_LENGTH_CLASSES = 24
_FINE = 17  # remaining lengths 0..16 get their own class


def length_bucket(remaining: int) -> int:
    """Class of a remaining length: 0..16 exact, 17..32 in fours, 33..64 in sixteens, 65+ last."""
    if remaining < 0:
        raise ValueError("remaining length must be non-negative")
    if remaining < _FINE:
        return remaining
    if remaining <= 32:
        return _FINE + (remaining - 17) // 4
    if remaining <= 64:
        return 21 + (remaining - 33) // 16
    return 23


def bucket_bounds(cls: int) -> tuple[int, int | None]:
    """Inclusive remaining-length range of a bucket class (upper ``None`` = unbounded)."""
    if not 0 <= cls < N_LENGTH_CLASSES:
        raise ValueError(f"no length bucket {cls}")
    if cls < _FINE:
        return cls, cls
    if cls < 21:
        lo = 17 + 4 * (cls - _FINE)
        return lo, lo + 3
    if cls < 23:
        lo = 33 + 16 * (cls - 21)
        return lo, lo + 15
    return 65, None


@dataclass(frozen=True)
class Attribute:
    """A finite-valued function of a complete sequence.

    ``kind`` is ``"length"`` (classes index the *remaining* length, bucketed or
    capped at ``max_tracked``), ``"empty"`` (class 1 iff no content tokens) or
    ``"count"`` (number of ``counted`` tokens, capped at ``n_classes - 1``).
    """

    name: str
    kind: str
    n_classes: int
    counted: frozenset[int] | None = None
    bucketed: bool = True
    deterministic: bool = True

    def __post_init__(self):
        if self.kind not in ("length", "empty", "count"):
            raise ValueError(f"unknown attribute kind {self.kind!r}")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")

    # additive quantity ------------------------------------------------------

    def increments(self, vocab: Vocabulary) -> np.ndarray:
        inc = np.zeros(len(vocab), dtype=np.int64)
        if self.counted is None:
            inc[vocab.content_ids] = 1
        else:
            inc[list(self.counted)] = 1
        return inc

    def value(self, content: Iterable[int]) -> int:
        content = list(content)
        if self.counted is None:
            return len(content)
        return sum(1 for t in content if t in self.counted)

    @property
    def horizon(self) -> int:
        """Increments at or beyond this are indistinguishable for every class mapping."""
        if self.kind == "length":
            return 65 if self.bucketed else self.n_classes - 1
        if self.kind == "empty":
            return 1
        return self.n_classes - 1

    # class mapping ------------------------------------------------------------

    def class_of(self, sofar: int, future: int) -> int:
        """Class of a sequence whose prefix value is ``sofar`` and whose remainder adds ``future``."""
        if self.kind == "length":
            if self.bucketed:
                return length_bucket(future)
            return min(future, self.n_classes - 1)
        if self.kind == "empty":
            return 1 if sofar + future == 0 else 0
        return min(sofar + future, self.n_classes - 1)

    def target_class(self, target: int, sofar: int) -> int | None:
        """Class the predictor must put mass on for the final value to equal ``target``.

        For length the classes are relative to the prefix; ``None`` means the
        target is already unreachable.
        """
        if self.kind == "length":
            remaining = target - sofar
            if remaining < 0:
                return None
            return self.class_of(sofar, remaining)
        if not 0 <= target < self.n_classes:
            raise ContractViolation(f"target {target} outside the {self.n_classes} classes of {self.name}")
        if self.kind == "count" and target < sofar:
            return None
        return int(target)

    def evaluate(self, seq: Sequence) -> int:
        if not seq.complete:
            raise ContractViolation(f"attribute {self.name} needs a complete sequence")
        return self.class_of(0, self.value(seq.content))

    def with_deterministic(self, deterministic: bool) -> "Attribute":
        return replace(self, deterministic=deterministic)


def length_attribute(max_tracked: int = 64, bucketed: bool = True) -> Attribute:
    """Length; with ``bucketed`` the 24-class remaining-length scheme, else classes ``0..max_tracked``."""
    n = N_LENGTH_CLASSES if bucketed else max_tracked + 1
    return Attribute("length", "length", n, None, bucketed)


def emptiness_attribute() -> Attribute:
    return Attribute("empty", "empty", 2)


def token_count_attribute(name: str, counted: Iterable[int], max_count: int) -> Attribute:
    return Attribute(name, "count", max_count + 1, frozenset(int(t) for t in counted))


def rare_word_count_attribute(template) -> Attribute:
    return token_count_attribute("rare_count", template.rare_ids, template.slots)


def typo_count_attribute(err_model, max_count: int | None = None) -> Attribute:
    """Number of typo tokens. ``max_count`` defaults to the clean model's fixed length when it has one."""
    if max_count is None:
        max_count = getattr(err_model.clean, "n_flips", None) or getattr(err_model.clean, "slots", None)
        if max_count is None:
            raise ValueError("typo_count_attribute needs max_count for this clean model")
    return token_count_attribute("typo_count", err_model.typo_ids, max_count)


ATTRIBUTE_NAMES = ("length", "empty", "rare_count", "typo_count")


def attribute_by_name(name: str, model, bucketed: bool = True, max_tracked: int = 64) -> Attribute:
    """Resolve a CLI attribute identifier against a model."""
    if name == "length":
        return length_attribute(max_tracked, bucketed)
    if name == "empty":
        return emptiness_attribute()
    if name == "rare_count":
        return rare_word_count_attribute(model)
    if name == "typo_count":
        return typo_count_attribute(model)
    raise ValueError(f"unknown attribute {name!r}; expected one of {', '.join(ATTRIBUTE_NAMES)}")
