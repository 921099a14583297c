"""Vocabulary, token sequences, step distributions and the sequence-model interface.

Step distributions are plain float64 numpy vectors of length V. Token
sequences are tuples of ints. Sequence scores are natural-log probabilities,
with probability 0 mapped to ``-inf``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

EOS = "</s>"
BOS = "<s>"

DIST_ATOL = 1e-9

TokenSeq = tuple[int, ...]


class InputError(ValueError):
    """Malformed or inconsistent caller input."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class DegenerateInputError(ValueError):
    """Rectification would zero out every entry of a distribution."""


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    eos_id: int = 0
    bos_id: int = 1

    def __post_init__(self):
        if len(self.tokens) < 3:
            raise InputError(f"vocabulary needs at least 3 tokens, got {len(self.tokens)}")
        if len(set(self.tokens)) != len(self.tokens):
            raise InputError("vocabulary tokens must be unique")
        V = len(self.tokens)
        if not (0 <= self.eos_id < V and 0 <= self.bos_id < V) or self.eos_id == self.bos_id:
            raise InputError(f"bad special ids eos={self.eos_id} bos={self.bos_id} for V={V}")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def content_ids(self) -> list[int]:
        return [i for i in range(self.size) if i not in (self.eos_id, self.bos_id)]

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise InputError(f"unknown token {token!r}") from None

    def encode(self, tokens: Sequence[str]) -> TokenSeq:
        return tuple(self.id(t) for t in tokens)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def _content_name(i: int) -> str:
    # a..z, aa, ab, ... (spreadsheet-column style)
    name = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        name = chr(ord("a") + r) + name
    return name


def make_vocab(size: int) -> Vocabulary:
    """Vocabulary of ``size`` tokens: EOS (id 0), BOS (id 1), then content tokens a, b, ..."""
    if size < 3:
        raise InputError(f"vocabulary size must be >= 3, got {size}")
    return Vocabulary((EOS, BOS) + tuple(_content_name(i) for i in range(size - 2)))


def validate_dist(d) -> str | None:
    """Return a description of the first violated distribution invariant, or None if valid."""
    d = np.asarray(d, dtype=float)
    if d.ndim != 1 or d.size == 0:
        return f"expected a non-empty vector, got shape {d.shape}"
    if not np.all(np.isfinite(d)):
        return "non-finite entry"
    if np.any(d < 0):
        i = int(np.argmax(d < 0))
        return f"negative entry {d[i]!r} at index {i}"
    s = math.fsum(d)
    if abs(s - 1.0) > DIST_ATOL:
        return f"sum = {s!r}"
    return None


def check_complete(target: Sequence[int], vocab: Vocabulary) -> None:
    """Raise InputError unless target is a complete sequence with valid ids."""
    V = vocab.size
    for t in target:
        if not 0 <= t < V:
            raise InputError(f"token id {t} outside [0, {V})")
    if not target or target[-1] != vocab.eos_id:
        raise InputError("complete target must end in EOS")
    if vocab.eos_id in target[:-1]:
        raise InputError("EOS may only appear as the final token")


class SequenceModel(ABC):
    """Conditional next-token distribution p(y_t | source, prefix).

    Implementations are immutable and must return the same vector for the
    same query. Callers must not mutate returned arrays.
    """

    vocab: Vocabulary

    @abstractmethod
    def next_dist(self, source: TokenSeq, prefix: TokenSeq) -> np.ndarray:
        ...

    def context_key(self, source: TokenSeq, prefix: TokenSeq) -> Hashable:
        """Key such that, for a fixed source, equal keys imply equal next_dist.

        Decoders cache step distributions per key. The default never shares.
        """
        return prefix


@dataclass(frozen=True)
class Hypothesis:
    target: TokenSeq
    log_prob: float
    finished: bool
    score: float | None = None  # final ranking score; equals log_prob without length normalization

    def __post_init__(self):
        if self.score is None:
            object.__setattr__(self, "score", self.log_prob)

    def __len__(self) -> int:
        return len(self.target)


def _log(p: float) -> float:
    return math.log(p) if p > 0 else -math.inf


def sequence_logprob(model: SequenceModel, source: TokenSeq, target: TokenSeq) -> float:
    """Sum of per-step log-probabilities of a complete target; -inf on any zero step."""
    target = tuple(target)
    check_complete(target, model.vocab)
    total = 0.0
    for t, tok in enumerate(target):
        lp = _log(float(model.next_dist(source, target[:t])[tok]))
        if lp == -math.inf:
            return -math.inf
        total += lp
    return total
