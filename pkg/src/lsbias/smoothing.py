"""Label smoothing, its exact inverse, the clamped rectifier, and length bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lsbias.core import DegenerateInputError, DomainError, InputError

DEBIAS_TOL = 1e-12


@dataclass(frozen=True)
class SmoothingConfig:
    alpha: float
    vocab_size: int

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise InputError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.vocab_size < 2:
            raise InputError(f"vocab_size must be >= 2, got {self.vocab_size}")

    @property
    def floor(self) -> float:
        """alpha / V, the smallest probability a perfectly smoothed model emits."""
        return self.alpha / self.vocab_size

    @property
    def ceiling(self) -> float:
        return 1.0 - self.alpha + self.alpha / self.vocab_size


@dataclass(frozen=True)
class RectifierConfig:
    delta: float

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise InputError(f"delta must be in [0, 1), got {self.delta}")

    @classmethod
    def in_vocab_units(cls, units: float, vocab_size: int) -> "RectifierConfig":
        """Build from a threshold expressed in multiples of 1/V (0.5 means 0.5/V)."""
        return cls(units / vocab_size)


@dataclass(frozen=True)
class LengthBound:
    alpha: float
    V: int
    continuous_bound: float
    t_max: int


def _check_dim(p: np.ndarray, cfg: SmoothingConfig) -> None:
    if p.ndim != 1 or p.shape[0] != cfg.vocab_size:
        raise InputError(f"distribution has shape {p.shape}, expected ({cfg.vocab_size},)")


def smooth(q, cfg: SmoothingConfig) -> np.ndarray:
    """(1 - alpha) * q + alpha / V, elementwise."""
    q = np.asarray(q, dtype=float)
    _check_dim(q, cfg)
    if cfg.alpha == 0.0:
        return q.copy()
    return (1.0 - cfg.alpha) * q + cfg.floor


def debias_exact(p_hat, cfg: SmoothingConfig) -> np.ndarray:
    """Invert :func:`smooth`. Only valid when every entry is at least alpha / V.

    Raises DomainError otherwise; clamped inputs belong to :func:`rectify`.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    _check_dim(p_hat, cfg)
    lo = cfg.floor
    if np.any(p_hat < lo - DEBIAS_TOL):
        i = int(np.argmin(p_hat))
        raise DomainError(
            f"entry {p_hat[i]!r} at index {i} is below alpha/V = {lo!r}; use rectify() for such inputs"
        )
    out = (p_hat - lo) / (1.0 - cfg.alpha)
    # entries inside the tolerance band would go slightly negative
    return np.maximum(out, 0.0)


def rectify(p_hat, cfg: RectifierConfig) -> np.ndarray:
    """ReLU(p_hat - delta), renormalized to sum to one.

    The 1/(1 - alpha) factor cancels under normalization and is not applied.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    if cfg.delta == 0.0:
        return p_hat.copy()
    r = np.maximum(p_hat - cfg.delta, 0.0)
    total = r.sum()
    if total <= 0.0:
        raise DegenerateInputError(f"every entry is <= delta = {cfg.delta!r}")
    return r / total


def rectify_or_argmax(p_hat, cfg: RectifierConfig | None) -> np.ndarray:
    """Decode-time rectification: degenerate inputs keep only the argmax, with probability 1."""
    if cfg is None or cfg.delta == 0.0:
        return np.asarray(p_hat, dtype=float)
    try:
        return rectify(p_hat, cfg)
    except DegenerateInputError:
        out = np.zeros(len(p_hat))
        out[int(np.argmax(p_hat))] = 1.0
        return out


def per_token_penalty(cfg: SmoothingConfig) -> float:
    """log(1 - alpha): what smoothing subtracts from every token's log-probability."""
    return math.log1p(-cfg.alpha)


def length_bound(cfg: SmoothingConfig) -> LengthBound | None:
    """Length past which no sequence can outscore the empty translation.

    Returns None when alpha == 0 (smoothing imposes no bound).
    """
    if cfg.alpha == 0.0:
        return None
    bound = math.log(cfg.floor) / math.log(cfg.ceiling)
    return LengthBound(cfg.alpha, cfg.vocab_size, bound, math.floor(bound))


def score_bounds(cfg: SmoothingConfig, T: int) -> tuple[float, float]:
    """(lower bound on P(empty translation), upper bound on P(any length-T sequence))."""
    if T < 1:
        raise InputError(f"T must be >= 1, got {T}")
    return cfg.floor, cfg.ceiling**T
