"""Concrete sequence models.

``OracleModel`` emits a synthetic task's true conditional and
``SmoothedModel`` wraps any model with label smoothing, so
``SmoothedModel(OracleModel(task))`` is the closed-form optimum of
label-smoothed training. ``EmpiricalModel`` and ``LogLinearModel`` are
estimated from corpora; ``PerturbedModel`` and ``RandomModel`` exist to
stress the rectifier and the search procedures.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

from lsbias.core import InputError, SequenceModel, TokenSeq, Vocabulary, check_complete
from lsbias.data import SyntheticTask
from lsbias.smoothing import SmoothingConfig, smooth

log = logging.getLogger(__name__)

KEYINGS = ("position", "aligned")


class TrainingError(RuntimeError):
    def __init__(self, step: int, msg: str):
        super().__init__(f"step {step}: {msg}")
        self.step = step


def _query_seed(seed: int, source: TokenSeq, prefix: TokenSeq) -> np.random.Generator:
    return np.random.default_rng([seed, len(source), *source, len(prefix), *prefix])


class OracleModel(SequenceModel):
    def __init__(self, task: SyntheticTask):
        self.task = task
        self.vocab = task.vocab

    def next_dist(self, source, prefix):
        return self.task.exact_conditional(source, prefix)

    def context_key(self, source, prefix):
        return self.task.aligned_token(source, len(prefix))


class SmoothedModel(SequenceModel):
    def __init__(self, inner: SequenceModel, cfg: SmoothingConfig):
        if cfg.vocab_size != inner.vocab.size:
            raise InputError(f"smoothing V={cfg.vocab_size} but model vocab has {inner.vocab.size} tokens")
        self.inner = inner
        self.cfg = cfg
        self.vocab = inner.vocab

    def next_dist(self, source, prefix):
        return smooth(self.inner.next_dist(source, prefix), self.cfg)

    def context_key(self, source, prefix):
        return self.inner.context_key(source, prefix)


def wrap_smoothed(inner: SequenceModel, cfg: SmoothingConfig) -> SmoothedModel:
    return SmoothedModel(inner, cfg)


class PerturbedModel(SequenceModel):
    """Inner distribution plus bounded uniform noise, clamped at zero and renormalized.

    The noise for a query is a pure function of (seed, source, prefix).
    """

    def __init__(self, inner: SequenceModel, noise_scale: float, seed: int = 0):
        if noise_scale < 0:
            raise InputError(f"noise_scale must be >= 0, got {noise_scale}")
        self.inner = inner
        self.noise_scale = float(noise_scale)
        self.seed = int(seed)
        self.vocab = inner.vocab

    def next_dist(self, source, prefix):
        p = self.inner.next_dist(source, prefix)
        if self.noise_scale == 0.0:
            return p
        rng = _query_seed(self.seed, source, prefix)
        noisy = np.maximum(p + rng.uniform(-self.noise_scale, self.noise_scale, size=p.shape[0]), 0.0)
        total = noisy.sum()
        return noisy / total if total > 0 else p

    def context_key(self, source, prefix):
        if self.noise_scale == 0.0:
            return self.inner.context_key(source, prefix)
        return prefix


def perturb(inner: SequenceModel, noise_scale: float, seed: int = 0) -> PerturbedModel:
    return PerturbedModel(inner, noise_scale, seed)


class RandomModel(SequenceModel):
    """Dirichlet-distributed step distributions, fixed per (seed, source, prefix)."""

    def __init__(self, vocab: Vocabulary, seed: int = 0, concentration: float = 1.0):
        self.vocab = vocab
        self.seed = int(seed)
        self.concentration = float(concentration)

    def next_dist(self, source, prefix):
        rng = _query_seed(self.seed, source, prefix)
        return rng.dirichlet(np.full(self.vocab.size, self.concentration))


class EmpiricalModel(SequenceModel):
    """Relative-frequency model over (source key, last n-1 target tokens).

    ``keying="position"`` keys on the whole source plus the target position.
    ``keying="aligned"`` keys on the source token at the target position (EOS
    past the end), which shares statistics across sentences of copy-style tasks.
    Unseen contexts back off to the source key's pooled counts, then to global
    next-token frequencies.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        keying: str,
        counts: dict[tuple[Hashable, TokenSeq], np.ndarray],
    ):
        if order < 1:
            raise InputError(f"order must be >= 1, got {order}")
        if keying not in KEYINGS:
            raise InputError(f"unknown keying {keying!r}; expected one of {KEYINGS}")
        self.vocab = vocab
        self.order = order
        self.keying = keying
        self.counts = counts
        backoff: dict[Hashable, np.ndarray] = {}
        total = np.zeros(vocab.size, dtype=np.int64)
        for (skey, _), c in counts.items():
            if skey in backoff:
                backoff[skey] = backoff[skey] + c
            else:
                backoff[skey] = c.copy()
            total += c
        self.backoff_counts = backoff
        self.global_counts = total
        self._dists = {k: self._normalize(c) for k, c in counts.items()}
        self._backoff = {k: self._normalize(c) for k, c in backoff.items()}
        self._global = self._normalize(total) if total.sum() else None

    @staticmethod
    def _normalize(c: np.ndarray) -> np.ndarray:
        d = c / c.sum()
        d.setflags(write=False)
        return d

    def source_key(self, source: TokenSeq, t: int) -> Hashable:
        if self.keying == "position":
            return (tuple(source), t)
        return source[t] if t < len(source) else self.vocab.eos_id

    def history(self, prefix: TokenSeq) -> TokenSeq:
        k = self.order - 1
        if k == 0:
            return ()
        h = tuple(prefix[-k:])
        return (self.vocab.bos_id,) * (k - len(h)) + h

    def context_key(self, source, prefix):
        skey = self.source_key(source, len(prefix))
        key = (skey, self.history(prefix))
        if key in self._dists:
            return ("ctx",) + key
        if skey in self._backoff:
            return ("src", skey)
        return ("global",)

    def next_dist(self, source, prefix):
        skey = self.source_key(source, len(prefix))
        d = self._dists.get((skey, self.history(prefix)))
        if d is not None:
            return d
        return self._backoff.get(skey, self._global)


def build_empirical(
    corpus: Iterable[tuple[TokenSeq, TokenSeq]],
    order: int,
    vocab: Vocabulary,
    keying: str = "position",
) -> EmpiricalModel:
    """Count (context, next token) events, EOS included, over all target positions."""
    pairs = list(corpus)
    if not pairs:
        raise InputError("empty corpus")
    shell = EmpiricalModel(vocab, order, keying, {})
    counts: dict[tuple[Hashable, TokenSeq], np.ndarray] = {}
    for source, target in pairs:
        check_complete(target, vocab)
        for t, tok in enumerate(target):
            key = (shell.source_key(source, t), shell.history(target[:t]))
            c = counts.get(key)
            if c is None:
                c = counts[key] = np.zeros(vocab.size, dtype=np.int64)
            c[tok] += 1
    return EmpiricalModel(vocab, order, keying, counts)


# ---------------------------------------------------------------------------
# log-linear model


class LogLinearModel(SequenceModel):
    """softmax(W^T f(source, prefix)) over indicator features.

    Active features: a bias, the previous order-1 target tokens (BOS padded),
    the source token aligned with the target position (EOS past the end), and
    the parity of the position.
    """

    def __init__(self, vocab: Vocabulary, order: int, weights: np.ndarray, alpha: float = 0.0):
        if order < 1:
            raise InputError(f"order must be >= 1, got {order}")
        V = vocab.size
        self.vocab = vocab
        self.order = order
        self.alpha = float(alpha)
        self.feature_dim = 1 + order * V + 2
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.feature_dim, V):
            raise InputError(f"weights shape {weights.shape}, expected {(self.feature_dim, V)}")
        self.weights = weights

    @classmethod
    def init(cls, vocab: Vocabulary, order: int = 1, alpha: float = 0.0, scale: float = 0.0, seed: int = 0):
        V = vocab.size
        shape = (1 + order * V + 2, V)
        w = np.random.default_rng(seed).normal(0.0, scale, size=shape) if scale > 0 else np.zeros(shape)
        return cls(vocab, order, w, alpha)

    def features(self, source: TokenSeq, prefix: TokenSeq) -> np.ndarray:
        V = self.vocab.size
        t = len(prefix)
        idx = [0]
        for k in range(1, self.order):
            tok = prefix[t - k] if t - k >= 0 else self.vocab.bos_id
            idx.append(1 + (k - 1) * V + tok)
        aligned = source[t] if t < len(source) else self.vocab.eos_id
        idx.append(1 + (self.order - 1) * V + aligned)
        idx.append(1 + self.order * V + (t % 2))
        return np.asarray(idx, dtype=np.intp)

    def logits(self, feats: np.ndarray) -> np.ndarray:
        return self.weights[feats].sum(axis=0) if len(feats) else np.zeros(self.vocab.size)

    def next_dist(self, source, prefix):
        return _softmax(self.logits(self.features(source, prefix)))

    def context_key(self, source, prefix):
        return tuple(self.features(source, prefix).tolist())


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def smoothed_target(token: int, cfg: SmoothingConfig) -> np.ndarray:
    q = np.zeros(cfg.vocab_size)
    q[token] = 1.0
    return smooth(q, cfg)


def ls_loss(logits, target_dist):
    """Cross-entropy -sum_i q'_i log softmax(z)_i, kept in the dtype of the inputs."""
    z = logits - logits.max()
    lse = np.log(np.exp(z).sum())
    return -(target_dist * (z - lse)).sum()


@dataclass
class TrainResult:
    model: LogLinearModel
    losses: list[float]


def corpus_events(model: LogLinearModel, corpus: Iterable[tuple[TokenSeq, TokenSeq]]):
    """(features, next token) for every target position of every pair."""
    feats, toks = [], []
    for source, target in corpus:
        check_complete(target, model.vocab)
        for t, tok in enumerate(target):
            feats.append(model.features(source, target[:t]))
            toks.append(tok)
    return np.stack(feats), np.asarray(toks, dtype=np.intp)


def train_loglinear(
    corpus: Sequence[tuple[TokenSeq, TokenSeq]],
    vocab: Vocabulary,
    cfg: SmoothingConfig,
    lr: float = 0.5,
    steps: int = 2000,
    seed: int = 0,
    order: int = 1,
    batch_size: int = 32,
) -> TrainResult:
    """Minibatch SGD on mean label-smoothed cross-entropy.

    Gradient w.r.t. the logits is softmax(z) - q'; each active indicator row
    receives it. Batches come from a seed-driven reshuffle every epoch.
    """
    if not corpus:
        raise InputError("empty corpus")
    if lr <= 0:
        raise InputError(f"lr must be > 0, got {lr}")
    if cfg.vocab_size != vocab.size:
        raise InputError(f"smoothing V={cfg.vocab_size} but vocab has {vocab.size} tokens")
    model = LogLinearModel.init(vocab, order, cfg.alpha)
    feats, toks = corpus_events(model, corpus)
    n = len(toks)
    targets = np.full((n, vocab.size), cfg.floor)
    targets[np.arange(n), toks] += 1.0 - cfg.alpha
    rng = np.random.default_rng(seed)
    W = model.weights
    losses: list[float] = []
    order_ = rng.permutation(n)
    pos = 0
    # divergence is detected and reported below, not warned about
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(steps):
            if pos >= n:
                order_ = rng.permutation(n)
                pos = 0
            batch = order_[pos : pos + batch_size]
            pos += batch_size
            f = feats[batch]
            z = W[f].sum(axis=1)
            z = z - z.max(axis=1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            q = targets[batch]
            loss = float(-(q * logp).sum(axis=1).mean())
            if not math.isfinite(loss):
                raise TrainingError(step, f"loss became {loss}")
            losses.append(loss)
            g = (np.exp(logp) - q) / len(batch)
            np.add.at(W, f, -lr * g[:, None, :])
            if not np.all(np.isfinite(W)):
                raise TrainingError(step, "weights became non-finite")
    log.debug("trained loglinear: %d events, final loss %.6f", n, losses[-1] if losses else float("nan"))
    return TrainResult(model, losses)


def grad_check(
    model: LogLinearModel,
    example: tuple[TokenSeq, TokenSeq, int],
    eps: float = 1e-5,
    n_samples: int = 24,
    seed: int = 0,
    feats: np.ndarray | None = None,
) -> float:
    """Max relative gap between the analytic gradient and central differences.

    Weights are sampled half from rows of active features and half uniformly.
    ``feats`` overrides the example's feature vector (e.g. an empty one).
    Finite differences are evaluated in extended precision.
    """
    source, prefix, token = example
    if feats is None:
        feats = model.features(source, prefix)
    feats = np.asarray(feats, dtype=np.intp)
    cfg = SmoothingConfig(model.alpha, model.vocab.size)
    q = smoothed_target(token, cfg)
    analytic = np.zeros_like(model.weights)
    if len(feats):
        g = _softmax(model.logits(feats)) - q
        np.add.at(analytic, feats, g[None, :])

    rng = np.random.default_rng(seed)
    F, V = model.weights.shape
    half = n_samples // 2
    rows = rng.choice(feats, size=half) if len(feats) else rng.integers(0, F, size=half)
    rows = np.concatenate([rows, rng.integers(0, F, size=n_samples - half)])
    cols = rng.integers(0, V, size=n_samples)

    W = model.weights.astype(np.longdouble)
    ql = q.astype(np.longdouble)

    def loss_at(w):
        z = w[feats].sum(axis=0) if len(feats) else np.zeros(V, dtype=np.longdouble)
        return ls_loss(z, ql)

    worst = 0.0
    for r, c in zip(rows, cols):
        orig = W[r, c]
        W[r, c] = orig + eps
        up = loss_at(W)
        W[r, c] = orig - eps
        down = loss_at(W)
        W[r, c] = orig
        fd = float((up - down) / (2 * eps))
        a = analytic[r, c]
        worst = max(worst, abs(a - fd) / (abs(a) + 1e-8))
    return worst
