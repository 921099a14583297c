"""Greedy, beam and exact decoding with optional per-step rectification.

Every decoder scores tokens with the (optionally rectified) step distribution
of the model, accumulating natural-log probabilities. Ties are broken the same
way everywhere: higher score first, then shorter sequence, then lexicographic
token-id order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from lsbias.core import Hypothesis, SequenceModel, TokenSeq, check_complete
from lsbias.smoothing import RectifierConfig, rectify_or_argmax

WORKERS_ENV = "LSBIAS_WORKERS"


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 1
    max_len: int | None = None  # None: 2 * len(source) + 10
    rectifier: RectifierConfig | None = None
    length_norm_exponent: float = 0.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.max_len is not None and self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")
        if self.length_norm_exponent < 0:
            raise ValueError(f"length_norm_exponent must be >= 0, got {self.length_norm_exponent}")

    def resolve_max_len(self, source: TokenSeq) -> int:
        return self.max_len if self.max_len is not None else default_max_len(source)


def default_max_len(source: TokenSeq) -> int:
    return 2 * len(source) + 10


@dataclass
class DecodeResult:
    ranked: list[Hypothesis]
    steps_expanded: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def found(self) -> bool:
        return bool(self.ranked) and self.ranked[0].finished

    @property
    def best(self) -> Hypothesis:
        return self.ranked[0]


def rank_key(h: Hypothesis):
    return (-h.score, len(h.target), h.target)


def _final_score(log_prob: float, length: int, exponent: float) -> float:
    if exponent == 0.0:
        return log_prob
    return log_prob / length**exponent


class _StepScorer:
    """Log of the rectified step distribution, cached per model context key."""

    def __init__(self, model: SequenceModel, source: TokenSeq, rectifier: RectifierConfig | None):
        self.model = model
        self.source = tuple(source)
        self.rectifier = rectifier
        self.cache: dict = {}
        self.calls = 0

    def __call__(self, prefix: TokenSeq) -> np.ndarray:
        self.calls += 1
        key = self.model.context_key(self.source, prefix)
        row = self.cache.get(key)
        if row is None:
            p = rectify_or_argmax(self.model.next_dist(self.source, prefix), self.rectifier)
            with np.errstate(divide="ignore"):
                row = np.log(p)
            row.setflags(write=False)
            self.cache[key] = row
        return row


def greedy_decode(model: SequenceModel, source: TokenSeq, cfg: DecodeConfig | None = None) -> DecodeResult:
    """Pick the best next token at every step until EOS or max_len."""
    cfg = cfg or DecodeConfig()
    scorer = _StepScorer(model, source, cfg.rectifier)
    eos = model.vocab.eos_id
    prefix: TokenSeq = ()
    score = 0.0
    for _ in range(cfg.resolve_max_len(source)):
        cand = score + scorer(prefix)
        tok = int(np.argmax(cand))
        score = float(cand[tok])
        prefix += (tok,)
        if tok == eos:
            break
    finished = prefix[-1] == eos
    final = _final_score(score, len(prefix), cfg.length_norm_exponent)
    return DecodeResult([Hypothesis(prefix, score, finished, final)], scorer.calls)


def _top_k(cand: np.ndarray, k: int) -> np.ndarray:
    """Flat indices of the k best finite candidates, ordered by (-score, index)."""
    finite = np.isfinite(cand)
    k = min(k, int(finite.sum()))
    if k == 0:
        return np.empty(0, dtype=np.intp)
    if cand.size > k:
        kth = np.partition(cand, cand.size - k)[cand.size - k]
        idx = np.flatnonzero(cand >= kth)
    else:
        idx = np.flatnonzero(finite)
    return idx[np.lexsort((idx, -cand[idx]))][:k]


def beam_decode(model: SequenceModel, source: TokenSeq, cfg: DecodeConfig) -> DecodeResult:
    """Beam search keeping the top K of all K*V extensions per step.

    Extensions ending in EOS leave the beam for a finished pool capped at K.
    Without length normalization the search stops once the best live score
    cannot beat the K-th finished one; with it, only max_len or an empty beam
    stop the search. Impossible (-inf) extensions are never kept.
    """
    K = cfg.beam_size
    max_len = cfg.resolve_max_len(source)
    norm = cfg.length_norm_exponent
    scorer = _StepScorer(model, source, cfg.rectifier)
    V = model.vocab.size
    eos = model.vocab.eos_id

    # live sequences are kept in lexicographic order so flat candidate index order is lexicographic too
    live: list[TokenSeq] = [()]
    live_scores = np.zeros(1)
    finished: list[Hypothesis] = []
    capped: list[Hypothesis] = []
    for step in range(1, max_len + 1):
        rows = np.stack([scorer(s) for s in live])
        cand = (live_scores[:, None] + rows).ravel()
        sel = np.sort(_top_k(cand, K))
        next_live, next_scores = [], []
        for i in sel.tolist():
            parent, tok = divmod(i, V)
            seq = live[parent] + (tok,)
            s = float(cand[i])
            if tok == eos:
                finished.append(Hypothesis(seq, s, True, _final_score(s, step, norm)))
            else:
                next_live.append(seq)
                next_scores.append(s)
        if len(finished) > K:
            finished.sort(key=rank_key)
            del finished[K:]
        if step == max_len:
            capped = [Hypothesis(q, s, False, _final_score(s, step, norm)) for q, s in zip(next_live, next_scores)]
            break
        if not next_live:
            break
        live, live_scores = next_live, np.asarray(next_scores)
        if norm == 0.0 and len(finished) >= K:
            finished.sort(key=rank_key)
            if live_scores.max() <= finished[K - 1].log_prob:
                break
    ranked = sorted(finished or capped, key=rank_key)[:K]
    return DecodeResult(ranked, scorer.calls)


def exact_decode(
    model: SequenceModel,
    source: TokenSeq,
    max_len: int | None = None,
    rectifier: RectifierConfig | None = None,
) -> DecodeResult:
    """Provably best finished hypothesis within max_len, by depth-first search.

    Log-probability increments are never positive, so a partial hypothesis
    scoring below the best finished one cannot improve on it and is pruned.
    Children are visited best-first. An empty ``ranked`` means no finite-score
    finished hypothesis exists within max_len.
    """
    if max_len is None:
        max_len = default_max_len(source)
    scorer = _StepScorer(model, source, rectifier)
    eos = model.vocab.eos_id
    best: Hypothesis | None = None

    def dominated(score: float, min_len: int) -> bool:
        if best is None:
            return False
        return score < best.log_prob or (score == best.log_prob and min_len > len(best.target))

    stack: list[tuple[TokenSeq, float]] = [((), 0.0)]
    while stack:
        prefix, score = stack.pop()
        if dominated(score, len(prefix) + 1):
            continue
        cand = score + scorer(prefix)
        n = len(prefix) + 1
        e = float(cand[eos])
        if math.isfinite(e):
            h = Hypothesis(prefix + (eos,), e, True)
            if best is None or rank_key(h) < rank_key(best):
                best = h
        if n >= max_len:
            continue
        order = np.lexsort((np.arange(cand.size), -cand))
        children = [
            (prefix + (tok,), float(cand[tok]))
            for tok in order.tolist()
            if tok != eos and math.isfinite(cand[tok]) and not dominated(float(cand[tok]), n + 1)
        ]
        stack.extend(reversed(children))
    return DecodeResult([best] if best is not None else [], scorer.calls)


def rescore_sequence(
    model: SequenceModel,
    source: TokenSeq,
    target: TokenSeq,
    rectifier: RectifierConfig | None = None,
) -> float:
    """Log-probability of a complete target under per-step rectified distributions.

    Returns -inf when some target token was clamped to zero.
    """
    target = tuple(target)
    check_complete(target, model.vocab)
    scorer = _StepScorer(model, source, rectifier)
    total = 0.0
    for t, tok in enumerate(target):
        lp = float(scorer(target[:t])[tok])
        if lp == -math.inf:
            return -math.inf
        total += lp
    return total


def decode(model: SequenceModel, source: TokenSeq, cfg: DecodeConfig) -> DecodeResult:
    return greedy_decode(model, source, cfg) if cfg.beam_size == 1 else beam_decode(model, source, cfg)


# corpus-level decoding --------------------------------------------------------

_worker_state: dict = {}


def _init_worker(model, cfg):
    _worker_state["model"] = model
    _worker_state["cfg"] = cfg


def _decode_chunk(sources):
    model, cfg = _worker_state["model"], _worker_state["cfg"]
    return [decode(model, s, cfg) for s in sources]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def decode_corpus(
    model: SequenceModel,
    sources: Sequence[TokenSeq],
    cfg: DecodeConfig,
    workers: int | None = None,
) -> list[DecodeResult]:
    """Decode every source; output order and content do not depend on ``workers``."""
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(sources) < 2:
        return [decode(model, s, cfg) for s in sources]
    size = max(1, math.ceil(len(sources) / (workers * 4)))
    chunks = [list(sources[i : i + size]) for i in range(0, len(sources), size)]
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(model, cfg)) as ex:
        return [r for part in ex.map(_decode_chunk, chunks) for r in part]
