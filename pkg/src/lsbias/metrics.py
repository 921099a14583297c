"""Corpus BLEU, length ratios, source-length buckets and set-level calibration."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

from lsbias.core import InputError, SequenceModel, TokenSeq
from lsbias.search import DecodeResult


def strip_eos(seq: Sequence[int], eos_id: int) -> tuple[int, ...]:
    seq = tuple(seq)
    return seq[:-1] if seq and seq[-1] == eos_id else seq


def _ngrams(seq: Sequence[int], n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]], max_n: int = 4) -> float:
    """Standard corpus BLEU on pre-tokenized sequences, no smoothing.

    Clipped n-gram matches and totals are pooled over the corpus before the
    geometric mean; any zero precision gives 0.
    """
    if len(hypotheses) != len(references):
        raise InputError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise InputError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or any(m == 0 for m in matches):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_prec)


def length_ratio(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]]) -> float:
    """Total hypothesis tokens over total reference tokens (callers strip EOS first)."""
    if len(hypotheses) != len(references) or not hypotheses:
        raise InputError("need equal-length, non-empty hypothesis and reference lists")
    ref_total = sum(len(r) for r in references)
    if ref_total == 0:
        raise InputError("total reference length is zero")
    return sum(len(h) for h in hypotheses) / ref_total


@dataclass
class Bucket:
    lo: int
    hi: int  # exclusive
    indices: list[int]

    @property
    def count(self) -> int:
        return len(self.indices)

    @property
    def empty(self) -> bool:
        return not self.indices


def bucket_by_source_length(lengths: Sequence[int], n_buckets: int = 4) -> list[Bucket]:
    """Quantile buckets over source lengths, as half-open ranges [lo, hi).

    Boundaries sit at the floor(i * N / n_buckets)-th smallest length, so on
    distinct lengths bucket sizes differ by at most one. Repeated lengths can
    collapse boundaries, leaving empty buckets.
    """
    if not lengths:
        raise InputError("empty corpus")
    if n_buckets < 1:
        raise InputError(f"n_buckets must be >= 1, got {n_buckets}")
    s = sorted(lengths)
    N = len(s)
    bounds = [s[0]] + [s[(i * N) // n_buckets] for i in range(1, n_buckets)] + [s[-1] + 1]
    buckets = [Bucket(bounds[i], bounds[i + 1], []) for i in range(n_buckets)]
    for idx, L in enumerate(lengths):
        for b in buckets:
            if b.lo <= L < b.hi:
                b.indices.append(idx)
                break
    return buckets


@dataclass
class BucketStats:
    lo: int
    hi: int
    count: int
    bleu: float | None
    length_ratio: float | None


@dataclass
class EvalReport:
    bleu: float
    length_ratio: float
    mean_hyp_len: float
    per_bucket: list[BucketStats]
    config: dict = field(default_factory=dict)


def evaluate(
    hypotheses: Sequence[Sequence[int]],
    references: Sequence[Sequence[int]],
    source_lengths: Sequence[int],
    n_buckets: int = 4,
    config: dict | None = None,
) -> EvalReport:
    """BLEU and length ratio overall and per source-length bucket (EOS already stripped)."""
    per_bucket = []
    for b in bucket_by_source_length(source_lengths, n_buckets):
        if b.empty:
            per_bucket.append(BucketStats(b.lo, b.hi, 0, None, None))
            continue
        h = [hypotheses[i] for i in b.indices]
        r = [references[i] for i in b.indices]
        per_bucket.append(BucketStats(b.lo, b.hi, b.count, corpus_bleu(h, r), length_ratio(h, r)))
    return EvalReport(
        bleu=corpus_bleu(hypotheses, references),
        length_ratio=length_ratio(hypotheses, references),
        mean_hyp_len=sum(len(h) for h in hypotheses) / len(hypotheses),
        per_bucket=per_bucket,
        config=dict(config or {}),
    )


@dataclass
class CalibrationReport:
    mean_set_probability: float
    reference_in_set_rate: float
    K: int
    n_queries: int
    n_excluded: int = 0

    @property
    def gap(self) -> float:
        return self.mean_set_probability - self.reference_in_set_rate


def calibration_from_results(
    results: Sequence[DecodeResult],
    references: Sequence[TokenSeq],
    K: int,
) -> CalibrationReport:
    """Per-query mean of the top-K set's total probability, against reference containment.

    Probabilities come from raw log_prob, never from length-normalized scores.
    Queries without a finished hypothesis are excluded and counted.
    """
    set_probs: list[float] = []
    hits = 0
    excluded = 0
    for res, ref in zip(results, references):
        S = [h for h in res.ranked[:K] if h.finished]
        if not S:
            excluded += 1
            continue
        set_probs.append(math.fsum(math.exp(h.log_prob) for h in S))
        hits += any(h.target == tuple(ref) for h in S)
    n = len(set_probs)
    if n == 0:
        return CalibrationReport(math.nan, math.nan, K, 0, excluded)
    return CalibrationReport(math.fsum(set_probs) / n, hits / n, K, n, excluded)


def set_calibration(
    model: SequenceModel,
    decode_fn: Callable[[SequenceModel, TokenSeq], DecodeResult],
    sources: Sequence[TokenSeq],
    references: Sequence[TokenSeq],
    K: int = 200,
) -> CalibrationReport:
    if len(sources) != len(references):
        raise InputError(f"{len(sources)} sources but {len(references)} references")
    return calibration_from_results([decode_fn(model, s) for s in sources], references, K)
