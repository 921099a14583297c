"""delta x K sweeps, calibration runs, and the noisy-copy benchmark setup."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from lsbias.data import Corpus, generate_corpus, make_task
from lsbias.metrics import CalibrationReport, EvalReport, calibration_from_results, evaluate, strip_eos
from lsbias.models import SmoothedModel, build_empirical
from lsbias.core import SequenceModel
from lsbias.search import DecodeConfig, DecodeResult, decode_corpus
from lsbias.smoothing import RectifierConfig, SmoothingConfig

DEFAULT_DELTAS = (0.0, 0.1, 0.5, 1.0, 10.0, 100.0)  # units of 1/V
DEFAULT_BEAMS = (1, 4, 8, 25, 100, 200)

SWEEP_COLUMNS = ("K", "delta_units", "delta", "bleu", "length_ratio", "mean_hyp_len", "steps_expanded")
CALIBRATION_COLUMNS = (
    "K",
    "delta_units",
    "delta",
    "mean_set_probability",
    "reference_in_set_rate",
    "gap",
    "n_queries",
    "n_excluded",
)


def rectifier_for(delta_units: float, vocab_size: int) -> RectifierConfig | None:
    if delta_units < 0:
        raise ValueError(f"delta must be >= 0, got {delta_units}/V")
    return RectifierConfig.in_vocab_units(delta_units, vocab_size) if delta_units > 0 else None


@dataclass
class RunResult:
    K: int
    delta_units: float
    results: list[DecodeResult]
    report: EvalReport

    @property
    def steps_expanded(self) -> int:
        return sum(r.steps_expanded for r in self.results)


def run_decode(
    model: SequenceModel,
    corpus: Corpus,
    K: int,
    delta_units: float = 0.0,
    length_norm: float = 0.0,
    max_len: int | None = None,
    workers: int | None = None,
    n_buckets: int = 4,
) -> RunResult:
    V = model.vocab.size
    eos = model.vocab.eos_id
    cfg = DecodeConfig(K, max_len, rectifier_for(delta_units, V), length_norm)
    results = decode_corpus(model, corpus.sources, cfg, workers)
    hyps = [strip_eos(r.best.target, eos) for r in results]
    refs = [strip_eos(t, eos) for t in corpus.targets]
    report = evaluate(
        hyps,
        refs,
        [len(s) for s in corpus.sources],
        n_buckets,
        config={"K": K, "delta_units": delta_units, "length_norm": length_norm},
    )
    return RunResult(K, delta_units, results, report)


def calibrate(run: RunResult, corpus: Corpus) -> CalibrationReport:
    return calibration_from_results(run.results, corpus.targets, run.K)


def sweep(
    model: SequenceModel,
    corpus: Corpus,
    beams: Sequence[int] = DEFAULT_BEAMS,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    workers: int | None = None,
) -> list[RunResult]:
    """One run per (K, delta), K-major, in the given grid order."""
    if not beams or not deltas:
        raise ValueError("sweep grids must be non-empty")
    return [run_decode(model, corpus, K, d, workers=workers) for K in beams for d in deltas]


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def sweep_rows(runs: Sequence[RunResult], vocab_size: int) -> list[list[str]]:
    return [
        [
            str(r.K),
            repr(float(r.delta_units)),
            repr(r.delta_units / vocab_size),
            _fmt(r.report.bleu),
            _fmt(r.report.length_ratio),
            _fmt(r.report.mean_hyp_len),
            str(r.steps_expanded),
        ]
        for r in runs
    ]


def calibration_row(cal: CalibrationReport, delta_units: float, vocab_size: int) -> list[str]:
    return [
        str(cal.K),
        repr(float(delta_units)),
        repr(delta_units / vocab_size),
        _fmt(cal.mean_set_probability),
        _fmt(cal.reference_in_set_rate),
        _fmt(cal.gap),
        str(cal.n_queries),
        str(cal.n_excluded),
    ]


def to_tsv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    return "\n".join("\t".join(r) for r in [list(header), *rows]) + "\n"


@dataclass
class Benchmark:
    model: SmoothedModel
    train: Corpus
    test: Corpus


def noisy_copy_benchmark(
    vocab_size: int = 64,
    flip_prob: float = 0.1,
    n_test: int = 2000,
    n_train: int = 20000,
    alpha: float = 0.1,
    seed: int = 2021,
) -> Benchmark:
    """Label-smoothed empirical model of a noisy-copy task, plus a held-out test corpus.

    The empirical model keys on the aligned source token, so its estimates
    pool over all sentences; smoothing puts it at the label-smoothing optimum
    for those estimates.
    """
    task = make_task("noisy_copy", vocab_size, flip_prob)
    train = generate_corpus(task, n_train, seed)
    test = generate_corpus(task, n_test, seed + 1)
    emp = build_empirical(train.pairs, 1, task.vocab, keying="aligned")
    return Benchmark(SmoothedModel(emp, SmoothingConfig(alpha, vocab_size)), train, test)
