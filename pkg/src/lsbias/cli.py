"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime or data error. Debiasing
thresholds are given in units of 1/V (``--delta 0.5`` means 0.5/V).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from lsbias import experiments as ex
from lsbias.data import TASK_KINDS, CorpusParseError, LengthDist, generate_corpus, make_task, read_corpus, write_corpus
from lsbias.core import InputError
from lsbias.models import (
    KEYINGS,
    OracleModel,
    SmoothedModel,
    TrainingError,
    build_empirical,
    perturb,
    train_loglinear,
)
from lsbias.serialize import ModelLoadError, load_model, save_model
from lsbias.smoothing import SmoothingConfig, length_bound, score_bounds

log = logging.getLogger("lsbias")

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _int_list(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _check_delta(delta_units: float, V: int) -> None:
    if delta_units < 0:
        raise UsageError(f"--delta must be >= 0, got {delta_units}")
    if delta_units / V >= 1:
        raise UsageError(f"--delta {delta_units}/V is >= 1 for V={V}")


def _check_beam(K: int) -> None:
    if K < 1:
        raise UsageError(f"--K must be >= 1, got {K}")


def cmd_gen(args) -> int:
    if args.task not in TASK_KINDS:
        raise UsageError(f"unknown task {args.task!r}")
    try:
        task = make_task(args.task, args.V, args.flip, LengthDist(args.p_stop, args.min_len, args.max_len))
    except InputError as e:
        raise UsageError(str(e)) from None
    corpus = generate_corpus(task, args.n, args.seed)
    write_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} pairs to {args.out}")
    return 0


def cmd_build(args) -> int:
    corpus = read_corpus(args.corpus)
    vocab = corpus.vocab
    V = vocab.size
    if args.kind in ("oracle", "smoothed-oracle"):
        model = OracleModel(corpus.task)
        if args.kind == "smoothed-oracle":
            model = SmoothedModel(model, SmoothingConfig(args.alpha, V))
    elif args.kind == "empirical":
        model = build_empirical(corpus.pairs, args.order, vocab, keying=args.keying)
        if args.alpha > 0:
            model = SmoothedModel(model, SmoothingConfig(args.alpha, V))
    else:
        res = train_loglinear(
            corpus.pairs,
            vocab,
            SmoothingConfig(args.alpha, V),
            lr=args.lr,
            steps=args.steps,
            seed=args.seed,
            order=args.order,
            batch_size=args.batch_size,
        )
        model = res.model
        every = max(1, len(res.losses) // 20)
        for i, loss in enumerate(res.losses):
            if i % every == 0 or i == len(res.losses) - 1:
                print(f"step\t{i}\tloss\t{loss:.6f}")
    if args.noise > 0:
        model = perturb(model, args.noise, args.noise_seed)
    save_model(model, args.out)
    print(f"saved {args.kind} model to {args.out}")
    return 0


def _load(args):
    model = load_model(args.model)
    corpus = read_corpus(args.corpus)
    if model.vocab != corpus.vocab:
        raise InputError("model and corpus vocabularies differ")
    return model, corpus


def _report_tsv(run: ex.RunResult) -> str:
    rep = run.report
    lines = [f"#{k}={v}" for k, v in rep.config.items()]
    header = ["bucket", "lo", "hi", "count", "bleu", "length_ratio"]
    rows = [["all", "", "", str(sum(b.count for b in rep.per_bucket)), f"{rep.bleu:.6f}", f"{rep.length_ratio:.6f}"]]
    for i, b in enumerate(rep.per_bucket):
        rows.append(
            [
                str(i),
                str(b.lo),
                str(b.hi),
                str(b.count),
                "nan" if b.bleu is None else f"{b.bleu:.6f}",
                "nan" if b.length_ratio is None else f"{b.length_ratio:.6f}",
            ]
        )
    return "\n".join(lines) + "\n" + ex.to_tsv(header, rows)


def cmd_decode(args) -> int:
    _check_beam(args.K)
    if args.length_norm < 0:
        raise UsageError("--length-norm must be >= 0")
    model, corpus = _load(args)
    V = model.vocab.size
    _check_delta(args.delta, V)
    run = ex.run_decode(model, corpus, args.K, args.delta, args.length_norm, args.max_len, args.workers)
    run.report.config.update({"model": str(args.model), "V": V})
    vocab = model.vocab
    with open(args.out, "w", encoding="utf-8") as f:
        for r in run.results:
            f.write(" ".join(vocab.decode([t for t in r.best.target if t != vocab.eos_id])) + "\n")
    report_path = args.report or f"{args.out}.report.tsv"
    Path(report_path).write_text(_report_tsv(run), encoding="utf-8")
    rep = run.report
    print(f"K={args.K} delta={args.delta}/V  BLEU {rep.bleu:.2f}  length_ratio {rep.length_ratio:.4f}")
    for b in rep.per_bucket:
        bleu = "-" if b.bleu is None else f"{b.bleu:.2f}"
        lr = "-" if b.length_ratio is None else f"{b.length_ratio:.4f}"
        print(f"  src len [{b.lo},{b.hi}) n={b.count}  BLEU {bleu}  length_ratio {lr}")
    return 0


def cmd_sweep(args) -> int:
    beams = _int_list(args.beams)
    deltas = _float_list(args.deltas)
    if not beams or not deltas:
        raise UsageError("--beams and --deltas must be non-empty")
    for K in beams:
        _check_beam(K)
    model, corpus = _load(args)
    V = model.vocab.size
    for d in deltas:
        _check_delta(d, V)
    runs = ex.sweep(model, corpus, beams, deltas, args.workers)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tsv = ex.to_tsv(ex.SWEEP_COLUMNS, ex.sweep_rows(runs, V))
    (out_dir / "sweep.tsv").write_text(tsv, encoding="utf-8")
    alpha = "" if args.alpha is None else f" alpha={args.alpha}"
    print(f"sweep{alpha}: {len(runs)} runs -> {out_dir / 'sweep.tsv'}")
    sys.stdout.write(tsv)
    return 0


def cmd_bound(args) -> int:
    if not 0 <= args.alpha < 1 or args.V < 2:
        raise UsageError("need 0 <= alpha < 1 and V >= 2")
    cfg = SmoothingConfig(args.alpha, args.V)
    b = length_bound(cfg)
    if b is None:
        print("no bound (alpha = 0)")
        return 0
    lo, up = score_bounds(cfg, b.t_max)
    _, up1 = score_bounds(cfg, b.t_max + 1)
    print(f"alpha\t{args.alpha!r}")
    print(f"V\t{args.V}")
    print(f"continuous_bound\t{b.continuous_bound:.6f}")
    print(f"t_max\t{b.t_max}")
    print(f"empty_lower\t{lo:.6e}")
    print(f"upper_at_t_max\t{up:.6e}")
    print(f"upper_at_t_max_plus_1\t{up1:.6e}")
    return 0


def cmd_calibrate(args) -> int:
    _check_beam(args.K)
    model, corpus = _load(args)
    V = model.vocab.size
    _check_delta(args.delta, V)
    run = ex.run_decode(model, corpus, args.K, args.delta, workers=args.workers)
    cal = ex.calibrate(run, corpus)
    tsv = ex.to_tsv(ex.CALIBRATION_COLUMNS, [ex.calibration_row(cal, args.delta, V)])
    if args.out:
        Path(args.out).write_text(tsv, encoding="utf-8")
    sys.stdout.write(tsv)
    state = "well calibrated" if abs(cal.gap) < 0.01 else ("under-confident" if cal.gap < 0 else "over-confident")
    print(
        f"sum prob of S {cal.mean_set_probability:.4f} vs reference in S {cal.reference_in_set_rate:.4f}: "
        f"gap {cal.gap:+.4f} ({state})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lsbias", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--task", required=True, help=f"one of {', '.join(TASK_KINDS)}")
    g.add_argument("--V", type=int, default=64, help="vocabulary size incl. EOS and BOS")
    g.add_argument("--flip", type=float, default=0.0, help="noisy_copy flip probability")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--p-stop", type=float, default=0.05)
    g.add_argument("--min-len", type=int, default=1)
    g.add_argument("--max-len", type=int, default=150)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("build", help="build or train a model from a corpus")
    b.add_argument("--corpus", required=True)
    b.add_argument("--kind", required=True, choices=["oracle", "smoothed-oracle", "empirical", "loglinear"])
    b.add_argument("--alpha", type=float, default=0.0, help="label smoothing weight")
    b.add_argument("--order", type=int, default=1)
    b.add_argument("--keying", choices=KEYINGS, default="position", help="empirical source keying")
    b.add_argument("--lr", type=float, default=0.5)
    b.add_argument("--steps", type=int, default=2000)
    b.add_argument("--batch-size", type=int, default=32)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--noise", type=float, default=0.0, help="wrap in a perturbed model with this noise scale")
    b.add_argument("--noise-seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    def add_decode_flags(sp):
        sp.add_argument("--model", required=True)
        sp.add_argument("--corpus", required=True)
        sp.add_argument("--workers", type=int, default=None, help="worker processes (env LSBIAS_WORKERS)")

    d = sub.add_parser("decode", help="decode a corpus and report BLEU / length ratio")
    add_decode_flags(d)
    d.add_argument("--K", type=int, default=4)
    d.add_argument("--delta", type=float, default=0.0, help="rectifier threshold in units of 1/V")
    d.add_argument("--length-norm", type=float, default=0.0)
    d.add_argument("--max-len", type=int, default=None)
    d.add_argument("--out", required=True, help="hypotheses file")
    d.add_argument("--report", default=None, help="report TSV (default: <out>.report.tsv)")
    d.set_defaults(func=cmd_decode)

    s = sub.add_parser("sweep", help="decode over a delta x K grid")
    add_decode_flags(s)
    s.add_argument("--beams", default=",".join(map(str, ex.DEFAULT_BEAMS)))
    s.add_argument("--deltas", default=",".join(map(str, ex.DEFAULT_DELTAS)), help="units of 1/V")
    s.add_argument("--alpha", type=float, default=None, help="smoothing weight, echoed in the summary")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_sweep)

    bd = sub.add_parser("bound", help="length bound implied by label smoothing")
    bd.add_argument("--alpha", type=float, required=True)
    bd.add_argument("--V", type=int, required=True)
    bd.set_defaults(func=cmd_bound)

    c = sub.add_parser("calibrate", help="set-level calibration of top-K decode sets")
    add_decode_flags(c)
    c.add_argument("--K", type=int, default=200)
    c.add_argument("--delta", type=float, default=0.0, help="rectifier threshold in units of 1/V")
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"lsbias {args.cmd}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (
        OSError,
        CorpusParseError,
        ModelLoadError,
        TrainingError,
        InputError,
        ValueError,
    ) as e:
        print(f"lsbias {args.cmd}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
