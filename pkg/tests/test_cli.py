import numpy as np
import pytest

from lsbias.cli import main
from lsbias.data import read_corpus
from lsbias.serialize import load_model


def run(*args):
    return main([str(a) for a in args])


def read_tsv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    header = lines[0].split("\t")
    return [dict(zip(header, l.split("\t"))) for l in lines[1:]]


def test_gen_copy(tmp_path):
    out = tmp_path / "c.tsv"
    assert run("gen", "--task", "copy", "--n", 1000, "--seed", 7, "--out", out) == 0
    c = read_corpus(out)
    assert len(c) == 1000 and all(t[:-1] == s for s, t in c.pairs)


def test_gen_header_records_flip(tmp_path):
    out = tmp_path / "n.tsv"
    assert run("gen", "--task", "noisy_copy", "--flip", 0.1, "--n", 5, "--seed", 1, "--out", out) == 0
    assert "#flip_prob=0.1" in out.read_text().splitlines()
    assert read_corpus(out).task.flip_prob == 0.1


def test_gen_bad_task(tmp_path, capsys):
    assert run("gen", "--task", "translate", "--n", 5, "--seed", 1, "--out", tmp_path / "x") == 1
    assert "unknown task" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


@pytest.fixture
def copy_corpus(tmp_path):
    p = tmp_path / "copy.tsv"
    run("gen", "--task", "copy", "--V", 4, "--n", 40, "--seed", 3, "--max-len", 20, "--out", p)
    return p


def test_build_smoothed_oracle_floor(tmp_path, copy_corpus):
    m = tmp_path / "m.json"
    assert run("build", "--corpus", copy_corpus, "--kind", "smoothed-oracle", "--alpha", 0.1, "--out", m) == 0
    model = load_model(m)
    corpus = read_corpus(copy_corpus)
    mins = [model.next_dist(s, t[:i]).min() for s, t in corpus.pairs[:10] for i in range(len(t))]
    assert min(mins) == pytest.approx(0.1 / 4, abs=1e-15)
    assert max(mins) == pytest.approx(0.1 / 4, abs=1e-15)


def test_build_empirical_order2_then_decode(tmp_path, copy_corpus):
    m = tmp_path / "m.json"
    assert run("build", "--corpus", copy_corpus, "--kind", "empirical", "--order", 2, "--out", m) == 0
    assert load_model(m).order == 2
    assert run("decode", "--model", m, "--corpus", copy_corpus, "--K", 2, "--out", tmp_path / "h.txt") == 0


def test_build_loglinear_alpha0_one_hot(tmp_path, capsys):
    p = tmp_path / "one.tsv"
    # a single source of length 1, so every target position sees one fixed context
    run("gen", "--task", "copy", "--V", 3, "--n", 50, "--seed", 0, "--max-len", 1, "--out", p)
    m = tmp_path / "m.json"
    code = run("build", "--corpus", p, "--kind", "loglinear", "--alpha", 0, "--lr", 1.0, "--steps", 3000, "--out", m)
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("loss") >= 2
    model = load_model(m)
    src, tgt = read_corpus(p).pairs[0]
    for t in range(len(tgt)):
        one_hot = np.eye(3)[tgt[t]]
        assert np.abs(model.next_dist(src, tgt[:t]) - one_hot).max() < 1e-3


def test_build_unreadable_corpus(tmp_path):
    assert run("build", "--corpus", tmp_path / "missing.tsv", "--kind", "oracle", "--out", tmp_path / "m") == 2


def test_decode_oracle(tmp_path, copy_corpus):
    m = tmp_path / "m.json"
    run("build", "--corpus", copy_corpus, "--kind", "oracle", "--out", m)
    assert run("decode", "--model", m, "--corpus", copy_corpus, "--K", 4, "--out", tmp_path / "h.txt") == 0
    rows = read_tsv(tmp_path / "h.txt.report.tsv")
    assert rows[0]["bucket"] == "all"
    assert float(rows[0]["bleu"]) == 100.0 and float(rows[0]["length_ratio"]) == 1.0
    assert len((tmp_path / "h.txt").read_text().splitlines()) == 40


def test_decode_bound_dominance_and_rectified(tmp_path):
    p = tmp_path / "long.tsv"
    run("gen", "--task", "copy", "--V", 4, "--n", 6, "--seed", 5, "--min-len", 48, "--max-len", 60, "--out", p)
    assert min(len(s) for s in read_corpus(p).sources) > 47
    m = tmp_path / "m.json"
    run("build", "--corpus", p, "--kind", "smoothed-oracle", "--alpha", 0.1, "--out", m)
    run("decode", "--model", m, "--corpus", p, "--K", 200, "--delta", 0, "--out", tmp_path / "h0")
    (row,) = read_tsv(tmp_path / "h0.report.tsv")[:1]
    assert float(row["length_ratio"]) == 0.0
    assert (tmp_path / "h0").read_text() == "\n" * 6
    # delta = alpha / V is 0.1 in units of 1/V
    run("decode", "--model", m, "--corpus", p, "--K", 200, "--delta", 0.1, "--out", tmp_path / "h1")
    row = read_tsv(tmp_path / "h1.report.tsv")[0]
    assert float(row["bleu"]) == 100.0 and float(row["length_ratio"]) == 1.0


def test_decode_usage_errors(tmp_path, copy_corpus):
    m = tmp_path / "m.json"
    run("build", "--corpus", copy_corpus, "--kind", "oracle", "--out", m)
    base = ("decode", "--model", m, "--corpus", copy_corpus, "--out", tmp_path / "h")
    assert run(*base, "--K", 0) == 1
    assert run(*base, "--delta", -1) == 1
    assert run(*base, "--delta", 4) == 1
    assert run("decode", "--model", tmp_path / "nope.json", "--corpus", copy_corpus, "--out", tmp_path / "h") == 2
    with pytest.raises(SystemExit) as e:
        run("decode", "--bogus")
    assert e.value.code == 1


@pytest.fixture
def noisy(tmp_path):
    tr, te, m = tmp_path / "train.tsv", tmp_path / "test.tsv", tmp_path / "m.json"
    common = ("--task", "noisy_copy", "--V", 8, "--flip", 0.2, "--max-len", 12)
    run("gen", *common, "--n", 3000, "--seed", 1, "--out", tr)
    run("gen", *common, "--n", 100, "--seed", 2, "--out", te)
    run("build", "--corpus", tr, "--kind", "empirical", "--keying", "aligned", "--alpha", 0.1, "--out", m)
    return m, te


def test_sweep_grid_and_reproducible(tmp_path, noisy):
    m, te = noisy
    args = ("sweep", "--model", m, "--corpus", te, "--beams", "1,4", "--deltas", "0,1,4")
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    assert run(*args, "--out-dir", tmp_path / "b", "--workers", 2) == 0
    a = (tmp_path / "a" / "sweep.tsv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.tsv").read_bytes()
    rows = read_tsv(tmp_path / "a" / "sweep.tsv")
    assert len(rows) == 6
    assert [(r["K"], r["delta_units"]) for r in rows] == [
        ("1", "0.0"), ("1", "1.0"), ("1", "4.0"), ("4", "0.0"), ("4", "1.0"), ("4", "4.0")
    ]
    greedy = [r["bleu"] for r in rows if r["K"] == "1"]
    assert greedy[0] == greedy[1] == greedy[2]


def test_sweep_empty_grid(tmp_path, noisy):
    m, te = noisy
    assert run("sweep", "--model", m, "--corpus", te, "--beams", "", "--out-dir", tmp_path / "o") == 1


def _gap(tmp_path, capsys, model, corpus, K, delta):
    out = tmp_path / f"cal_{delta}.tsv"
    assert run("calibrate", "--model", model, "--corpus", corpus, "--K", K, "--delta", delta, "--out", out) == 0
    capsys.readouterr()
    return float(read_tsv(out)[0]["gap"])


def test_calibrate_signs(tmp_path, capsys, noisy, copy_corpus):
    m, te = noisy
    g0 = _gap(tmp_path, capsys, m, te, 20, 0)
    g1 = _gap(tmp_path, capsys, m, te, 20, 0.1)
    g_hi = _gap(tmp_path, capsys, m, te, 20, 4)
    assert g0 < 0 and abs(g1) < abs(g0) and g_hi > 0
    oracle = tmp_path / "o.json"
    run("build", "--corpus", copy_corpus, "--kind", "oracle", "--out", oracle)
    assert _gap(tmp_path, capsys, oracle, copy_corpus, 5, 0) == 0.0


def test_bound(capsys):
    assert run("bound", "--alpha", 0.1, "--V", 32000) == 0
    out = dict(l.split("\t") for l in capsys.readouterr().out.splitlines())
    assert 120.3 < float(out["continuous_bound"]) < 120.4
    assert out["t_max"] == "120"
    assert float(out["upper_at_t_max_plus_1"]) < float(out["empty_lower"]) <= float(out["upper_at_t_max"])
    assert run("bound", "--alpha", 0.1, "--V", 4) == 0
    assert "t_max\t47" in capsys.readouterr().out
    assert run("bound", "--alpha", 0, "--V", 32000) == 0
    assert "no bound" in capsys.readouterr().out
    assert run("bound", "--alpha", 1.0, "--V", 4) == 1
    assert run("bound", "--alpha", -0.1, "--V", 4) == 1
