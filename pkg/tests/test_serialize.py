import json

import numpy as np
import pytest

from lsbias.core import make_vocab
from lsbias.data import generate_corpus, make_task
from lsbias.models import (
    LogLinearModel,
    OracleModel,
    PerturbedModel,
    RandomModel,
    SmoothedModel,
    build_empirical,
    train_loglinear,
)
from lsbias.serialize import ModelLoadError, load_model, save_model
from lsbias.smoothing import SmoothingConfig


def _queries(vocab, n, seed):
    rng = np.random.default_rng(seed)
    content = vocab.content_ids
    out = []
    for _ in range(n):
        src = tuple(int(x) for x in rng.choice(content, rng.integers(1, 8)))
        pre = tuple(int(x) for x in rng.choice(content, rng.integers(0, len(src) + 2)))
        out.append((src, pre))
    return out


def _assert_same(a, b, n=100, seed=0):
    for src, pre in _queries(a.vocab, n, seed):
        assert np.array_equal(a.next_dist(src, pre), b.next_dist(src, pre))


@pytest.fixture
def corpus6():
    return generate_corpus(make_task("noisy_copy", 6, 0.2), 300, seed=4)


@pytest.mark.parametrize("keying", ["position", "aligned"])
@pytest.mark.parametrize("order", [1, 2])
def test_empirical_roundtrip(tmp_path, corpus6, keying, order):
    m = build_empirical(corpus6.pairs, order, corpus6.vocab, keying=keying)
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.order == order and back.keying == keying
    _assert_same(m, back)
    # queries seen in training too, so the context level is exercised
    for src, tgt in corpus6.pairs[:30]:
        for t in range(len(tgt)):
            assert np.array_equal(m.next_dist(src, tgt[:t]), back.next_dist(src, tgt[:t]))


def test_smoothed_roundtrip_keeps_alpha(tmp_path, corpus6):
    alpha = 0.1234567890123
    m = SmoothedModel(build_empirical(corpus6.pairs, 1, corpus6.vocab), SmoothingConfig(alpha, 6))
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.cfg.alpha == alpha
    _assert_same(m, back)


def test_loglinear_roundtrip(tmp_path, corpus6):
    m = train_loglinear(corpus6.pairs, corpus6.vocab, SmoothingConfig(0.1, 6), steps=50).model
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert isinstance(back, LogLinearModel) and np.array_equal(back.weights, m.weights)
    _assert_same(m, back)


def test_wrapper_and_oracle_roundtrip(tmp_path):
    task = make_task("reverse", 5)
    for m in (
        OracleModel(task),
        PerturbedModel(SmoothedModel(OracleModel(task), SmoothingConfig(0.2, 5)), 0.05, 11),
        RandomModel(make_vocab(5), 3, 0.5),
    ):
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert type(back) is type(m)
        _assert_same(m, back, n=30)


def test_load_errors(tmp_path):
    p = tmp_path / "m.json"
    save_model(OracleModel(make_task("copy", 4)), p)
    doc = json.loads(p.read_text())

    doc["format_version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(ModelLoadError, match="version"):
        load_model(p)

    doc["format_version"] = 1
    doc["model"]["kind"] = "transformer"
    p.write_text(json.dumps(doc))
    with pytest.raises(ModelLoadError, match="unknown model kind"):
        load_model(p)

    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(ModelLoadError):
        load_model(p)

    p.write_text(json.dumps({"hello": 1}))
    with pytest.raises(ModelLoadError):
        load_model(p)
