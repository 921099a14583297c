"""Model files: one JSON document with a format version and a model-kind tag.

Wrappers nest their inner model. Floats are written with repr precision, so a
loaded model reproduces the saved one's distributions bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from lsbias.core import SequenceModel, Vocabulary
from lsbias.data import LengthDist, SyntheticTask
from lsbias.models import (
    EmpiricalModel,
    LogLinearModel,
    OracleModel,
    PerturbedModel,
    RandomModel,
    SmoothedModel,
)
from lsbias.smoothing import SmoothingConfig

MODEL_FORMAT = "lsbias-model"
MODEL_FORMAT_VERSION = 1


class ModelLoadError(ValueError):
    pass


def _vocab_doc(v: Vocabulary) -> dict:
    return {"tokens": list(v.tokens), "eos_id": v.eos_id, "bos_id": v.bos_id}


def _vocab(doc: dict) -> Vocabulary:
    return Vocabulary(tuple(doc["tokens"]), doc["eos_id"], doc["bos_id"])


def task_to_doc(task: SyntheticTask) -> dict:
    ld = task.length_dist
    return {
        "kind": task.kind,
        "vocab": _vocab_doc(task.vocab),
        "flip_prob": task.flip_prob,
        "length_dist": {"p_stop": ld.p_stop, "min_len": ld.min_len, "max_len": ld.max_len},
    }


def task_from_doc(doc: dict) -> SyntheticTask:
    return SyntheticTask(doc["kind"], _vocab(doc["vocab"]), doc["flip_prob"], LengthDist(**doc["length_dist"]))


def model_to_doc(model: SequenceModel) -> dict:
    if isinstance(model, OracleModel):
        return {"kind": "oracle", "task": task_to_doc(model.task)}
    if isinstance(model, SmoothedModel):
        return {"kind": "smoothed", "alpha": model.cfg.alpha, "inner": model_to_doc(model.inner)}
    if isinstance(model, PerturbedModel):
        return {
            "kind": "perturbed",
            "noise_scale": model.noise_scale,
            "seed": model.seed,
            "inner": model_to_doc(model.inner),
        }
    if isinstance(model, RandomModel):
        return {
            "kind": "random",
            "vocab": _vocab_doc(model.vocab),
            "seed": model.seed,
            "concentration": model.concentration,
        }
    if isinstance(model, EmpiricalModel):
        rows = []
        for (skey, hist), c in model.counts.items():
            skey_doc = [list(skey[0]), skey[1]] if model.keying == "position" else skey
            nz = np.flatnonzero(c)
            rows.append([skey_doc, list(hist), [[int(i), int(c[i])] for i in nz]])
        return {
            "kind": "empirical",
            "vocab": _vocab_doc(model.vocab),
            "order": model.order,
            "keying": model.keying,
            "counts": rows,
        }
    if isinstance(model, LogLinearModel):
        return {
            "kind": "loglinear",
            "vocab": _vocab_doc(model.vocab),
            "order": model.order,
            "alpha": model.alpha,
            "weights": model.weights.tolist(),
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_doc(doc: dict) -> SequenceModel:
    kind = doc.get("kind")
    if kind == "oracle":
        return OracleModel(task_from_doc(doc["task"]))
    if kind == "smoothed":
        inner = model_from_doc(doc["inner"])
        return SmoothedModel(inner, SmoothingConfig(doc["alpha"], inner.vocab.size))
    if kind == "perturbed":
        return PerturbedModel(model_from_doc(doc["inner"]), doc["noise_scale"], doc["seed"])
    if kind == "random":
        return RandomModel(_vocab(doc["vocab"]), doc["seed"], doc["concentration"])
    if kind == "empirical":
        vocab = _vocab(doc["vocab"])
        keying = doc["keying"]
        counts = {}
        for skey_doc, hist, nz in doc["counts"]:
            skey = (tuple(skey_doc[0]), skey_doc[1]) if keying == "position" else skey_doc
            c = np.zeros(vocab.size, dtype=np.int64)
            for i, n in nz:
                c[i] = n
            counts[(skey, tuple(hist))] = c
        return EmpiricalModel(vocab, doc["order"], keying, counts)
    if kind == "loglinear":
        return LogLinearModel(_vocab(doc["vocab"]), doc["order"], np.asarray(doc["weights"], dtype=float), doc["alpha"])
    raise ModelLoadError(f"unknown model kind {kind!r}")


def save_model(model: SequenceModel, path) -> None:
    doc = {"format": MODEL_FORMAT, "format_version": MODEL_FORMAT_VERSION, "model": model_to_doc(model)}
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path) -> SequenceModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelLoadError(f"{path}: not a complete model document ({e})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelLoadError(f"{path}: not an {MODEL_FORMAT} file")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelLoadError(
            f"{path}: format version {doc.get('format_version')!r}, this build reads {MODEL_FORMAT_VERSION}"
        )
    try:
        return model_from_doc(doc["model"])
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ModelLoadError):
            raise
        raise ModelLoadError(f"{path}: malformed model document ({e!r})") from None
