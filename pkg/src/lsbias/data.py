"""Synthetic transduction tasks with known conditionals, and corpus files.

Corpus file layout (UTF-8, line oriented)::

    # lsbias-corpus v1
    #kind=noisy_copy
    #vocab=</s> <s> a b c
    #flip_prob=0.1
    #p_stop=0.05
    #min_len=1
    #max_len=150
    #seed=7
    a b c<TAB>a c c </s>

One pair per line; source and target are space-separated token strings and the
target carries its trailing EOS.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lsbias.core import InputError, TokenSeq, Vocabulary, check_complete, make_vocab

TASK_KINDS = ("copy", "reverse", "noisy_copy")
CORPUS_MAGIC = "# lsbias-corpus v1"


class CorpusParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class LengthDist:
    """Source lengths: min_len + Geometric(p_stop) - 1, clipped at max_len."""

    p_stop: float = 0.05
    min_len: int = 1
    max_len: int = 150

    def __post_init__(self):
        if not 0.0 < self.p_stop <= 1.0:
            raise InputError(f"p_stop must be in (0, 1], got {self.p_stop}")
        if not 0 <= self.min_len <= self.max_len:
            raise InputError(f"need 0 <= min_len <= max_len, got {self.min_len}, {self.max_len}")

    def sample(self, rng: np.random.Generator) -> int:
        return min(self.max_len, self.min_len + int(rng.geometric(self.p_stop)) - 1)


@dataclass(frozen=True)
class SyntheticTask:
    kind: str
    vocab: Vocabulary
    flip_prob: float = 0.0
    length_dist: LengthDist = field(default_factory=LengthDist)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise InputError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if not 0.0 <= self.flip_prob < 1.0:
            raise InputError(f"flip_prob must be in [0, 1), got {self.flip_prob}")
        if self.kind == "noisy_copy" and self.vocab.size < 4:
            raise InputError("noisy_copy needs at least two content tokens (V >= 4)")
        V = self.vocab.size
        onehot = np.eye(V)
        onehot.setflags(write=False)
        rows = {i: onehot[i] for i in range(V)}
        if self.kind == "noisy_copy" and self.flip_prob > 0:
            content = self.vocab.content_ids
            spread = self.flip_prob / (len(content) - 1)
            for c in content:
                r = np.zeros(V)
                r[content] = spread
                r[c] = 1.0 - self.flip_prob
                r.setflags(write=False)
                rows[c] = r
        object.__setattr__(self, "_rows", rows)

    def aligned_token(self, source: TokenSeq, t: int) -> int:
        """Source token that target position t copies, or EOS past the end."""
        if t >= len(source):
            return self.vocab.eos_id
        return source[len(source) - 1 - t] if self.kind == "reverse" else source[t]

    def exact_conditional(self, source: TokenSeq, prefix: TokenSeq) -> np.ndarray:
        """True q(y_t | source, prefix). Depends only on the position len(prefix)."""
        return self._rows[self.aligned_token(source, len(prefix))]

    def sample_pair(self, rng: np.random.Generator) -> tuple[TokenSeq, TokenSeq]:
        content = np.asarray(self.vocab.content_ids)
        n = self.length_dist.sample(rng)
        source = tuple(int(x) for x in rng.choice(content, size=n))
        aligned = [self.aligned_token(source, t) for t in range(n)]
        if self.kind == "noisy_copy" and self.flip_prob > 0:
            flips = rng.random(n) < self.flip_prob
            # uniform over the other content tokens: shift by 1..len-1 within the content list
            shifts = rng.integers(1, len(content), size=n)
            pos = {int(c): i for i, c in enumerate(content)}
            aligned = [
                int(content[(pos[a] + int(s)) % len(content)]) if f else a
                for a, f, s in zip(aligned, flips, shifts)
            ]
        return source, tuple(aligned) + (self.vocab.eos_id,)


def make_task(
    kind: str,
    vocab_size: int,
    flip_prob: float = 0.0,
    length_dist: LengthDist | None = None,
) -> SyntheticTask:
    if vocab_size < 3:
        raise InputError(f"vocab too small for task {kind!r}: {vocab_size}")
    return SyntheticTask(kind, make_vocab(vocab_size), flip_prob, length_dist or LengthDist())


@dataclass
class Corpus:
    pairs: list[tuple[TokenSeq, TokenSeq]]
    task: SyntheticTask
    seed: int

    @property
    def vocab(self) -> Vocabulary:
        return self.task.vocab

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[TokenSeq]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[TokenSeq]:
        return [t for _, t in self.pairs]


def generate_corpus(task: SyntheticTask, n: int, seed: int) -> Corpus:
    """n i.i.d. (source, target) pairs drawn from the task; deterministic in seed."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return Corpus([task.sample_pair(rng) for _ in range(n)], task, seed)


def write_corpus(corpus: Corpus, path) -> None:
    task = corpus.task
    ld = task.length_dist
    vocab = task.vocab
    lines = [
        CORPUS_MAGIC,
        f"#kind={task.kind}",
        f"#vocab={' '.join(vocab.tokens)}",
        f"#eos_id={vocab.eos_id}",
        f"#bos_id={vocab.bos_id}",
        f"#flip_prob={task.flip_prob!r}",
        f"#p_stop={ld.p_stop!r}",
        f"#min_len={ld.min_len}",
        f"#max_len={ld.max_len}",
        f"#seed={corpus.seed}",
    ]
    for src, tgt in corpus.pairs:
        lines.append(" ".join(vocab.decode(src)) + "\t" + " ".join(vocab.decode(tgt)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_HEADER_KEYS = ("kind", "vocab", "eos_id", "bos_id", "flip_prob", "p_stop", "min_len", "max_len", "seed")


def read_corpus(path) -> Corpus:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != CORPUS_MAGIC:
        raise CorpusParseError(1, f"missing header line {CORPUS_MAGIC!r}")
    meta: dict[str, str] = {}
    body = 1
    while body < len(lines) and lines[body].startswith("#"):
        key, sep, value = lines[body][1:].partition("=")
        if not sep:
            raise CorpusParseError(body + 1, f"malformed header {lines[body]!r}")
        meta[key.strip()] = value
        body += 1
    lineno = body
    missing = [k for k in _HEADER_KEYS if k not in meta]
    if missing:
        raise CorpusParseError(lineno, f"header lacks {', '.join(missing)}")
    try:
        vocab = Vocabulary(tuple(meta["vocab"].split(" ")), int(meta["eos_id"]), int(meta["bos_id"]))
        task = SyntheticTask(
            meta["kind"],
            vocab,
            float(meta["flip_prob"]),
            LengthDist(float(meta["p_stop"]), int(meta["min_len"]), int(meta["max_len"])),
        )
        seed = int(meta["seed"])
    except (InputError, ValueError) as e:
        raise CorpusParseError(lineno, f"bad header: {e}") from None

    pairs = []
    for lineno, line in enumerate(lines[body:], start=body + 1):
        if line.startswith("#"):
            raise CorpusParseError(lineno, "header line after corpus body")
        fields = line.split("\t")
        if len(fields) != 2:
            raise CorpusParseError(lineno, f"expected 2 tab-separated fields, got {len(fields)}")
        try:
            src = vocab.encode(fields[0].split()) if fields[0] else ()
            tgt = vocab.encode(fields[1].split())
            check_complete(tgt, vocab)
        except InputError as e:
            raise CorpusParseError(lineno, str(e)) from None
        pairs.append((src, tgt))
    return Corpus(pairs, task, seed)
