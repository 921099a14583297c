import itertools
import math

import pytest

from lsbias.core import sequence_logprob
from lsbias.data import make_task
from lsbias.models import OracleModel, SmoothedModel
from lsbias.smoothing import SmoothingConfig


@pytest.fixture
def copy4():
    return make_task("copy", 4)


@pytest.fixture
def oracle4(copy4):
    return OracleModel(copy4)


@pytest.fixture
def smoothed4(oracle4):
    return SmoothedModel(oracle4, SmoothingConfig(0.1, 4))


def enumerate_complete(vocab, max_len):
    """Every complete target with at most max_len tokens (EOS included)."""
    others = [i for i in range(vocab.size) if i != vocab.eos_id]
    for n in range(max_len):
        for body in itertools.product(others, repeat=n):
            yield tuple(body) + (vocab.eos_id,)


def brute_force_best(model, source, max_len):
    """Highest-probability complete target by exhaustive enumeration."""
    best, best_lp = None, -math.inf
    for tgt in enumerate_complete(model.vocab, max_len):
        lp = sequence_logprob(model, source, tgt)
        if lp > best_lp:
            best, best_lp = tgt, lp
    return best, best_lp


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
