import os
import sys

import numpy as np
import pytest

from motive.graph import GraphSpec
from motive.knowledge import FACTORS, KINDS
from motive.learn import Model

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture
def toy3_path():
    return os.path.join(DATA, "toy3.arpa")


@pytest.fixture
def toy5_path():
    return os.path.join(DATA, "toy5.arpa")


def random_instance(rng, dims, D=3, integer=False):
    """A graph spec and model with random tensors, weights and features.

    With ``integer`` set, values are small integers so that ties occur.
    """
    draw = (lambda *s: rng.integers(-2, 3, size=s).astype(float)) if integer else (lambda *s: rng.standard_normal(s))
    tensors = [draw(*(dims[KINDS.index(k)] for k in rel)) for rel in FACTORS]
    spec = GraphSpec(dims, tensors, D)
    model = Model([draw(d, D) for d in dims], draw(len(FACTORS)))
    x = draw(D)
    return spec, model, x


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
