import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acpomdp.beliefmdp import quantizer_for  # noqa: E402
from acpomdp.model import FinitePomdp, builtin  # noqa: E402


@pytest.fixture(scope="session")
def ex1():
    return builtin("ex1")


@pytest.fixture(scope="session")
def ex1_q10(ex1):
    return quantizer_for(ex1, 10)


def random_model(rng, n=3, a=2, y=2, metric="discrete"):
    T = rng.dirichlet(np.ones(n), size=(a, n))
    O = rng.dirichlet(np.ones(y), size=n)
    c = rng.random((n, a))
    return FinitePomdp.from_arrays(T, O, c, metric=metric)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
