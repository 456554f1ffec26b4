import numpy as np
import pytest

from cb2o.core import BiLevelProblem, Ensemble


def quad(center):
    c = np.asarray(center, dtype=float)
    return lambda x: np.sum((np.asarray(x) - c) ** 2, axis=-1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_problem(lower, upper, dim=2, **kw):
    return BiLevelProblem(lower=lower, upper=upper, dim=dim, **kw)


def random_ensemble(gen, n, d=2, scale=1.0):
    return Ensemble(scale * gen.standard_normal((n, d)))


# PASS/FAIL lines from the acceptance module, repeated at the end of the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
