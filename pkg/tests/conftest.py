import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.sparse.csgraph import shortest_path

from lipro.metric_core import FiniteMetricSpace
from lipro.path_space import GridPathMeasure, TimeGrid

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_space(rng, n, low=0.5, high=2.0):
    """Shortest-path closure of random positive weights: always a metric."""
    w = rng.uniform(low, high, size=(n, n))
    w = np.triu(w, 1)
    w = w + w.T
    d = shortest_path(w, method="FW", directed=False)
    return FiniteMetricSpace(d)


def random_measure(rng, space, grid, atoms, exact=False):
    paths = rng.integers(0, len(space), size=(atoms, len(grid)))
    if exact:
        from fractions import Fraction

        raw = rng.integers(1, 6, size=atoms)
        weights = [Fraction(int(r), int(raw.sum())) for r in raw]
    else:
        raw = rng.uniform(0.1, 1.0, size=atoms)
        weights = raw / raw.sum()
    return GridPathMeasure(space, grid, paths, weights)


@pytest.fixture
def three_point():
    """The asymmetric space with d(a,b)=2, d(a,c)=3, d(b,c)=4."""
    return FiniteMetricSpace([[0, 2, 3], [2, 0, 4], [3, 4, 0]], points="abc")


@pytest.fixture
def grid2():
    return TimeGrid(1.0, 2)


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """Record one result line per acceptance criterion for the terminal summary."""

    def record(k, ok, detail):
        ACCEPTANCE_LINES[k] = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
