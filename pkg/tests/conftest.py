"""Shared fixtures: the 3-path instance that anchors most closed forms."""

import numpy as np
import pytest

from pgd_csma import (
    FugacityVector,
    IntentRule,
    InterferenceGraph,
    enumerate_feasible,
)


@pytest.fixture(scope="session")
def path3():
    return InterferenceGraph.path(3)


@pytest.fixture(scope="session")
def path3_space(path3):
    return enumerate_feasible(path3)


@pytest.fixture(scope="session")
def half_intent():
    return IntentRule.uniform(3, 0.5)


@pytest.fixture
def unit_fug():
    return FugacityVector.uniform(3, 1.0)


def random_graph(rng: np.random.Generator, n: int, p: float) -> InterferenceGraph:
    """Erdos-Renyi draw from a caller-owned generator (test-local seeds)."""
    edges = [
        (u, v)
        for u in range(n)
        for v in range(u + 1, n)
        if rng.random() < p
    ]
    return InterferenceGraph(n, edges)
