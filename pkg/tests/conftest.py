"""Shared fixtures: certified exponential-sum tables and system builders."""

import numpy as np
import pytest

from slabewald.core import make_system
from slabewald.soe import build_soe_contour


@pytest.fixture(scope="session")
def soe8():
    return build_soe_contour(8)


@pytest.fixture(scope="session")
def soe16():
    return build_soe_contour(16)


@pytest.fixture(scope="session")
def soe24():
    return build_soe_contour(24)


@pytest.fixture
def salt_factory():
    """Factory for random neutral two-species systems filling a box."""

    def make(n_pairs, box, seed=0, charge=1.0):
        rng = np.random.default_rng(seed)
        n = 2 * n_pairs
        pos = rng.random((n, 3)) * np.array([box.lx, box.ly, box.lz])
        q = np.concatenate([np.full(n_pairs, charge), np.full(n_pairs, -charge)])
        return make_system(q, np.ones(n), pos, box=box)

    return make
