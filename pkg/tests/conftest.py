import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def well_conditioned(order, seed):
    """Diagonally dominant test matrix; every pivot path stays nonsingular."""
    g = np.random.default_rng(seed)
    m = g.uniform(-1.0, 1.0, (order, order))
    m[np.diag_indices(order)] += 2.0 * order
    return m
