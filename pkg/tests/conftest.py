import numpy as np
import pytest

from netmpg import environments as E
from netmpg.network import complete_graph, line_graph


@pytest.fixture(scope="session")
def line3_model():
    return E.random_networked_mpg(3, line_graph(3), 2, 2, seed=0)


@pytest.fixture(scope="session")
def coord2_model():
    """2-agent identical-interest game."""
    return E.random_networked_mpg(2, complete_graph(2), 2, 2, seed=1, identical_interest=True)


def brute_tv(p, q):
    """sup over all events of |p(C) - q(C)|."""
    k = len(p)
    best = 0.0
    for mask in range(1 << k):
        idx = [j for j in range(k) if mask >> j & 1]
        best = max(best, abs(sum(p[j] for j in idx) - sum(q[j] for j in idx)))
    return best


def rng_simplex(rng, k):
    return rng.dirichlet(np.ones(k))
