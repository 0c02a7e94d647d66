import numpy as np
import pytest

from kdrec import gen_synthetic
from kdrec.graph import build_graph


@pytest.fixture(scope="session")
def small_bundle():
    """Tiny planted-signal dataset shared by the slower pipeline tests."""
    return gen_synthetic(60, 40, 4, [12, 10], interactions_per_user=10,
                         noise_std=0.3, seed=7)


@pytest.fixture
def random_graph():
    """Factory for random bipartite graphs with controllable density."""

    def make(n_users, n_items, density, seed):
        rng = np.random.default_rng(seed)
        pairs = [(u, i) for u in range(n_users) for i in range(n_items)
                 if rng.random() < density]
        if not pairs:
            pairs = [(0, 0)]
        return build_graph(pairs, n_users=n_users, n_items=n_items)

    return make
