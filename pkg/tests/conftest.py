import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, str(Path(__file__).parent))

from fedgl.graph import Graph  # noqa: E402


def random_graph(n, d, c, rng, p=0.4, labelled=True, ids=None):
    """Random undirected graph with one-hot labels and no split."""
    upper = np.triu(rng.random((n, n)) < p, k=1)
    adj = sp.csr_matrix((upper | upper.T).astype(float))
    x = rng.random((n, d))
    y = np.zeros((n, c))
    if labelled:
        y[np.arange(n), rng.integers(c, size=n)] = 1.0
    empty = np.zeros(n, dtype=bool)
    return Graph(adj, x, y, empty, empty, empty, np.arange(n) if ids is None else ids)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
