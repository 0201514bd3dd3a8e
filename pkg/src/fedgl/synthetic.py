"""Synthetic citation-style graphs for tests and demos.

Nodes get a class, link mostly within their class (a planted partition) and
carry binary bag-of-words features drawn from a class-specific vocabulary
mixed with background words.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .graph import Graph


def citation_like(num_nodes: int = 600, num_classes: int = 4, num_features: int = 200,
                  avg_degree: float = 4.0, homophily: float = 0.8, words_per_node: int = 12,
                  topic_strength: float = 0.35, seed: int = 0) -> Graph:
    """Sample a labelled graph with class-correlated edges and features.

    ``homophily`` is the expected fraction of edges joining same-class nodes;
    ``topic_strength`` the fraction of a node's words drawn from its class
    vocabulary. No split is set.
    """
    rng = np.random.default_rng(seed)
    classes = rng.integers(num_classes, size=num_nodes)
    n_edges = int(round(avg_degree * num_nodes / 2))
    by_class = [np.flatnonzero(classes == c) for c in range(num_classes)]
    us = rng.integers(num_nodes, size=n_edges)
    same = rng.random(n_edges) < homophily
    vs = rng.integers(num_nodes, size=n_edges)
    for i in np.flatnonzero(same):
        members = by_class[classes[us[i]]]
        vs[i] = members[rng.integers(members.size)]
    keep = us != vs
    us, vs = us[keep], vs[keep]
    adj = sp.csr_matrix((np.ones(2 * us.size), (np.r_[us, vs], np.r_[vs, us])), shape=(num_nodes, num_nodes))
    adj.sum_duplicates()
    adj.data[:] = 1.0

    vocab = np.array_split(rng.permutation(num_features), num_classes)
    x = np.zeros((num_nodes, num_features))
    for i in range(num_nodes):
        topical = rng.random(words_per_node) < topic_strength
        own = vocab[classes[i]]
        words = np.where(topical, own[rng.integers(own.size, size=words_per_node)],
                         rng.integers(num_features, size=words_per_node))
        x[i, words] = 1.0
    y = np.zeros((num_nodes, num_classes))
    y[np.arange(num_nodes), classes] = 1.0
    empty = np.zeros(num_nodes, dtype=bool)
    return Graph(adj, x, y, empty, empty, empty, np.arange(num_nodes))
