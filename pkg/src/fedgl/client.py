"""Client side of a federated round."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import NumericError, ValidationError
from .gcn import AdamState, ModelWeights, forward, train_epoch
from .graph import Graph, normalize_adjacency

__all__ = [
    "ClientState",
    "RoundUpload",
    "complement_adjacency",
    "prepare_ssl_targets",
    "local_train",
]


@dataclass
class ClientState:
    """Everything one client keeps between rounds.

    ``base_adj`` is the normalized adjacency of the client's own edges and is
    never modified; ``current_adj`` is the adjacency used in the latest round
    (the base plus the pseudo-graph complement, if any).
    """

    graph: Graph
    weights: ModelWeights
    optimizer: AdamState
    rng: np.random.Generator
    client_id: int = 0
    base_adj: sp.csr_matrix = field(default=None)
    current_adj: sp.csr_matrix = field(default=None)

    def __post_init__(self):
        if self.base_adj is None:
            self.base_adj = normalize_adjacency(self.graph.adjacency)
        if self.current_adj is None:
            self.current_adj = self.base_adj

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


@dataclass(frozen=True, eq=False)
class RoundUpload:
    """A client's payload to the server after local training."""

    weights: ModelWeights
    predictions: np.ndarray
    embeddings: np.ndarray
    node_count: int
    ids: np.ndarray
    client_id: int = 0


def complement_adjacency(base, pseudo_slice, beta: float) -> sp.csr_matrix:
    """``base + beta * D^-1/2 A_p D^-1/2`` for a client's pseudo-graph slice ``A_p``.

    ``D`` holds the row sums of ``A_p``; rows with zero degree get a zero
    scale. The base is not modified.
    """
    if beta < 0:
        raise ValidationError(f"beta must be non-negative, got {beta}")
    base = sp.csr_matrix(base)
    if pseudo_slice is None or beta == 0:
        return base
    slice_ = sp.csr_matrix(pseudo_slice, dtype=np.float64)
    if slice_.shape != base.shape:
        raise ValidationError(f"pseudo-graph slice {slice_.shape} does not match adjacency {base.shape}")
    if slice_.nnz == 0:
        return base
    degree = np.asarray(slice_.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(degree)
    pos = degree > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(degree[pos])
    scale = sp.diags(inv_sqrt, format="csr")
    out = base + beta * (scale @ slice_ @ scale)
    out = sp.csr_matrix(out)
    out.sort_indices()
    return out


def prepare_ssl_targets(pseudo_slice, train_mask):
    """Drop pseudo labels on training nodes.

    Returns ``(targets, ssl_mask)`` where ``ssl_mask`` flags the rows that
    still carry a pseudo label.
    """
    targets = np.array(pseudo_slice, dtype=np.float64)
    train = np.asarray(train_mask, dtype=bool)
    if targets.shape[0] != train.shape[0]:
        raise ValidationError("pseudo-label slice and train mask differ in length")
    targets[train] = 0.0
    return targets, targets.any(axis=1)


def local_train(state: ClientState, weights: ModelWeights, pseudo_labels=None, pseudo_graph=None,
                epochs: int = 10, alpha: float = 0.0, beta: float = 0.0, dropout: float = 0.0,
                embedding_source: str = "output", round_index: Optional[int] = None) -> RoundUpload:
    """Run one client round starting from the global ``weights``.

    ``pseudo_labels`` (N_k x C) and ``pseudo_graph`` (N_k x N_k) are this
    client's projections of the global artifacts; ``None`` means none. The
    uploaded predictions and embeddings come from a dropout-free pass over
    the complemented adjacency.
    """
    if epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {epochs}")
    if embedding_source not in ("output", "hidden"):
        raise ValidationError(f"unknown embedding source {embedding_source!r}")
    g = state.graph
    adj = complement_adjacency(state.base_adj, pseudo_graph, beta)
    state.current_adj = adj
    ssl_targets, ssl_mask = None, None
    if pseudo_labels is not None:
        ssl_targets, ssl_mask = prepare_ssl_targets(pseudo_labels, g.train_mask)
        if not ssl_mask.any():
            ssl_targets, ssl_mask = None, None
    w, opt = weights, state.optimizer
    for epoch in range(epochs):
        try:
            w, opt, _ = train_epoch(adj, g.model_input, w, opt, g.labels, g.train_mask,
                                    ssl_targets, ssl_mask, alpha, dropout, state.rng)
        except NumericError as exc:
            raise NumericError(f"client {state.client_id}, round {round_index}, epoch {epoch}: {exc}") from exc
    state.weights, state.optimizer = w, opt
    out = forward(adj, g.model_input, w)
    emb = out.embeddings if embedding_source == "output" else out.hidden
    return RoundUpload(
        weights=w,
        predictions=out.probabilities,
        embeddings=emb,
        node_count=g.num_nodes,
        ids=g.global_ids,
        client_id=state.client_id,
    )
