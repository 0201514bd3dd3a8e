"""Graph container, adjacency normalization and global/local index alignment.

Every party (client, merged server view, master dataset) holds its data as a
:class:`Graph`. Row ``i`` of every per-node array belongs to the node whose
global identifier is ``global_ids[i]``; the global identifier is what lets the
server line up matrices coming from clients of different sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError

__all__ = [
    "Graph",
    "GlobalRegistry",
    "normalize_adjacency",
    "project_rows",
    "project_submatrix",
    "scatter_rows",
    "merge_graphs",
    "induced_subgraph",
    "edge_array",
]


def _canonical_csr(matrix) -> sp.csr_matrix:
    m = sp.csr_matrix(matrix, dtype=np.float64)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


@dataclass(frozen=True, eq=False)
class Graph:
    """One party's attributed graph.

    Attributes:
        adjacency: symmetric non-negative CSR matrix (N x N), sorted indices.
        features: dense float64 matrix (N x d).
        labels: one-hot float64 matrix (N x C); an all-zero row marks an
            unlabeled node.
        train_mask, val_mask, test_mask: disjoint boolean vectors of length N.
        global_ids: int64 vector of length N, unique.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    global_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        adj = _canonical_csr(self.adjacency)
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        n = adj.shape[0]
        if adj.shape != (n, n):
            raise ValidationError(f"adjacency must be square, got {adj.shape}")
        if features.ndim != 2 or features.shape[0] != n:
            raise ValidationError(f"features must have {n} rows, got shape {features.shape}")
        if labels.ndim != 2 or labels.shape[0] != n:
            raise ValidationError(f"labels must have {n} rows, got shape {labels.shape}")
        _check_symmetric_nonnegative(adj)
        row_sums = labels.sum(axis=1)
        if not np.all((labels == 0) | (labels == 1)) or np.any(row_sums > 1):
            raise ValidationError("labels must be one-hot (or all-zero for unlabeled rows)")
        masks = []
        for name in ("train_mask", "val_mask", "test_mask"):
            mask = np.asarray(getattr(self, name), dtype=bool)
            if mask.shape != (n,):
                raise ValidationError(f"{name} must have shape ({n},), got {mask.shape}")
            masks.append(mask)
        if np.any(masks[0] & masks[1]) or np.any(masks[0] & masks[2]) or np.any(masks[1] & masks[2]):
            raise ValidationError("train/val/test masks must be disjoint")
        gids = np.arange(n, dtype=np.int64) if self.global_ids is None else np.asarray(self.global_ids, dtype=np.int64)
        if gids.shape != (n,):
            raise ValidationError(f"global_ids must have shape ({n},), got {gids.shape}")
        if np.unique(gids).size != n:
            raise ValidationError("global_ids must be unique within a graph")
        for name, value in (
            ("adjacency", adj),
            ("features", features),
            ("labels", labels),
            ("train_mask", masks[0]),
            ("val_mask", masks[1]),
            ("test_mask", masks[2]),
            ("global_ids", gids),
        ):
            object.__setattr__(self, name, value)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @cached_property
    def model_input(self):
        """Features as fed to the model: CSR when at most a quarter of entries are nonzero."""
        if np.count_nonzero(self.features) <= 0.25 * self.features.size:
            return sp.csr_matrix(self.features)
        return self.features

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def num_edges(self) -> int:
        """Number of undirected edges (self-loops counted once)."""
        upper = sp.triu(self.adjacency, k=0)
        return int(upper.nnz)

    def label_indices(self) -> np.ndarray:
        """Class index per node, -1 for unlabeled rows."""
        out = self.labels.argmax(axis=1)
        out[self.labels.sum(axis=1) == 0] = -1
        return out

    def with_masks(self, train_mask, val_mask, test_mask) -> "Graph":
        return replace(self, train_mask=train_mask, val_mask=val_mask, test_mask=test_mask)


@dataclass(frozen=True)
class GlobalRegistry:
    """Node bookkeeping across clients.

    ``union_ids`` is the sorted union of client node IDs; its length is the
    size of the server's fusion index space. ``total_multiplicity`` counts
    overlapping nodes once per client that holds them.
    """

    union_ids: np.ndarray
    per_client_counts: tuple[int, ...]

    @classmethod
    def from_graphs(cls, graphs: Sequence[Graph]) -> "GlobalRegistry":
        if not graphs:
            return cls(np.zeros(0, dtype=np.int64), ())
        union = np.unique(np.concatenate([g.global_ids for g in graphs]))
        return cls(union, tuple(int(g.num_nodes) for g in graphs))

    @property
    def union_size(self) -> int:
        return int(self.union_ids.size)

    @property
    def total_multiplicity(self) -> int:
        return int(sum(self.per_client_counts))

    @property
    def num_clients(self) -> int:
        return len(self.per_client_counts)

    def positions(self, global_ids) -> np.ndarray:
        """Row index in the fusion space of each global ID."""
        ids = np.asarray(global_ids, dtype=np.int64)
        pos = np.searchsorted(self.union_ids, ids)
        if ids.size and (np.any(pos >= self.union_size) or np.any(self.union_ids[np.minimum(pos, self.union_size - 1)] != ids)):
            raise ValidationError("global ID not present in registry")
        return pos


def _check_symmetric_nonnegative(adj: sp.csr_matrix) -> None:
    if adj.nnz and adj.data.min() < 0:
        raise ValidationError("adjacency must be non-negative")
    if (adj != adj.T).nnz:
        raise ValidationError("adjacency must be symmetric")


def normalize_adjacency(adjacency) -> sp.csr_matrix:
    """Symmetric GCN normalization ``D^-1/2 (A + I) D^-1/2``.

    Raises:
        ValidationError: if ``adjacency`` is empty, not square, asymmetric or
            has negative entries.
    """
    adj = _canonical_csr(adjacency)
    n = adj.shape[0]
    if n < 1 or adj.shape != (n, n):
        raise ValidationError(f"adjacency must be square with N >= 1, got {adj.shape}")
    _check_symmetric_nonnegative(adj)
    tilde = adj + sp.identity(n, dtype=np.float64, format="csr")
    degree = np.asarray(tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degree)
    scale = sp.diags(inv_sqrt, format="csr")
    return _canonical_csr(scale @ tilde @ scale)


def project_rows(global_matrix, global_ids, union_ids=None):
    """Pick the rows of a global-index matrix that belong to one client.

    Args:
        global_matrix: (M_u x c) dense array (or sparse matrix) in fusion order.
        global_ids: the client's global node IDs in local order.
        union_ids: sorted ID of each fusion row. Defaults to ``arange(M_u)``.
    """
    n_rows = global_matrix.shape[0]
    ids = np.asarray(global_ids, dtype=np.int64).reshape(-1)
    if union_ids is None:
        if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
            raise ValidationError("global ID outside the global index space")
        pos = ids
    else:
        pos = GlobalRegistry(np.asarray(union_ids, dtype=np.int64), ()).positions(ids)
    return global_matrix[pos]


def project_submatrix(global_matrix, global_ids, union_ids=None) -> sp.csr_matrix:
    """Square restriction of a global sparse matrix to one client's nodes.

    Entries linking a client node to a node it does not hold are dropped.
    """
    ids = np.asarray(global_ids, dtype=np.int64).reshape(-1)
    if union_ids is None:
        pos = ids
        if ids.size and (ids.min() < 0 or ids.max() >= global_matrix.shape[0]):
            raise ValidationError("global ID outside the global index space")
    else:
        pos = GlobalRegistry(np.asarray(union_ids, dtype=np.int64), ()).positions(ids)
    sub = sp.csr_matrix(global_matrix)[pos][:, pos]
    return _canonical_csr(sub)


def scatter_rows(client_matrix, global_ids, union_size: int, union_ids=None) -> np.ndarray:
    """Place a client's rows into a zero matrix of the global index space."""
    rows = np.asarray(client_matrix, dtype=np.float64)
    ids = np.asarray(global_ids, dtype=np.int64).reshape(-1)
    if rows.ndim != 2 or rows.shape[0] != ids.size:
        raise ValidationError(f"client matrix has shape {rows.shape}, expected {ids.size} rows")
    if np.unique(ids).size != ids.size:
        raise ValidationError("duplicate global IDs")
    if union_ids is None:
        if ids.size and (ids.min() < 0 or ids.max() >= union_size):
            raise ValidationError("global ID outside the global index space")
        pos = ids
    else:
        pos = GlobalRegistry(np.asarray(union_ids, dtype=np.int64), ()).positions(ids)
    out = np.zeros((union_size, rows.shape[1]), dtype=np.float64)
    out[pos] = rows
    return out


def edge_array(graph: Graph) -> np.ndarray:
    """Undirected edges as an (E x 2) array of global IDs, ``u <= v``."""
    upper = sp.triu(graph.adjacency, k=0).tocoo()
    return np.stack([graph.global_ids[upper.row], graph.global_ids[upper.col]], axis=1)


def induced_subgraph(graph: Graph, nodes) -> Graph:
    """Subgraph on local row indices ``nodes`` (kept in the given order)."""
    idx = np.asarray(nodes, dtype=np.int64)
    adj = graph.adjacency[idx][:, idx]
    return Graph(
        adjacency=adj,
        features=graph.features[idx],
        labels=graph.labels[idx],
        train_mask=graph.train_mask[idx],
        val_mask=graph.val_mask[idx],
        test_mask=graph.test_mask[idx],
        global_ids=graph.global_ids[idx],
    )


def merge_graphs(graphs: Sequence[Graph]) -> Graph:
    """Union of several client graphs sampled from one master graph.

    Nodes are matched by global ID and ordered by it. Duplicate edges collapse
    to a single unit-weight edge; a node belongs to a merged mask if any
    client puts it there.

    Raises:
        ValidationError: on dimension mismatch, or when two clients disagree
            on the features or label of a shared node.
    """
    if not graphs:
        raise ValidationError("merge_graphs needs at least one graph")
    d, c = graphs[0].num_features, graphs[0].num_classes
    for g in graphs[1:]:
        if g.num_features != d or g.num_classes != c:
            raise ValidationError("feature dimension and class count must agree across graphs")
    registry = GlobalRegistry.from_graphs(graphs)
    n = registry.union_size
    features = np.zeros((n, d))
    labels = np.zeros((n, c))
    seen = np.zeros(n, dtype=bool)
    masks = np.zeros((3, n), dtype=bool)
    rows, cols = [], []
    for g in graphs:
        pos = registry.positions(g.global_ids)
        old = seen[pos]
        if np.any(old):
            if not np.array_equal(features[pos[old]], g.features[old]):
                raise ValidationError("conflicting features for a shared global ID")
            if not np.array_equal(labels[pos[old]], g.labels[old]):
                raise ValidationError("conflicting labels for a shared global ID")
        features[pos] = g.features
        labels[pos] = g.labels
        seen[pos] = True
        masks[0, pos] |= g.train_mask
        masks[1, pos] |= g.val_mask
        masks[2, pos] |= g.test_mask
        coo = g.adjacency.tocoo()
        rows.append(pos[coo.row])
        cols.append(pos[coo.col])
    r = np.concatenate(rows)
    cidx = np.concatenate(cols)
    adj = sp.csr_matrix((np.ones(r.size), (r, cidx)), shape=(n, n))
    adj.sum_duplicates()
    adj.data[:] = 1.0
    return Graph(
        adjacency=adj,
        features=features,
        labels=labels,
        train_mask=masks[0],
        val_mask=masks[1],
        test_mask=masks[2],
        global_ids=registry.union_ids,
    )
