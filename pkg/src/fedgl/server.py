"""Server side of a federated round.

Weights are averaged with client node counts as weights. Client predictions
and embeddings are aligned on the registry's union index and fused the same
way; the fused predictions yield confident pseudo labels and the fused
embeddings a sparse top-``s`` similarity graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .gcn import ModelWeights
from .graph import GlobalRegistry

__all__ = [
    "GlobalArtifacts",
    "aggregate_weights",
    "fuse_predictions",
    "fuse_embeddings",
    "fuse_rows",
    "discover_pseudo_labels",
    "build_pseudo_graph",
]


@dataclass(frozen=True, eq=False)
class GlobalArtifacts:
    """What the server distributes after a round.

    ``pseudo_labels`` and ``pseudo_graph`` are indexed by the registry's union
    ordering. A zero pseudo graph is stored as an all-zero sparse matrix.
    """

    weights: ModelWeights
    pseudo_labels: np.ndarray
    pseudo_graph: sp.csr_matrix
    round: int = 0

    @classmethod
    def initial(cls, weights: ModelWeights, union_size: int, num_classes: int) -> "GlobalArtifacts":
        return cls(
            weights=weights,
            pseudo_labels=np.zeros((union_size, num_classes)),
            pseudo_graph=sp.csr_matrix((union_size, union_size), dtype=np.float64),
            round=0,
        )

    @property
    def pseudo_label_count(self) -> int:
        return int(np.count_nonzero(self.pseudo_labels.any(axis=1)))

    @property
    def pseudo_graph_nnz(self) -> int:
        return int(self.pseudo_graph.nnz)


def aggregate_weights(uploads: Sequence[tuple[int, ModelWeights]]) -> ModelWeights:
    """Node-count weighted average of the participants' weights.

    The weights are ``N_k / sum(N_j)`` over the given uploads, so they sum to
    one under partial participation too.
    """
    if not uploads:
        raise ValidationError("aggregate_weights needs at least one upload")
    shapes = uploads[0][1].shapes
    for _, w in uploads:
        if w.shapes != shapes:
            raise ValidationError(f"weight shapes differ: {w.shapes} vs {shapes}")
    total = float(sum(n for n, _ in uploads))
    if total <= 0:
        raise ValidationError("node counts must be positive")
    w0 = np.zeros(shapes[0])
    w1 = np.zeros(shapes[1])
    for n, w in uploads:
        a = n / total
        w0 += a * w.w0
        w1 += a * w.w1
    return ModelWeights(w0, w1)


def fuse_rows(uploads: Iterable[tuple[int, np.ndarray, np.ndarray]], registry: GlobalRegistry,
              renormalize: bool = False) -> np.ndarray:
    """Weighted sum of client matrices scattered to the union index.

    Each client contributes ``N_k / M`` times its rows, with ``M`` the total
    node count of the uploads. With ``renormalize`` every fused row is then
    divided by the summed weight of the clients holding that node.
    """
    uploads = list(uploads)
    if not uploads:
        raise ValidationError("fusion needs at least one upload")
    width = np.asarray(uploads[0][1]).shape[1]
    total = float(sum(n for n, _, _ in uploads))
    fused = np.zeros((registry.union_size, width))
    coverage = np.zeros(registry.union_size)
    for n, rows, ids in uploads:
        rows = np.asarray(rows, dtype=np.float64)
        ids = np.asarray(ids, dtype=np.int64)
        if rows.shape != (ids.size, width):
            raise ValidationError(f"upload has shape {rows.shape}, expected ({ids.size}, {width})")
        pos = registry.positions(ids)
        if np.unique(pos).size != pos.size:
            raise ValidationError("duplicate node IDs in an upload")
        a = n / total
        fused[pos] += a * rows
        coverage[pos] += a
    if renormalize:
        held = coverage > 0
        fused[held] /= coverage[held, None]
    return fused


def fuse_predictions(uploads, registry: GlobalRegistry, renormalize: bool = False) -> np.ndarray:
    """Fuse per-client class probabilities ``(N_k, P_k, ids)`` into one matrix."""
    return fuse_rows(uploads, registry, renormalize)


def fuse_embeddings(uploads, registry: GlobalRegistry, renormalize: bool = False) -> np.ndarray:
    """Fuse per-client node embeddings ``(N_k, H_k, ids)`` into one matrix."""
    return fuse_rows(uploads, registry, renormalize)


def discover_pseudo_labels(fused: np.ndarray, threshold: float, train_rows: Optional[np.ndarray] = None) -> np.ndarray:
    """One-hot pseudo labels for rows whose top class probability exceeds ``threshold``.

    ``train_rows`` are row indices (fusion order) of labelled training nodes;
    they never receive a pseudo label.
    """
    p = np.asarray(fused, dtype=np.float64)
    out = np.zeros_like(p)
    if p.shape[0] == 0 or p.shape[1] == 0:
        return out
    best = p.argmax(axis=1)
    rows = np.arange(p.shape[0])
    confident = p[rows, best] > threshold
    if train_rows is not None:
        confident[np.asarray(train_rows, dtype=np.int64)] = False
    out[rows[confident], best[confident]] = 1.0
    return out


def build_pseudo_graph(embeddings: np.ndarray, s: int) -> sp.csr_matrix:
    """Row-normalized top-``s`` graph over ``max(H H^T, 0)`` with the diagonal removed.

    Among equal similarities the lower column index wins. Rows without a
    positive similarity stay empty.
    """
    if s < 1:
        raise ValidationError(f"neighbor cap s must be >= 1, got {s}")
    h = np.asarray(embeddings, dtype=np.float64)
    m = h.shape[0]
    if m == 0:
        return sp.csr_matrix((0, 0))
    sim = h @ h.T
    np.maximum(sim, 0.0, out=sim)
    np.fill_diagonal(sim, 0.0)
    keep = sim > 0
    if s < m:
        # s-th largest value per row; everything above it is kept, and the
        # lowest-indexed ties at it fill the remaining slots
        kth = -np.partition(-sim, s - 1, axis=1)[:, s - 1]
        above = sim > kth[:, None]
        at = sim == kth[:, None]
        room = s - above.sum(axis=1)
        at &= np.cumsum(at, axis=1) <= room[:, None]
        keep &= above | at
    rows, cols = np.nonzero(keep)
    vals = sim[rows, cols]
    sums = np.bincount(rows, weights=vals, minlength=m)
    return sp.csr_matrix((vals / sums[rows], (rows, cols)), shape=(m, m))
