"""Federated dataset construction: client subgraphs and train/val/test splits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .graph import GlobalRegistry, Graph, induced_subgraph

__all__ = ["SplitMode", "PartitionPlan", "client_size", "sample_client", "partition", "make_splits", "apply_splits"]

# absorbs binary rounding in products such as 0.29 * 100
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class SplitMode:
    """How labelled nodes are divided.

    ``kind="fixed"`` keeps a split that ships with the dataset; without one it
    draws ``labels_per_class`` (20) per class deterministically. ``kind="random"``
    always draws ``labels_per_class`` per class.
    """

    kind: str = "fixed"
    labels_per_class: int = 20
    val_size: int = 500
    test_size: int = 1000

    def __post_init__(self):
        if self.kind not in ("fixed", "random"):
            raise ValidationError(f"unknown split kind {self.kind!r}")
        if self.labels_per_class < 1 or self.val_size < 0 or self.test_size < 1:
            raise ValidationError("split sizes must be positive")


@dataclass(frozen=True)
class PartitionPlan:
    proportions: tuple[float, ...]
    overlap_ratio: Optional[float] = None
    split: SplitMode = SplitMode()
    seed: int = 0

    def __post_init__(self):
        props = tuple(float(p) for p in self.proportions)
        object.__setattr__(self, "proportions", props)
        if not props:
            raise ValidationError("a partition plan needs at least one client")
        if any(not 0.0 < p <= 1.0 for p in props):
            raise ValidationError(f"proportions must lie in (0, 1], got {props}")
        if self.overlap_ratio is not None and not 0.0 <= self.overlap_ratio < 1.0:
            raise ValidationError(f"overlap_ratio must lie in [0, 1), got {self.overlap_ratio}")

    @property
    def num_clients(self) -> int:
        return len(self.proportions)


def client_size(proportion: float, num_nodes: int) -> int:
    return int(math.floor(proportion * num_nodes + _FLOOR_EPS))


def sample_client(master: Graph, proportion: float, rng: np.random.Generator) -> Graph:
    """Uniformly sample ``floor(proportion * N)`` nodes and return their induced subgraph.

    Rows of the result are ordered by global ID.
    """
    if not 0.0 < proportion <= 1.0:
        raise ValidationError(f"proportion must lie in (0, 1], got {proportion}")
    n = client_size(proportion, master.num_nodes)
    if n == 0:
        raise ValidationError(f"proportion {proportion} of {master.num_nodes} nodes selects no node")
    chosen = rng.choice(master.num_nodes, size=n, replace=False)
    return _subgraph_by_rows(master, chosen)


def _subgraph_by_rows(master: Graph, rows) -> Graph:
    rows = np.asarray(rows, dtype=np.int64)
    rows = rows[np.argsort(master.global_ids[rows], kind="stable")]
    return induced_subgraph(master, rows)


def _overlap_clients(master: Graph, plan: PartitionPlan, rng: np.random.Generator) -> list[Graph]:
    # Shared pool is one random node ordering; client k takes its first s_k
    # entries, so |V_i & V_j| = min(s_i, s_j) = rho * min(N_i, N_j) up to rounding.
    sizes = [client_size(p, master.num_nodes) for p in plan.proportions]
    if min(sizes) == 0:
        raise ValidationError("a proportion selects no node")
    shared = [int(round(plan.overlap_ratio * n)) for n in sizes]
    exclusive = [n - s for n, s in zip(sizes, shared)]
    needed = max(shared) + sum(exclusive)
    if needed > master.num_nodes:
        raise ValidationError(
            f"overlap plan needs {needed} distinct nodes but the master graph has {master.num_nodes}"
        )
    order = rng.permutation(master.num_nodes)
    pool = order[: max(shared)]
    cursor = max(shared)
    clients = []
    for s, e in zip(shared, exclusive):
        own = order[cursor: cursor + e]
        cursor += e
        clients.append(_subgraph_by_rows(master, np.concatenate([pool[:s], own])))
    return clients


def partition(master: Graph, plan: PartitionPlan, require_test: bool = True):
    """Split ``master`` into per-client subgraphs.

    The master graph is split first (see :func:`make_splits`); clients inherit
    membership of their nodes. Returns ``(clients, registry)``.

    Raises:
        ValidationError: if the plan cannot be met, or (with ``require_test``)
            a client ends up without test nodes.
    """
    root = np.random.SeedSequence(plan.seed)
    split_seq, sample_seq = root.spawn(2)
    masks = make_splits(master, plan.split, np.random.default_rng(split_seq))
    master = master.with_masks(*masks)
    rng = np.random.default_rng(sample_seq)
    if plan.overlap_ratio is None:
        clients = [sample_client(master, p, rng) for p in plan.proportions]
    else:
        clients = _overlap_clients(master, plan, rng)
    if require_test:
        for k, g in enumerate(clients):
            if not g.test_mask.any():
                raise ValidationError(f"client {k} received no test nodes")
    return clients, GlobalRegistry.from_graphs(clients)


def make_splits(graph: Graph, mode: SplitMode, rng: Optional[np.random.Generator] = None):
    """Disjoint ``(train, val, test)`` boolean masks over ``graph``'s rows.

    Raises:
        ValidationError: if a class has too few labelled nodes, or too few
            nodes remain for the validation and test sets.
    """
    has_canonical = graph.train_mask.any() or graph.test_mask.any()
    if mode.kind == "fixed" and has_canonical:
        return graph.train_mask.copy(), graph.val_mask.copy(), graph.test_mask.copy()
    if rng is None:
        rng = np.random.default_rng(0)
    classes = graph.label_indices()
    n = graph.num_nodes
    train = np.zeros(n, dtype=bool)
    for c in range(graph.num_classes):
        members = np.flatnonzero(classes == c)
        if members.size < mode.labels_per_class:
            raise ValidationError(
                f"class {c} has {members.size} labelled nodes, {mode.labels_per_class} requested"
            )
        train[rng.choice(members, size=mode.labels_per_class, replace=False)] = True
    rest = np.flatnonzero(~train & (classes >= 0))
    if rest.size < mode.val_size + mode.test_size:
        raise ValidationError(
            f"{rest.size} labelled nodes remain but val+test need {mode.val_size + mode.test_size}"
        )
    picked = rng.permutation(rest)[: mode.val_size + mode.test_size]
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[picked[: mode.val_size]] = True
    test[picked[mode.val_size:]] = True
    return train, val, test


def apply_splits(graph: Graph, masks: Sequence[np.ndarray]) -> Graph:
    return graph.with_masks(*masks)
