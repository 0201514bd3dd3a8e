"""Experiment runners: FedGL and its ablations, Centralized, Local.

Every runner works on a :class:`FederatedData` (the clients plus the merged
server-side view) and one integer seed. All randomness is derived from that
seed through fixed :class:`numpy.random.SeedSequence` keys, so results do not
depend on how client rounds are scheduled across threads.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .client import ClientState, RoundUpload, complement_adjacency, local_train
from .config import FEDERATED_MODES, ExperimentConfig
from .errors import ValidationError
from .gcn import AdamState, ModelWeights, accuracy, forward, glorot_init, train_epoch
from .graph import GlobalRegistry, Graph, merge_graphs, normalize_adjacency, project_rows, project_submatrix
from .partition import partition
from .server import (
    GlobalArtifacts,
    aggregate_weights,
    build_pseudo_graph,
    discover_pseudo_labels,
    fuse_embeddings,
    fuse_predictions,
)

log = logging.getLogger(__name__)

# SeedSequence stream tags
_INIT, _DROPOUT, _PARTICIPANTS = 1, 2, 3


@dataclass(frozen=True)
class RoundRecord:
    round: int
    global_val_acc: Optional[float]
    global_test_acc: Optional[float]
    mean_local_test_acc: Optional[float]
    pseudo_label_count: int = 0
    pseudo_graph_nnz: int = 0


@dataclass
class MetricsReport:
    rounds: list[RoundRecord] = field(default_factory=list)
    global_test_acc: Optional[float] = None
    per_client_local_test_acc: tuple[float, ...] = ()
    best_round: int = 0
    wall_time: Optional[float] = None

    def __eq__(self, other):
        if not isinstance(other, MetricsReport):
            return NotImplemented
        return (
            self.rounds == other.rounds
            and _same(self.global_test_acc, other.global_test_acc)
            and tuple(self.per_client_local_test_acc) == tuple(other.per_client_local_test_acc)
            and self.best_round == other.best_round
            and _same(self.wall_time, other.wall_time)
        )

    @property
    def mean_local_test_acc(self) -> Optional[float]:
        if not self.per_client_local_test_acc:
            return None
        return float(np.mean(self.per_client_local_test_acc))


def _same(a, b) -> bool:
    return a == b or (a is not None and b is not None and math.isnan(a) and math.isnan(b))


@dataclass
class RunResult:
    report: MetricsReport
    weights: Optional[ModelWeights] = None
    artifacts: Optional[GlobalArtifacts] = None
    client_weights: Optional[list[ModelWeights]] = None


@dataclass
class FederatedData:
    """Clients plus the server-side merged evaluation graph."""

    clients: list[Graph]
    registry: GlobalRegistry
    merged: Graph
    merged_adj: sp.csr_matrix
    client_adjs: list[sp.csr_matrix]

    @classmethod
    def from_clients(cls, clients: Sequence[Graph]) -> "FederatedData":
        clients = list(clients)
        if not clients:
            raise ValidationError("at least one client is required")
        merged = merge_graphs(clients)
        return cls(
            clients=clients,
            registry=GlobalRegistry.from_graphs(clients),
            merged=merged,
            merged_adj=normalize_adjacency(merged.adjacency),
            client_adjs=[normalize_adjacency(g.adjacency) for g in clients],
        )

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    def train_rows(self) -> np.ndarray:
        """Fusion-space rows of every client's training nodes."""
        ids = np.concatenate([g.global_ids[g.train_mask] for g in self.clients])
        return self.registry.positions(np.unique(ids))


def seed_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *key]))


def build_data(config: ExperimentConfig, master: Graph, seed: int) -> FederatedData:
    clients, _ = partition(master, config.plan(seed))
    return FederatedData.from_clients(clients)


def sample_participants(num_clients: int, ratio: float, seed: int, round_index: int) -> np.ndarray:
    """Sorted client indices taking part in ``round_index``."""
    count = min(num_clients, max(1, math.ceil(ratio * num_clients - 1e-9)))
    if count == num_clients:
        return np.arange(num_clients)
    rng = seed_rng(seed, _PARTICIPANTS, round_index)
    return np.sort(rng.choice(num_clients, size=count, replace=False))


def _check_evaluable(data: FederatedData) -> None:
    if not data.merged.val_mask.any():
        raise ValidationError("merged validation set is empty")
    if not data.merged.test_mask.any():
        raise ValidationError("merged test set is empty")
    for k, g in enumerate(data.clients):
        if not g.test_mask.any():
            raise ValidationError(f"client {k} has an empty test set")


def evaluate_goals(weights: ModelWeights, data: FederatedData, client_adjs=None):
    """Global accuracy on the merged test set and per-client local test accuracies.

    ``client_adjs`` overrides each client's adjacency (e.g. the complemented
    one under FedGL); defaults to the clients' own normalized adjacency.
    """
    _check_evaluable(data)
    out = forward(data.merged_adj, data.merged.model_input, weights)
    global_acc = accuracy(out.probabilities, data.merged.labels, data.merged.test_mask)
    adjs = data.client_adjs if client_adjs is None else client_adjs
    local = []
    for g, adj in zip(data.clients, adjs):
        p = forward(adj, g.model_input, weights).probabilities
        local.append(accuracy(p, g.labels, g.test_mask))
    return global_acc, tuple(local)


def _global_val_test(weights: ModelWeights, data: FederatedData):
    p = forward(data.merged_adj, data.merged.model_input, weights).probabilities
    return (
        accuracy(p, data.merged.labels, data.merged.val_mask),
        accuracy(p, data.merged.labels, data.merged.test_mask),
    )


def _complemented_adjs(config: ExperimentConfig, data: FederatedData, views: Sequence[GlobalArtifacts]):
    """Each client's adjacency complemented with the pseudo graph it last trained on."""
    if not config.use_pseudo_graph:
        return data.client_adjs
    out = []
    for g, adj, view in zip(data.clients, data.client_adjs, views):
        if view.pseudo_graph_nnz:
            adj = complement_adjacency(
                adj, project_submatrix(view.pseudo_graph, g.global_ids, data.registry.union_ids), config.beta
            )
        out.append(adj)
    return out


class _EarlyStopper:
    """Tracks the best validation accuracy; ties keep the earlier round."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_val = -math.inf
        self.best_round = 0
        self.best_state = None

    def update(self, round_index: int, val_acc: float, state) -> bool:
        """Record a round; returns True when training should stop."""
        if val_acc > self.best_val:
            self.best_val = val_acc
            self.best_round = round_index
            self.best_state = state
            return False
        return round_index - self.best_round >= self.patience


def _initial_weights(config: ExperimentConfig, data: FederatedData, seed: int) -> ModelWeights:
    g = data.clients[0]
    return glorot_init(g.num_features, config.hidden, g.num_classes, seed_rng(seed, _INIT))


def _default_workers(n: int) -> int:
    return max(1, min(n, os.cpu_count() or 1))


def run_fedgl(config: ExperimentConfig, data: FederatedData, seed: int, workers: Optional[int] = None,
              on_round: Optional[Callable[[int, GlobalArtifacts, list[RoundUpload]], None]] = None) -> RunResult:
    """Federated training with optional global pseudo labels and pseudo graph.

    Covers ``fedgl``, its two ablations and plain ``federated``. ``on_round``
    is called after each server phase with the round index, the new global
    artifacts and the round's uploads.
    """
    if config.mode not in FEDERATED_MODES:
        raise ValidationError(f"run_fedgl does not handle mode {config.mode!r}")
    _check_evaluable(data)
    start = time.perf_counter()
    use_gpl, use_gpg = config.use_pseudo_labels, config.use_pseudo_graph
    registry = data.registry
    num_classes = data.clients[0].num_classes
    w = _initial_weights(config, data, seed)
    artifacts = GlobalArtifacts.initial(w, registry.union_size, num_classes)
    states = [
        ClientState(
            graph=g,
            weights=w,
            optimizer=AdamState.zeros_like(w, config.lr, config.decay_for(g)),
            rng=seed_rng(seed, _DROPOUT, k),
            client_id=k,
            base_adj=adj,
        )
        for k, (g, adj) in enumerate(zip(data.clients, data.client_adjs))
    ]
    train_rows = data.train_rows()
    # artifacts each client saw last time it participated
    client_view = [artifacts] * data.num_clients
    stopper = _EarlyStopper(config.patience)
    report = MetricsReport()
    n_workers = workers or _default_workers(data.num_clients)

    def client_round(k: int, round_index: int) -> RoundUpload:
        st = states[k]
        view = client_view[k]
        labels_slice = graph_slice = None
        if use_gpl and view.pseudo_label_count:
            labels_slice = project_rows(view.pseudo_labels, st.graph.global_ids, registry.union_ids)
        if use_gpg and view.pseudo_graph_nnz:
            graph_slice = project_submatrix(view.pseudo_graph, st.graph.global_ids, registry.union_ids)
        return local_train(
            st, artifacts.weights, labels_slice, graph_slice,
            epochs=config.local_epochs, alpha=config.alpha, beta=config.beta, dropout=config.dropout,
            embedding_source=config.embedding_source, round_index=round_index,
        )

    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        for t in range(1, config.max_rounds + 1):
            participants = sample_participants(data.num_clients, config.participation_ratio, seed, t)
            for k in participants:
                client_view[k] = artifacts
            uploads = list(pool.map(lambda k: client_round(k, t), participants))
            new_w = aggregate_weights([(u.node_count, u.weights) for u in uploads])
            if use_gpl:
                fused_p = fuse_predictions(
                    [(u.node_count, u.predictions, u.ids) for u in uploads], registry, config.fusion_renormalize
                )
                pseudo_labels = discover_pseudo_labels(fused_p, config.lam, train_rows)
            else:
                pseudo_labels = np.zeros((registry.union_size, num_classes))
            if use_gpg:
                fused_h = fuse_embeddings(
                    [(u.node_count, u.embeddings, u.ids) for u in uploads], registry, config.fusion_renormalize
                )
                pseudo_graph = build_pseudo_graph(fused_h, config.s)
            else:
                pseudo_graph = sp.csr_matrix((registry.union_size, registry.union_size), dtype=np.float64)
            artifacts = GlobalArtifacts(new_w, pseudo_labels, pseudo_graph, t)
            if on_round is not None:
                on_round(t, artifacts, uploads)
            val_acc, test_acc = _global_val_test(new_w, data)
            views = tuple(client_view)
            _, local = evaluate_goals(new_w, data, _complemented_adjs(config, data, views))
            report.rounds.append(RoundRecord(
                t, val_acc, test_acc, float(np.mean(local)),
                artifacts.pseudo_label_count, artifacts.pseudo_graph_nnz,
            ))
            log.debug("round %d val %.4f test %.4f", t, val_acc, test_acc)
            if stopper.update(t, val_acc, (artifacts, views)):
                break
    best, best_views = stopper.best_state
    global_acc, local = evaluate_goals(best.weights, data, _complemented_adjs(config, data, best_views))
    report.global_test_acc = global_acc
    report.per_client_local_test_acc = local
    report.best_round = stopper.best_round
    report.wall_time = time.perf_counter() - start
    return RunResult(report, best.weights, best)


def _train_single(config: ExperimentConfig, graph: Graph, adj, val_mask, weights: ModelWeights, rng,
                  on_round=None, evaluate=None):
    """Train one GCN in rounds of ``local_epochs`` epochs with early stopping on ``val_mask``.

    Returns ``(stopper, records)``; ``evaluate(weights)`` supplies the per-round
    test metrics.
    """
    state = AdamState.zeros_like(weights, config.lr, config.decay_for(graph))
    stopper = _EarlyStopper(config.patience)
    records = []
    w = weights
    for t in range(1, config.max_rounds + 1):
        for _ in range(config.local_epochs):
            w, state, _ = train_epoch(adj, graph.model_input, w, state, graph.labels, graph.train_mask,
                                      dropout_rate=config.dropout, rng=rng)
        if on_round is not None:
            on_round(t, w)
        p = forward(adj, graph.model_input, w).probabilities
        val_acc = accuracy(p, graph.labels, val_mask)
        if evaluate is not None:
            records.append(evaluate(t, val_acc, w))
        if stopper.update(t, val_acc, w):
            break
    return stopper, records


def run_centralized(config: ExperimentConfig, data: FederatedData, seed: int,
                    on_round: Optional[Callable[[int, ModelWeights], None]] = None) -> RunResult:
    """Train one GCN on the union of all client graphs.

    Uses the same initial weights and dropout stream as client 0 of a
    federated run with the same seed.
    """
    if config.mode != "centralized":
        raise ValidationError(f"run_centralized does not handle mode {config.mode!r}")
    _check_evaluable(data)
    start = time.perf_counter()
    w = _initial_weights(config, data, seed)

    def evaluate(t, val_acc, weights):
        _, test_acc = _global_val_test(weights, data)
        _, local = evaluate_goals(weights, data)
        return RoundRecord(t, val_acc, test_acc, float(np.mean(local)))

    stopper, records = _train_single(
        config, data.merged, data.merged_adj, data.merged.val_mask, w,
        seed_rng(seed, _DROPOUT, 0), on_round, evaluate,
    )
    global_acc, local = evaluate_goals(stopper.best_state, data)
    report = MetricsReport(records, global_acc, local, stopper.best_round, time.perf_counter() - start)
    return RunResult(report, stopper.best_state)


def run_local(config: ExperimentConfig, data: FederatedData, seed: int) -> RunResult:
    """Train an independent GCN per client and test each on its own test set.

    Each client early-stops on its own validation nodes. There is no global
    model, so ``global_test_acc`` stays ``None`` and no per-round rows are kept.
    """
    if config.mode != "local":
        raise ValidationError(f"run_local does not handle mode {config.mode!r}")
    _check_evaluable(data)
    for k, g in enumerate(data.clients):
        if not g.val_mask.any():
            raise ValidationError(f"client {k} has an empty validation set")
    start = time.perf_counter()
    w = _initial_weights(config, data, seed)
    local, best_rounds, finals = [], [], []
    for k, (g, adj) in enumerate(zip(data.clients, data.client_adjs)):
        stopper, _ = _train_single(config, g, adj, g.val_mask, w, seed_rng(seed, _DROPOUT, k))
        p = forward(adj, g.model_input, stopper.best_state).probabilities
        local.append(accuracy(p, g.labels, g.test_mask))
        best_rounds.append(stopper.best_round)
        finals.append(stopper.best_state)
    report = MetricsReport([], None, tuple(local), max(best_rounds), time.perf_counter() - start)
    return RunResult(report, None, None, finals)


def run(config: ExperimentConfig, data: FederatedData, seed: int, workers: Optional[int] = None) -> RunResult:
    """Dispatch on ``config.mode``."""
    if config.mode == "centralized":
        return run_centralized(config, data, seed)
    if config.mode == "local":
        return run_local(config, data, seed)
    return run_fedgl(config, data, seed, workers=workers)


def run_seeds(config: ExperimentConfig, master: Graph, seeds: Optional[Sequence[int]] = None,
              workers: Optional[int] = None, data_for_seed=None) -> list[RunResult]:
    """Repeat an experiment over seeds, re-partitioning ``master`` per seed.

    ``data_for_seed(seed)`` may supply a fixed partition instead.
    """
    results = []
    for seed in seeds if seeds is not None else config.seeds:
        data = data_for_seed(seed) if data_for_seed is not None else build_data(config, master, seed)
        results.append(run(config, data, seed, workers))
    return results


def mean_summary(reports: Sequence[MetricsReport]) -> dict[str, Optional[float]]:
    """Seed-averaged global and mean-local test accuracy."""
    glob = [r.global_test_acc for r in reports if r.global_test_acc is not None]
    loc = [r.mean_local_test_acc for r in reports if r.mean_local_test_acc is not None]
    return {
        "runs": len(reports),
        "global_test_acc": float(np.mean(glob)) if glob else None,
        "mean_local_test_acc": float(np.mean(loc)) if loc else None,
    }
