"""Federated graph learning with global pseudo labels and a global pseudo graph."""

from .client import ClientState, RoundUpload, complement_adjacency, local_train, prepare_ssl_targets
from .config import ExperimentConfig
from .errors import NumericError, ParseError, ValidationError
from .gcn import AdamState, ForwardOutput, ModelWeights, accuracy, adam_step, forward, glorot_init, gradients, loss
from .graph import GlobalRegistry, Graph, merge_graphs, normalize_adjacency, project_rows, scatter_rows
from .orchestrator import (
    FederatedData,
    MetricsReport,
    RoundRecord,
    RunResult,
    evaluate_goals,
    run_centralized,
    run_fedgl,
    run_local,
)
from .partition import PartitionPlan, SplitMode, make_splits, partition, sample_client
from .server import (
    GlobalArtifacts,
    aggregate_weights,
    build_pseudo_graph,
    discover_pseudo_labels,
    fuse_embeddings,
    fuse_predictions,
)

__version__ = "0.1.0"
