"""Experiment configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

from .errors import ValidationError
from .partition import PartitionPlan, SplitMode

MODES = ("centralized", "local", "federated", "fedgl", "fedgl_no_gpg", "fedgl_no_gpl")
FEDERATED_MODES = ("federated", "fedgl", "fedgl_no_gpg", "fedgl_no_gpl")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one experiment.

    ``gpl`` / ``gpg`` switch the pseudo labels and the pseudo graph on top of
    what ``mode`` allows; ``mode="federated"`` turns both off regardless.
    ``lam = 1.0`` is accepted as the boundary where no pseudo label can pass.

    The losses are sums over rows. With ``decay_units = "mean"`` the L2
    coefficient is read per labelled training row, as in the usual mean-loss
    GCN setup, so the decay term applied is ``weight_decay`` times the
    party's training-set size; ``"sum"`` applies ``weight_decay`` as given.
    """

    mode: str = "fedgl"
    dataset: str = "toy"
    manifest: Optional[str] = None
    proportions: tuple[float, ...] = (0.3, 0.4, 0.5, 0.5, 0.6, 0.7)
    overlap_ratio: Optional[float] = None
    split: str = "fixed"
    labels_per_class: int = 20
    val_size: int = 500
    test_size: int = 1000
    normalize_features: bool = True
    lam: float = 0.5
    alpha: float = 0.2
    beta: float = 1.0
    s: int = 100
    dropout: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    decay_units: str = "mean"
    hidden: int = 16
    local_epochs: int = 10
    max_rounds: int = 300
    patience: int = 30
    participation_ratio: float = 1.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    fusion_renormalize: bool = False
    embedding_source: str = "output"
    gpl: bool = True
    gpg: bool = True

    def __post_init__(self):
        object.__setattr__(self, "proportions", tuple(float(p) for p in self.proportions))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.lam <= 1.0:
            problems.append(f"lambda must lie in [0, 1], got {self.lam}")
        if self.alpha < 0:
            problems.append(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            problems.append(f"beta must be >= 0, got {self.beta}")
        if self.s < 1:
            problems.append(f"s must be >= 1, got {self.s}")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr <= 0 or self.weight_decay < 0:
            problems.append("lr must be > 0 and weight_decay >= 0")
        if self.hidden < 1 or self.local_epochs < 1 or self.max_rounds < 1:
            problems.append("hidden, local_epochs and max_rounds must be >= 1")
        if not 1 <= self.patience <= self.max_rounds:
            problems.append(f"patience must lie in [1, max_rounds], got {self.patience}")
        if not 0.0 < self.participation_ratio <= 1.0:
            problems.append(f"participation_ratio must lie in (0, 1], got {self.participation_ratio}")
        if not self.seeds:
            problems.append("at least one seed is required")
        if self.embedding_source not in ("output", "hidden"):
            problems.append(f"embedding_source must be 'output' or 'hidden', got {self.embedding_source!r}")
        if self.decay_units not in ("mean", "sum"):
            problems.append(f"decay_units must be 'mean' or 'sum', got {self.decay_units!r}")
        if self.split not in ("fixed", "random"):
            problems.append(f"split must be 'fixed' or 'random', got {self.split!r}")
        try:
            self.plan(0)
        except ValidationError as exc:
            problems.append(str(exc))
        if problems:
            raise ValidationError("invalid configuration: " + "; ".join(problems))

    def plan(self, seed: int) -> PartitionPlan:
        split = SplitMode(self.split, self.labels_per_class, self.val_size, self.test_size)
        return PartitionPlan(self.proportions, self.overlap_ratio, split, seed)

    def decay_for(self, graph) -> float:
        """L2 coefficient for a party training on ``graph``."""
        if self.decay_units == "sum":
            return self.weight_decay
        return self.weight_decay * int(graph.train_mask.sum())

    @property
    def use_pseudo_labels(self) -> bool:
        return self.mode in ("fedgl", "fedgl_no_gpg") and self.gpl and self.lam < 1.0

    @property
    def use_pseudo_graph(self) -> bool:
        return self.mode in ("fedgl", "fedgl_no_gpl") and self.gpg and self.beta > 0

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


# config-file key -> dataclass field
KEY_ALIASES = {"lambda": "lam"}


def field_types() -> dict[str, str]:
    return {f.name: str(f.type) for f in fields(ExperimentConfig)}
