"""Glue between configuration, files and the runners."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .config import ExperimentConfig
from .graph import Graph
from .io import fmt, load_dataset, read_manifest, resolve_dataset, row_normalize, write_config, write_report, \
    write_weights, _write
from .orchestrator import FederatedData, RunResult, build_data, mean_summary, run


def load_master(config: ExperimentConfig) -> Graph:
    master = load_dataset(resolve_dataset(config.dataset))
    if config.normalize_features:
        master = replace(master, features=row_normalize(master.features))
    return master


def make_data(config: ExperimentConfig, master: Graph, seed: int) -> FederatedData:
    """Clients for ``seed``: from the manifest if one is configured, else a fresh partition."""
    if config.manifest:
        return FederatedData.from_clients(read_manifest(config.manifest, master))
    return build_data(config, master, seed)


def run_config(config: ExperimentConfig, seeds: Optional[Sequence[int]] = None,
               workers: Optional[int] = None, master: Optional[Graph] = None) -> list[tuple[int, RunResult]]:
    master = load_master(config) if master is None else master
    out = []
    for seed in seeds if seeds is not None else config.seeds:
        out.append((seed, run(config, make_data(config, master, seed), seed, workers)))
    return out


def write_results(config: ExperimentConfig, results: Sequence[tuple[int, RunResult]], out_dir,
                  include_wall_time: bool = False) -> None:
    """Write the config, one report directory per seed and a seed-mean summary."""
    root = Path(out_dir)
    write_config(config, root / "config.txt")
    for seed, result in results:
        seed_dir = root / f"seed_{seed}"
        write_report(result.report, seed_dir, include_wall_time)
        if result.weights is not None:
            write_weights(result.weights, seed_dir / "weights.txt")
    summary = mean_summary([r.report for _, r in results])
    _write(root / "mean.txt", [
        f"runs\t{summary['runs']}",
        f"global_test_acc\t{fmt(summary['global_test_acc'])}",
        f"mean_local_test_acc\t{fmt(summary['mean_local_test_acc'])}",
    ])
