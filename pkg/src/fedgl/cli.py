"""Command-line interface: ``fedgl <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np

from .config import MODES, ExperimentConfig
from .errors import NumericError, ValidationError
from .experiment import load_master, make_data, run_config, write_results
from .gcn import forward
from .io import export_embeddings, read_config, read_weights, write_manifest
from .orchestrator import evaluate_goals
from .partition import PartitionPlan, SplitMode, partition

log = logging.getLogger("fedgl")

GRID_PARAMS = {
    "lambda": ("lam", float),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "s": ("s", int),
    "participation_ratio": ("participation_ratio", float),
    "overlap_ratio": ("overlap_ratio", float),
    "num_clients": ("proportions", int),
}


def parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None


def parse_values(text: str) -> list[Decimal]:
    """``"a,b,c"`` or an inclusive range ``"a..b"`` / ``"a..b:step"``.

    Without a step, integer endpoints step by 1 and others by 0.1.
    """
    try:
        if ".." in text:
            span, _, step_text = text.partition(":")
            lo_text, hi_text = span.split("..", 1)
            lo, hi = Decimal(lo_text), Decimal(hi_text)
            if step_text:
                step = Decimal(step_text)
            elif "." in lo_text or "." in hi_text:
                step = Decimal("0.1")
            else:
                step = Decimal(1)
            if step <= 0 or hi < lo:
                raise ValueError(text)
            out, v = [], lo
            while v <= hi:
                out.append(v)
                v += step
            return out
        return [Decimal(t) for t in text.split(",") if t.strip()]
    except (InvalidOperation, ValueError):
        raise argparse.ArgumentTypeError(f"invalid value list {text!r}") from None


def _load_config(args) -> ExperimentConfig:
    config = read_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "dataset", None):
        changes["dataset"] = args.dataset
    if getattr(args, "manifest", None):
        changes["manifest"] = args.manifest
    if getattr(args, "seed", None):
        changes["seeds"] = args.seed
    return config.with_overrides(**changes) if changes else config


def cmd_partition(args) -> int:
    config = _load_config(args)
    changes = {}
    if args.proportions:
        changes["proportions"] = tuple(float(p) for p in args.proportions.split(","))
    if args.overlap is not None:
        changes["overlap_ratio"] = args.overlap
    config = config.with_overrides(**changes) if changes else config
    master = load_master(config)
    seed = config.seeds[0]
    clients, registry = partition(master, config.plan(seed))
    write_manifest(clients, args.out, master.num_nodes)
    print(f"{len(clients)} clients, {registry.total_multiplicity} client nodes, "
          f"{registry.union_size} distinct -> {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    results = run_config(config, workers=args.workers)
    write_results(config, results, args.out, include_wall_time=args.timing)
    for seed, result in results:
        r = result.report
        g = "-" if r.global_test_acc is None else f"{r.global_test_acc:.4f}"
        print(f"seed {seed}\tglobal_test_acc {g}\tmean_local_test_acc {r.mean_local_test_acc:.4f}"
              f"\tbest_round {r.best_round}")
    return 0


def _data_for(args):
    config = _load_config(args)
    master = load_master(config)
    return config, make_data(config, master, config.seeds[0])


def cmd_evaluate(args) -> int:
    config, data = _data_for(args)
    weights = read_weights(args.weights)
    global_acc, local = evaluate_goals(weights, data)
    print(f"global_test_acc\t{global_acc:.17g}")
    for k, acc in enumerate(local):
        print(f"client_{k}_local_test_acc\t{acc:.17g}")
    return 0


def cmd_export(args) -> int:
    config, data = _data_for(args)
    weights = read_weights(args.weights)
    out = forward(data.merged_adj, data.merged.model_input, weights)
    emb = out.embeddings if args.source == "output" else out.hidden
    rows = np.flatnonzero(data.merged.test_mask) if args.test_only else np.arange(data.merged.num_nodes)
    export_embeddings(emb[rows], data.merged.global_ids[rows], data.merged.labels[rows], args.out)
    print(f"{rows.size} embeddings -> {args.out}")
    return 0


def _cell_config(config: ExperimentConfig, param: str, value: Decimal) -> ExperimentConfig:
    field, kind = GRID_PARAMS[param]
    if param == "num_clients":
        # equal shares of the master graph
        k = int(value)
        if k < 1:
            raise ValidationError("num_clients must be >= 1")
        return config.with_overrides(proportions=tuple([1.0 / k] * k))
    return config.with_overrides(**{field: kind(value)})


def cmd_grid(args) -> int:
    config = _load_config(args)
    values = args.values
    master = load_master(config)
    root = Path(args.out)
    for value in values:
        cell = _cell_config(config, args.param, value)
        results = run_config(cell, workers=args.workers, master=master)
        cell_dir = root / f"{args.param}={value}"
        write_results(cell, results, cell_dir, include_wall_time=args.timing)
        glob = [r.report.global_test_acc for _, r in results if r.report.global_test_acc is not None]
        shown = f"{np.mean(glob):.4f}" if glob else "-"
        print(f"{args.param}={value}\tmean_global_test_acc {shown}")
    print(f"{len(values)} reports -> {root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedgl", description="Federated graph learning with global self-supervision")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-round progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_config=False):
        p.add_argument("--config", required=need_config, help="experiment config file")
        p.add_argument("--dataset", help="dataset bundle directory, or 'toy'")
        p.add_argument("--manifest", help="partition manifest to use instead of sampling")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--seed", type=parse_seeds, help="comma-separated seeds (overrides the config)")

    p = sub.add_parser("partition", help="sample client subgraphs and write a manifest")
    common(p)
    p.add_argument("--proportions", help="comma-separated client proportions")
    p.add_argument("--overlap", type=float, help="target overlap ratio")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="run an experiment and write its reports")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, help="client threads per round")
    p.add_argument("--timing", action="store_true", help="include wall time in the summary files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="global and local test accuracy of saved weights")
    common(p)
    p.add_argument("--weights", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-embeddings", help="write node embeddings for external plotting")
    common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--source", choices=("output", "hidden"), default="output")
    p.add_argument("--test-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("grid", help="sweep one parameter, one report per value")
    common(p)
    p.add_argument("--param", required=True, choices=sorted(GRID_PARAMS))
    p.add_argument("--values", required=True, type=parse_values)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, NumericError) as exc:
        print(f"fedgl: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fedgl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
