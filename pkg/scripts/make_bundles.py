"""Convert public citation datasets into fedgl text bundles.

Two input layouts are understood:

* Planetoid binary files (``ind.<name>.x``, ``.y``, ``.tx``, ``.ty``,
  ``.allx``, ``.ally``, ``.graph``, ``.test.index``). The canonical split is
  kept: the first 20 labels per class (``y``) train, the next 500 nodes
  validate, ``test.index`` tests.
* The LINQS Cora release (``cora.content`` and ``cora.cites``). It carries no
  split, so one is drawn once with the fixed-split sizes (20 per class, 500
  validation, 1000 test) from ``--split-seed`` and stored in the bundle.

Usage::

    python scripts/make_bundles.py planetoid DIR citeseer OUT/citeseer
    python scripts/make_bundles.py linqs-cora DIR OUT/cora
"""

import argparse
import pickle
import sys
import warnings
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from fedgl.graph import Graph
from fedgl.io import write_dataset
from fedgl.partition import SplitMode, make_splits


def _load(path):
    # the pickles reference scipy's pre-1.8 module paths
    with open(path, "rb") as handle, warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        return pickle.load(handle, encoding="latin1")


def planetoid(src: Path, name: str) -> Graph:
    parts = {k: _load(src / f"ind.{name}.{k}") for k in ("x", "y", "tx", "ty", "allx", "ally", "graph")}
    test_index = [int(line) for line in (src / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_index)
    # Citeseer has test indices with no features; pad them with zero rows
    full = np.arange(test_sorted.min(), test_sorted.max() + 1)
    tx = sp.lil_matrix((full.size, parts["tx"].shape[1]))
    tx[test_sorted - full.min(), :] = parts["tx"]
    ty = np.zeros((full.size, parts["y"].shape[1]))
    ty[test_sorted - full.min(), :] = parts["ty"]
    features = sp.vstack([parts["allx"], tx]).tolil()
    labels = np.vstack([parts["ally"], ty])
    features[test_index, :] = features[test_sorted, :]
    labels[test_index, :] = labels[test_sorted, :]
    n = features.shape[0]

    rows, cols = [], []
    for u, vs in parts["graph"].items():
        for v in vs:
            if u != v and u < n and v < n:
                rows += [u, v]
                cols += [v, u]
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    adj.data[:] = 1.0

    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[: parts["y"].shape[0]] = True
    val[parts["y"].shape[0]: parts["y"].shape[0] + 500] = True
    test[test_index] = True
    # nodes whose label row is empty stay unlabelled and outside every split
    labelled = labels.sum(axis=1) > 0
    return Graph(adj, features.toarray(), labels, train & labelled, val & labelled, test & labelled)


def linqs_cora(src: Path, split_seed: int) -> Graph:
    ids, rows, classes = [], [], []
    for line in (src / "cora.content").read_text().splitlines():
        tok = line.split()
        if tok:
            ids.append(tok[0])
            rows.append([float(t) for t in tok[1:-1]])
            classes.append(tok[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    names = sorted(set(classes))
    n = len(ids)
    labels = np.zeros((n, len(names)))
    labels[np.arange(n), [names.index(c) for c in classes]] = 1.0
    us, vs = [], []
    for line in (src / "cora.cites").read_text().splitlines():
        tok = line.split()
        if len(tok) == 2 and tok[0] != tok[1]:
            us.append(index[tok[0]])
            vs.append(index[tok[1]])
    adj = sp.csr_matrix((np.ones(2 * len(us)), (us + vs, vs + us)), shape=(n, n))
    adj.sum_duplicates()
    adj.data[:] = 1.0
    empty = np.zeros(n, dtype=bool)
    g = Graph(adj, np.array(rows), labels, empty, empty, empty)
    masks = make_splits(g, SplitMode("random", 20, 500, 1000), np.random.default_rng(split_seed))
    return g.with_masks(*masks)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="kind", required=True)
    p = sub.add_parser("planetoid")
    p.add_argument("src", type=Path)
    p.add_argument("name")
    p.add_argument("out", type=Path)
    p = sub.add_parser("linqs-cora")
    p.add_argument("src", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--split-seed", type=int, default=0)
    args = parser.parse_args(argv)
    g = planetoid(args.src, args.name) if args.kind == "planetoid" else linqs_cora(args.src, args.split_seed)
    write_dataset(g, args.out, sparse_features=True)
    print(f"N={g.num_nodes} undirected edges={g.num_edges} d={g.num_features} C={g.num_classes} "
          f"train={g.train_mask.sum()} val={g.val_mask.sum()} test={g.test_mask.sum()} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
