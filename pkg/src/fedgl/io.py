"""Plain-text file formats.

Every file starts with the line ``fedgl-format v1``. Numbers are written with
17 significant digits so floats survive a round trip bit for bit; parsing is
locale-independent. Blank lines and lines starting with ``#`` are ignored.

Dataset bundle (a directory):

* ``features.txt`` -- ``features dense N d`` followed by ``node v_1 ... v_d``
  rows, or ``features sparse N d`` followed by ``node column value`` triplets.
* ``edges.txt`` -- one undirected edge ``u v`` per line.
* ``labels.txt`` -- ``labels C`` followed by ``node class`` rows; nodes
  without a row are unlabelled.
* ``splits.txt`` (optional) -- ``node train|val|test`` rows.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .config import KEY_ALIASES, ExperimentConfig
from .errors import ParseError, ValidationError
from .gcn import ModelWeights
from .graph import Graph, induced_subgraph
from .orchestrator import MetricsReport, RoundRecord

HEADER = "fedgl-format v1"
SPLIT_NAMES = ("train", "val", "test")
ROUND_COLUMNS = (
    "round", "global_val_acc", "global_test_acc", "mean_local_test_acc", "pseudo_label_count", "pseudo_graph_nnz",
)

__all__ = [
    "HEADER",
    "fmt",
    "load_dataset",
    "write_dataset",
    "write_manifest",
    "read_manifest",
    "read_config",
    "write_config",
    "parse_config",
    "write_report",
    "read_report",
    "export_embeddings",
    "read_embeddings",
    "write_weights",
    "read_weights",
    "row_normalize",
    "toy_dataset_path",
]


def fmt(x) -> str:
    """Locale-independent float text with 17 significant digits."""
    if x is None:
        return ""
    return format(float(x), ".17g")


def _lines(path):
    """Yield ``(line_number, fields)`` for the data lines of a format-v1 file."""
    path = Path(path)
    try:
        handle = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open: {exc.strerror}", path) from exc
    with handle:
        first = handle.readline()
        if first.strip() != HEADER:
            raise ParseError(f"missing header {HEADER!r}", path, 1)
        for number, line in enumerate(handle, start=2):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            yield number, text.split()


def _int(token, path, line):
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"expected an integer, got {token!r}", path, line) from None


def _float(token, path, line):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"expected a number, got {token!r}", path, line) from None
    return value


def _write(path, lines: Sequence[str]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as handle:
            handle.write(HEADER + "\n")
            for line in lines:
                handle.write(line + "\n")
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc.strerror}") from exc


# --------------------------------------------------------------------------
# datasets


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Scale each feature row to sum 1; all-zero rows are left as they are."""
    sums = features.sum(axis=1, keepdims=True)
    out = features.copy()
    nz = sums[:, 0] != 0
    out[nz] = features[nz] / sums[nz]
    return out


def _read_features(path):
    rows = _lines(path)
    try:
        number, head = next(rows)
    except StopIteration:
        raise ParseError("empty features file", path) from None
    if len(head) != 4 or head[0] != "features" or head[1] not in ("dense", "sparse"):
        raise ParseError("expected 'features dense|sparse N d'", path, number)
    kind = head[1]
    n, d = _int(head[2], path, number), _int(head[3], path, number)
    x = np.zeros((n, d))
    seen = np.zeros(n, dtype=bool)
    for number, tok in rows:
        node = _int(tok[0], path, number)
        if not 0 <= node < n:
            raise ParseError(f"node {node} outside 0..{n - 1}", path, number)
        if kind == "dense":
            if len(tok) != d + 1:
                raise ParseError(f"expected {d + 1} fields, got {len(tok)}", path, number)
            if seen[node]:
                raise ParseError(f"duplicate feature row for node {node}", path, number)
            seen[node] = True
            x[node] = [_float(t, path, number) for t in tok[1:]]
        else:
            if len(tok) != 3:
                raise ParseError("expected 'node column value'", path, number)
            col = _int(tok[1], path, number)
            if not 0 <= col < d:
                raise ParseError(f"column {col} outside 0..{d - 1}", path, number)
            x[node, col] = _float(tok[2], path, number)
    return x


def _read_edges(path, n):
    us, vs = [], []
    for number, tok in _lines(path):
        if len(tok) != 2:
            raise ParseError("expected 'u v'", path, number)
        u, v = _int(tok[0], path, number), _int(tok[1], path, number)
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError(f"edge ({u}, {v}) has an endpoint outside 0..{n - 1}", path, number)
        us.append(u)
        vs.append(v)
    r = np.array(us + vs, dtype=np.int64)
    c = np.array(vs + us, dtype=np.int64)
    adj = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n, n))
    adj.sum_duplicates()
    adj.data[:] = 1.0
    return adj


def _read_labels(path, n):
    rows = _lines(path)
    try:
        number, head = next(rows)
    except StopIteration:
        raise ParseError("empty labels file", path) from None
    if len(head) != 2 or head[0] != "labels":
        raise ParseError("expected 'labels C'", path, number)
    c = _int(head[1], path, number)
    y = np.zeros((n, c))
    seen = np.zeros(n, dtype=bool)
    for number, tok in rows:
        if len(tok) != 2:
            raise ParseError("expected 'node class'", path, number)
        node, cls = _int(tok[0], path, number), _int(tok[1], path, number)
        if not 0 <= node < n:
            raise ParseError(f"node {node} outside 0..{n - 1}", path, number)
        if not 0 <= cls < c:
            raise ParseError(f"class {cls} outside 0..{c - 1}", path, number)
        if seen[node]:
            raise ParseError(f"duplicate label row for node {node}", path, number)
        seen[node] = True
        y[node, cls] = 1.0
    return y


def _read_splits(path, n):
    masks = np.zeros((3, n), dtype=bool)
    for number, tok in _lines(path):
        if len(tok) != 2 or tok[1] not in SPLIT_NAMES:
            raise ParseError("expected 'node train|val|test'", path, number)
        node = _int(tok[0], path, number)
        if not 0 <= node < n:
            raise ParseError(f"node {node} outside 0..{n - 1}", path, number)
        if masks[:, node].any():
            raise ParseError(f"node {node} listed twice", path, number)
        masks[SPLIT_NAMES.index(tok[1]), node] = True
    return masks


def load_dataset(path) -> Graph:
    """Read a dataset bundle directory into a :class:`Graph`.

    Edges are symmetrized and deduplicated; the canonical split is applied
    when ``splits.txt`` exists.
    """
    root = Path(path)
    if not root.is_dir():
        raise ParseError("dataset bundle directory not found", root)
    x = _read_features(root / "features.txt")
    n = x.shape[0]
    adj = _read_edges(root / "edges.txt", n)
    y = _read_labels(root / "labels.txt", n)
    split_file = root / "splits.txt"
    masks = _read_splits(split_file, n) if split_file.exists() else np.zeros((3, n), dtype=bool)
    return Graph(adj, x, y, masks[0], masks[1], masks[2], np.arange(n))


def write_dataset(graph: Graph, path, sparse_features: bool = False) -> None:
    """Write ``graph`` as a bundle (global IDs must be ``0..N-1`` in order)."""
    if not np.array_equal(graph.global_ids, np.arange(graph.num_nodes)):
        raise ValidationError("bundles need contiguous node IDs 0..N-1")
    root = Path(path)
    n, d = graph.features.shape
    if sparse_features:
        r, c = np.nonzero(graph.features)
        feats = [f"features sparse {n} {d}"] + [
            f"{i} {j} {fmt(graph.features[i, j])}" for i, j in zip(r, c)
        ]
    else:
        feats = [f"features dense {n} {d}"] + [
            f"{i} " + " ".join(fmt(v) for v in row) for i, row in enumerate(graph.features)
        ]
    _write(root / "features.txt", feats)
    upper = sp.triu(graph.adjacency, k=0).tocoo()
    order = np.lexsort((upper.col, upper.row))
    _write(root / "edges.txt", [f"{upper.row[i]} {upper.col[i]}" for i in order])
    classes = graph.label_indices()
    _write(root / "labels.txt", [f"labels {graph.num_classes}"] + [
        f"{i} {c}" for i, c in enumerate(classes) if c >= 0
    ])
    masks = (graph.train_mask, graph.val_mask, graph.test_mask)
    if any(m.any() for m in masks):
        split_lines = []
        for i in range(n):
            for name, m in zip(SPLIT_NAMES, masks):
                if m[i]:
                    split_lines.append(f"{i} {name}")
        _write(root / "splits.txt", split_lines)


def toy_dataset_path() -> Path:
    return Path(__file__).parent / "data" / "toy"


def resolve_dataset(name_or_path: str) -> Path:
    """``"toy"`` maps to the bundled toy dataset; anything else is a path."""
    if name_or_path == "toy":
        return toy_dataset_path()
    return Path(name_or_path)


# --------------------------------------------------------------------------
# partition manifests


def write_manifest(clients: Sequence[Graph], path, master_nodes: int) -> None:
    """One ``client node split`` row per client node (``split`` may be ``none``)."""
    lines = [f"master_nodes {master_nodes}", f"clients {len(clients)}"]
    for k, g in enumerate(clients):
        for i, gid in enumerate(g.global_ids):
            split = "none"
            for name, m in zip(SPLIT_NAMES, (g.train_mask, g.val_mask, g.test_mask)):
                if m[i]:
                    split = name
            lines.append(f"{k} {gid} {split}")
    _write(path, lines)


def read_manifest(path, master: Graph) -> list[Graph]:
    """Rebuild client graphs from a manifest and the master graph it was cut from."""
    rows = _lines(path)
    header = {}
    for _ in range(2):
        try:
            number, tok = next(rows)
        except StopIteration:
            raise ParseError("truncated manifest header", path) from None
        if len(tok) != 2 or tok[0] not in ("master_nodes", "clients"):
            raise ParseError("expected 'master_nodes N' and 'clients K'", path, number)
        header[tok[0]] = _int(tok[1], path, number)
    if header.get("master_nodes") != master.num_nodes:
        raise ValidationError(
            f"manifest was cut from {header.get('master_nodes')} nodes, master has {master.num_nodes}"
        )
    k_total = header["clients"]
    members = [[] for _ in range(k_total)]
    splits = [[] for _ in range(k_total)]
    for number, tok in rows:
        if len(tok) != 3 or tok[2] not in SPLIT_NAMES + ("none",):
            raise ParseError("expected 'client node train|val|test|none'", path, number)
        k, node = _int(tok[0], path, number), _int(tok[1], path, number)
        if not 0 <= k < k_total:
            raise ParseError(f"client {k} outside 0..{k_total - 1}", path, number)
        if not 0 <= node < master.num_nodes:
            raise ParseError(f"node {node} outside the master graph", path, number)
        members[k].append(node)
        splits[k].append(tok[2])
    position = {gid: i for i, gid in enumerate(master.global_ids.tolist())}
    clients = []
    for k in range(k_total):
        rows_k = np.array([position[g] for g in members[k]], dtype=np.int64)
        sub = induced_subgraph(master, rows_k)
        masks = [np.array([s == name for s in splits[k]], dtype=bool) for name in SPLIT_NAMES]
        clients.append(sub.with_masks(*masks))
    return clients


# --------------------------------------------------------------------------
# experiment configuration


def _parse_value(kind: str, text: str, path, line):
    kind = kind.replace(" ", "")
    try:
        if kind.startswith("Optional["):
            if text.lower() in ("none", ""):
                return None
            kind = kind[len("Optional["):-1]
        if kind == "bool":
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
        if kind.startswith("tuple[float"):
            return tuple(float(t) for t in text.split(",") if t.strip())
        if kind.startswith("tuple[int"):
            return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ParseError(f"cannot read {text!r} as {kind}", path, line) from None
    raise ParseError(f"unsupported field type {kind}", path, line)


def _file_keys() -> dict[str, str]:
    """Config-file key -> dataclass field."""
    inverse = {v: k for k, v in KEY_ALIASES.items()}
    return {inverse.get(f.name, f.name): f.name for f in fields(ExperimentConfig)}


def parse_config(pairs: Sequence[tuple[str, str, int]], path=None) -> ExperimentConfig:
    """Build a config from ``(key, value, line)`` triples; unknown keys are errors."""
    types = {f.name: str(f.type) for f in fields(ExperimentConfig)}
    keys = _file_keys()
    values = {}
    for key, text, line in pairs:
        if key not in keys:
            raise ParseError(f"unknown configuration key {key!r}", path, line)
        name = keys[key]
        if name in values:
            raise ParseError(f"duplicate configuration key {key!r}", path, line)
        values[name] = _parse_value(types[name], text, path, line)
    return ExperimentConfig(**values)


def read_config(path) -> ExperimentConfig:
    """Read a ``key = value`` configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open: {exc.strerror}", path) from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ParseError(f"missing header {HEADER!r}", path, 1)
    pairs = []
    for number, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", path, number)
        key, value = (part.strip() for part in line.split("=", 1))
        pairs.append((key, value, number))
    return parse_config(pairs, path)


def _config_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return fmt(value)
    if isinstance(value, tuple):
        return ",".join(_config_value(v) for v in value)
    return str(value)


def write_config(config: ExperimentConfig, path) -> None:
    _write(path, [f"{key} = {_config_value(getattr(config, name))}" for key, name in _file_keys().items()])


# --------------------------------------------------------------------------
# reports


def write_report(report: MetricsReport, path, include_wall_time: bool = False) -> None:
    """Write ``rounds.tsv`` and ``summary.txt`` into directory ``path``.

    Wall time is left out unless asked for, so that repeated runs produce
    identical files.
    """
    root = Path(path)
    rows = ["\t".join(ROUND_COLUMNS)]
    for r in report.rounds:
        rows.append("\t".join([
            str(r.round), fmt(r.global_val_acc), fmt(r.global_test_acc), fmt(r.mean_local_test_acc),
            str(r.pseudo_label_count), str(r.pseudo_graph_nnz),
        ]))
    _write(root / "rounds.tsv", rows)
    summary = [
        f"global_test_acc\t{fmt(report.global_test_acc)}",
        "per_client_local_test_acc\t" + ",".join(fmt(a) for a in report.per_client_local_test_acc),
        f"best_round\t{report.best_round}",
        f"rounds_executed\t{len(report.rounds)}",
    ]
    if include_wall_time and report.wall_time is not None:
        summary.append(f"wall_time\t{fmt(report.wall_time)}")
    _write(root / "summary.txt", summary)


def _opt_float(text, path, line):
    return None if text == "" else _float(text, path, line)


def read_report(path) -> MetricsReport:
    root = Path(path)
    rounds_path = root / "rounds.tsv"
    rounds = []
    with rounds_path.open("r", encoding="utf-8") as handle:
        if handle.readline().strip() != HEADER:
            raise ParseError(f"missing header {HEADER!r}", rounds_path, 1)
        if tuple(handle.readline().rstrip("\n").split("\t")) != ROUND_COLUMNS:
            raise ParseError("unexpected column header", rounds_path, 2)
        for number, line in enumerate(handle, start=3):
            tok = line.rstrip("\n").split("\t")
            if len(tok) != len(ROUND_COLUMNS):
                raise ParseError(f"expected {len(ROUND_COLUMNS)} columns", rounds_path, number)
            rounds.append(RoundRecord(
                _int(tok[0], rounds_path, number),
                _opt_float(tok[1], rounds_path, number),
                _opt_float(tok[2], rounds_path, number),
                _opt_float(tok[3], rounds_path, number),
                _int(tok[4], rounds_path, number),
                _int(tok[5], rounds_path, number),
            ))
    summary_path = root / "summary.txt"
    values = {}
    with summary_path.open("r", encoding="utf-8") as handle:
        if handle.readline().strip() != HEADER:
            raise ParseError(f"missing header {HEADER!r}", summary_path, 1)
        for number, line in enumerate(handle, start=2):
            key, _, value = line.rstrip("\n").partition("\t")
            values[key] = (value, number)
    for key in ("global_test_acc", "best_round"):
        if key not in values:
            raise ParseError(f"summary lacks {key!r}", summary_path)
    text, number = values["global_test_acc"]
    gta = _opt_float(text, summary_path, number)
    text, number = values.get("per_client_local_test_acc", ("", 0))
    local = tuple(_float(t, summary_path, number) for t in text.split(",") if t)
    text, number = values["best_round"]
    best = _int(text, summary_path, number)
    wall = None
    if "wall_time" in values:
        text, number = values["wall_time"]
        wall = _float(text, summary_path, number)
    return MetricsReport(rounds, gta, local, best, wall)


# --------------------------------------------------------------------------
# embeddings and weights


def export_embeddings(embeddings: np.ndarray, ids, labels, path) -> None:
    """Tab-separated ``global_id  class  e_1 .. e_c`` rows for external plotting.

    ``labels`` may be one-hot rows or class indices; unlabelled nodes get -1.
    """
    h = np.asarray(embeddings, dtype=np.float64)
    ids = np.asarray(ids, dtype=np.int64)
    lab = np.asarray(labels)
    if lab.ndim == 2:
        cls = lab.argmax(axis=1)
        cls[lab.sum(axis=1) == 0] = -1
    else:
        cls = lab.astype(np.int64)
    if h.ndim != 2 or h.shape[0] != ids.size or cls.size != ids.size:
        raise ValidationError("embeddings, ids and labels must have the same number of rows")
    _write(path, [
        "\t".join([str(i), str(c)] + [fmt(v) for v in row]) for i, c, row in zip(ids, cls, h)
    ])


def read_embeddings(path):
    """Inverse of :func:`export_embeddings`: ``(embeddings, ids, classes)``."""
    ids, cls, rows = [], [], []
    for number, tok in _lines(path):
        ids.append(_int(tok[0], path, number))
        cls.append(_int(tok[1], path, number))
        rows.append([_float(t, path, number) for t in tok[2:]])
    width = len(rows[0]) if rows else 0
    if any(len(r) != width for r in rows):
        raise ParseError("rows differ in embedding width", path)
    return np.array(rows, dtype=np.float64).reshape(len(rows), width), np.array(ids, dtype=np.int64), np.array(cls)


def write_weights(weights: ModelWeights, path) -> None:
    lines = []
    for name, w in (("w0", weights.w0), ("w1", weights.w1)):
        lines.append(f"{name} {w.shape[0]} {w.shape[1]}")
        lines.extend(" ".join(fmt(v) for v in row) for row in w)
    _write(path, lines)


def read_weights(path) -> ModelWeights:
    mats = {}
    rows = _lines(path)
    for _ in range(2):
        try:
            number, tok = next(rows)
        except StopIteration:
            raise ParseError("truncated weights file", path) from None
        if len(tok) != 3 or tok[0] not in ("w0", "w1"):
            raise ParseError("expected 'w0|w1 rows cols'", path, number)
        r, c = _int(tok[1], path, number), _int(tok[2], path, number)
        m = np.zeros((r, c))
        for i in range(r):
            try:
                number, vals = next(rows)
            except StopIteration:
                raise ParseError(f"{tok[0]} ends early", path) from None
            if len(vals) != c:
                raise ParseError(f"expected {c} values", path, number)
            m[i] = [_float(v, path, number) for v in vals]
        mats[tok[0]] = m
    if set(mats) != {"w0", "w1"}:
        raise ParseError("weights file needs both w0 and w1", path)
    return ModelWeights(mats["w0"], mats["w1"])
