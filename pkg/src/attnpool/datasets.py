"""Deterministic synthetic benchmarks.

Colors: count the nodes of one designated color ("green", channel 2 when
counting from 1). Node features are one-hot colors padded with one extra
"transparency" channel; the large-with-extra-colors test split draws
non-green colors from binary mixtures over the non-green channels, so a
model trained on pure colors meets unseen feature combinations.

Triangles: count the triangles (3-cliques); per-node ground-truth
importance is the node's share of triangle memberships. Node features are
one-hot degrees, capped at the largest degree seen in the training split.

Both tasks use Erdos-Renyi edges. Every split regenerates byte-identically
from (config, seed); dataset files are JSON Lines with one metadata line
followed by one graph per line, checksummed.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .graphs import (DatasetSplit, Graph, adjacency_dense, degree_onehot,
                     graph_from_record, graph_to_record, is_connected)
from .rng import substream

FORMAT_VERSION = 1
GREEN_CHANNEL = 1  # 0-based; "channel 2" counting from 1


@dataclass
class ColorsConfig:
    dim: int = 3
    n_train: int = 500
    n_val: int = 2500
    n_test: int = 2500  # per test subset
    node_range_small: tuple[int, int] = (4, 25)
    node_range_large: tuple[int, int] = (26, 200)
    max_green: int = 10
    edge_prob: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2 (needs a green and a non-green color)")
        for lo, hi in (self.node_range_small, self.node_range_large):
            if not 1 <= lo <= hi:
                raise ValueError(f"invalid node range ({lo}, {hi})")
        if not 0 < self.edge_prob < 1:
            raise ValueError("edge_prob must be in (0, 1)")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split sizes must be nonnegative")

    @property
    def feature_dim(self) -> int:
        return self.dim + 1


@dataclass
class TrianglesConfig:
    n_train: int = 30000
    n_val: int = 5000
    n_test: int = 5000  # per test subset
    node_range_small: tuple[int, int] = (4, 25)
    node_range_large: tuple[int, int] = (26, 100)
    max_label: int = 10
    degree_cap: int | None = None  # None: largest degree in the training split
    budget_factor: int = 400
    seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.node_range_small, self.node_range_large):
            if not 1 <= lo <= hi:
                raise ValueError(f"invalid node range ({lo}, {hi})")
        if self.max_label < 1:
            raise ValueError("max_label must be >= 1")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("split sizes must be nonnegative")


@dataclass
class TriangleStats:
    """Total triangle count and each node's membership count."""

    total: int
    per_node: np.ndarray


def count_triangles(a: np.ndarray) -> TriangleStats:
    """Exact triangle counts from the cubed adjacency matrix.

    ``total = trace(A^3) / 6`` and ``per_node_i = (A^3)_ii / 2``; a
    non-integer intermediate means the input was not a simple undirected
    adjacency and is reported as such.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    if (a != a.T).any() or np.diag(a).any() or not np.isin(a, (0, 1)).all():
        raise ValueError("adjacency must be symmetric 0/1 with zero diagonal")
    ai = a.astype(np.int64)
    diag = np.diagonal(ai @ ai @ ai)
    trace = int(diag.sum())
    if trace % 6 != 0 or (diag % 2).any():
        raise ArithmeticError("non-integer triangle count; invalid adjacency")
    return TriangleStats(total=trace // 6, per_node=diag // 2)


def _er_edges(rng: np.random.Generator, n: int, p: float) -> list[tuple[int, int]]:
    if n < 2:
        return []
    iu, ju = np.triu_indices(n, k=1)
    mask = rng.random(iu.shape[0]) < p
    return list(zip(iu[mask].tolist(), ju[mask].tolist()))


# ---------------------------------------------------------------------------
# Colors

def _colors_palette_train(dim: int) -> list[np.ndarray]:
    """The dim pure one-hot colors, padded with a zero transparency channel."""
    palette = []
    for c in range(dim):
        v = np.zeros(dim + 1)
        v[c] = 1.0
        palette.append(v)
    return palette


def _colors_nongreen_channels(dim: int) -> list[int]:
    return [c for c in range(dim + 1) if c != GREEN_CHANNEL]


def _colors_palette_largec(dim: int) -> list[np.ndarray]:
    """Green plus every binary mixture over the non-green channels."""
    channels = _colors_nongreen_channels(dim)
    green = np.zeros(dim + 1)
    green[GREEN_CHANNEL] = 1.0
    palette = [green]
    for bits in range(2 ** len(channels)):
        v = np.zeros(dim + 1)
        for k, c in enumerate(channels):
            if bits >> k & 1:
                v[c] = 1.0
        palette.append(v)
    return palette


def _gen_colors_split(cfg: ColorsConfig, name: str, count: int,
                      node_range: tuple[int, int], mixed_colors: bool,
                      rng: np.random.Generator) -> DatasetSplit:
    lo, hi = node_range
    graphs = []
    if mixed_colors:
        nongreen = _colors_palette_largec(cfg.dim)[1:]
    else:
        nongreen = [v for i, v in enumerate(_colors_palette_train(cfg.dim))
                    if i != GREEN_CHANNEL]
    for _ in range(count):
        n = int(rng.integers(lo, hi + 1))
        n_green = int(rng.integers(0, min(cfg.max_green, n) + 1))
        green_idx = set(rng.choice(n, size=n_green, replace=False).tolist())
        feats = np.zeros((n, cfg.feature_dim))
        for i in range(n):
            if i in green_idx:
                feats[i, GREEN_CHANNEL] = 1.0
            else:
                feats[i] = nongreen[int(rng.integers(0, len(nongreen)))]
        gt = np.zeros(n)
        if n_green:
            gt[sorted(green_idx)] = 1.0 / n_green
        graphs.append(Graph(n=n, edges=_er_edges(rng, n, cfg.edge_prob),
                            features=feats, label=n_green, gt_attention=gt))
    return DatasetSplit(name=name, graphs=graphs, feature_dim=cfg.feature_dim)


def gen_colors(cfg: ColorsConfig) -> tuple[dict[str, DatasetSplit], dict]:
    """Generate all five Colors splits plus dataset metadata."""
    plan = [
        ("train", cfg.n_train, cfg.node_range_small, False),
        ("val", cfg.n_val, cfg.node_range_small, False),
        ("test-orig", cfg.n_test, cfg.node_range_small, False),
        ("test-large", cfg.n_test, cfg.node_range_large, False),
        ("test-largec", cfg.n_test, cfg.node_range_large, True),
    ]
    splits = {}
    for name, count, node_range, mixed in plan:
        rng = substream(cfg.seed, "colors", name)
        splits[name] = _gen_colors_split(cfg, name, count, node_range, mixed, rng)
    palette = [v.tolist() for v in _colors_palette_largec(cfg.dim)] if cfg.dim == 3 \
        else {"kind": "binary-nongreen", "channels": _colors_nongreen_channels(cfg.dim)}
    meta = {
        "task": "colors",
        "config": asdict(cfg),
        "seed": cfg.seed,
        "palette": palette,
        "degree_cap": None,
        "features_derivable": False,
        "connectivity_fraction": {
            name: round(sum(is_connected(g) for g in s.graphs) / max(len(s), 1), 4)
            for name, s in splits.items()
        },
        "class_counts": {
            name: _class_counts(s) for name, s in splits.items()
        },
    }
    return splits, meta


def _class_counts(split: DatasetSplit) -> dict[str, int]:
    counts: dict[str, int] = {}
    for g in split.graphs:
        counts[str(g.label)] = counts.get(str(g.label), 0) + 1
    return dict(sorted(counts.items(), key=lambda kv: int(kv[0])))


# ---------------------------------------------------------------------------
# Triangles

def _triangle_quotas(count: int, max_label: int) -> dict[int, int]:
    base, rem = divmod(count, max_label)
    return {label: base + (1 if label <= rem else 0)
            for label in range(1, max_label + 1)}


def _viable_n(target: int, lo: int, hi: int) -> int:
    """Smallest node count in range whose complete graph has >= target triangles."""
    for n in range(lo, hi + 1):
        if math.comb(n, 3) >= target:
            return n
    raise ValueError(f"no node count in [{lo}, {hi}] admits {target} triangles")


def _gen_triangles_structures(cfg: TrianglesConfig, count: int,
                              node_range: tuple[int, int],
                              rng: np.random.Generator) -> list[dict]:
    """Rejection-sample graph structures until every label quota is filled."""
    lo, hi = node_range
    needed = _triangle_quotas(count, cfg.max_label)
    unviable = {t: c for t, c in needed.items()
                if c > 0 and math.comb(hi, 3) < t}
    if unviable:
        raise RuntimeError(
            f"sampling budget exhausted with unfilled strata {unviable}: "
            f"no graph with <= {hi} nodes reaches these triangle counts")
    accepted: list[dict] = []
    budget = cfg.budget_factor * max(count, 1)
    attempts = 0
    while sum(needed.values()) > 0:
        if attempts >= budget:
            missing = {k: v for k, v in needed.items() if v > 0}
            raise RuntimeError(
                f"sampling budget exhausted with unfilled strata {missing}")
        attempts += 1
        open_labels = [t for t, c in needed.items() if c > 0]
        weights = np.array([needed[t] for t in open_labels], dtype=np.float64)
        target = int(rng.choice(open_labels, p=weights / weights.sum()))
        n_min = max(lo, _viable_n(target, lo, hi))
        n = int(rng.integers(n_min, hi + 1))
        # aim the expected triangle count C(n,3) p^3 near the target label
        p = (target / math.comb(n, 3)) ** (1.0 / 3.0) * float(rng.uniform(0.75, 1.3))
        p = float(np.clip(p, 0.02, 0.9))
        edges = _er_edges(rng, n, p)
        stats = count_triangles(_adjacency_from_edges(n, edges))
        label = stats.total
        if 1 <= label <= cfg.max_label and needed.get(label, 0) > 0:
            needed[label] -= 1
            accepted.append({"n": n, "edges": edges, "label": label,
                             "per_node": stats.per_node})
    order = rng.permutation(len(accepted))
    return [accepted[i] for i in order]


def _adjacency_from_edges(n: int, edges: list[tuple[int, int]]) -> np.ndarray:
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def _max_degree(structures: list[dict]) -> int:
    worst = 0
    for s in structures:
        if s["edges"]:
            deg = np.zeros(s["n"], dtype=int)
            for i, j in s["edges"]:
                deg[i] += 1
                deg[j] += 1
            worst = max(worst, int(deg.max()))
    return worst


def _structures_to_split(structures: list[dict], name: str,
                         degree_cap: int) -> DatasetSplit:
    graphs = []
    for s in structures:
        total = int(s["per_node"].sum()) // 3
        gt = s["per_node"] / (3.0 * total)
        stub = Graph(n=s["n"], edges=s["edges"],
                     features=np.zeros((s["n"], 1)), label=s["label"])
        feats = degree_onehot(stub, degree_cap)
        graphs.append(Graph(n=s["n"], edges=s["edges"], features=feats,
                            label=s["label"], gt_attention=gt))
    return DatasetSplit(name=name, graphs=graphs, feature_dim=degree_cap + 1)


def gen_triangles(cfg: TrianglesConfig) -> tuple[dict[str, DatasetSplit], dict]:
    """Generate the four Triangles splits plus dataset metadata."""
    plan = [
        ("train", cfg.n_train, cfg.node_range_small),
        ("val", cfg.n_val, cfg.node_range_small),
        ("test-orig", cfg.n_test, cfg.node_range_small),
        ("test-large", cfg.n_test, cfg.node_range_large),
    ]
    structures = {}
    for name, count, node_range in plan:
        rng = substream(cfg.seed, "triangles", name)
        structures[name] = _gen_triangles_structures(cfg, count, node_range, rng)
    degree_cap = cfg.degree_cap if cfg.degree_cap is not None \
        else _max_degree(structures["train"])
    splits = {name: _structures_to_split(structs, name, degree_cap)
              for name, structs in structures.items()}
    meta = {
        "task": "triangles",
        "config": asdict(cfg),
        "seed": cfg.seed,
        "palette": None,
        "degree_cap": degree_cap,
        "features_derivable": True,
        "stratified": True,
        "class_counts": {name: _class_counts(s) for name, s in splits.items()},
    }
    return splits, meta


# ---------------------------------------------------------------------------
# Persistence: JSON Lines, one metadata line then one graph per line.

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_split(split: DatasetSplit, path: str | os.PathLike, meta: dict) -> None:
    """Write one split; metadata first, then graphs, with a content checksum."""
    include_features = not meta.get("features_derivable", False)
    lines = [_dumps(graph_to_record(g, include_features=include_features))
             for g in split.graphs]
    digest = hashlib.sha256()
    for line in lines:
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    header = dict(meta)
    header.update({
        "format_version": FORMAT_VERSION,
        "split": split.name,
        "feature_dim": split.feature_dim,
        "count": len(split.graphs),
        "checksum": digest.hexdigest(),
    })
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(header) + "\n")
        for line in lines:
            fh.write(line + "\n")


def load_split(path: str | os.PathLike) -> tuple[DatasetSplit, dict]:
    """Read one split back; rejects malformed lines and checksum mismatches."""
    with open(path, encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise ValueError(f"{path}: empty dataset file")
    try:
        header = json.loads(raw[0])
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: line 1: malformed metadata ({e})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version "
                         f"{header.get('format_version')!r}")
    digest = hashlib.sha256()
    records = []
    for lineno, line in enumerate(raw[1:], start=2):
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: line {lineno}: malformed graph record ({e})") from None
    if digest.hexdigest() != header["checksum"]:
        raise ValueError(f"{path}: checksum mismatch; file corrupted or edited")
    if len(records) != header["count"]:
        raise ValueError(f"{path}: expected {header['count']} graphs, found {len(records)}")

    builder = None
    if header.get("features_derivable"):
        cap = header["degree_cap"]
        builder = lambda stub: degree_onehot(stub, cap)
    graphs = []
    for lineno, rec in enumerate(records, start=2):
        try:
            g = graph_from_record(rec, feature_builder=builder)
        except (KeyError, ValueError, TypeError) as e:
            raise ValueError(f"{path}: line {lineno}: invalid graph ({e})") from None
        if header.get("task") == "triangles":
            total = count_triangles(adjacency_dense(g)).total
            if total != g.label:
                raise ValueError(f"{path}: line {lineno}: stored label {g.label} "
                                 f"!= recomputed triangle count {total}")
        graphs.append(g)
    split = DatasetSplit(name=header["split"], graphs=graphs,
                         feature_dim=header["feature_dim"])
    return split, header


def save_dataset(splits: dict[str, DatasetSplit], meta: dict,
                 out_dir: str | os.PathLike) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for name, split in splits.items():
        save_split(split, os.path.join(out_dir, f"{name}.jsonl"), meta)


def load_dataset(data_dir: str | os.PathLike,
                 names: tuple[str, ...] | None = None
                 ) -> tuple[dict[str, DatasetSplit], dict]:
    """Load every split file present (or the requested subset)."""
    splits = {}
    meta: dict = {}
    candidates = names or ("train", "val", "test-orig", "test-large", "test-largec")
    for name in candidates:
        path = os.path.join(data_dir, f"{name}.jsonl")
        if os.path.exists(path):
            splits[name], meta = load_split(path)
        elif names is not None:
            raise FileNotFoundError(f"missing split file {path}")
    if not splits:
        raise FileNotFoundError(f"no dataset split files under {data_dir}")
    return splits, meta
