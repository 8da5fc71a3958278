"""Graph samples and structural transforms.

A :class:`Graph` is one labeled sample: an undirected simple graph with
per-node features, a scalar label, and (optionally) per-node ground-truth
importance used to train and score attention. Graphs are treated as
immutable; every transform returns a new instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPLIT_NAMES = ("train", "val", "test-orig", "test-large", "test-largec")

# Adjacency-derived operators are cached on the instance only for small
# graphs (training/validation sizes); large test graphs are seen once.
_OPS_CACHE_MAX_NODES = 30


@dataclass
class Graph:
    """One sample: node count, undirected edge list, features, label.

    ``edges`` holds (i, j) pairs with i < j, no duplicates, no self loops.
    ``gt_attention`` is a nonnegative length-n vector that either sums to 1
    or is identically zero (a sample where no node matters).
    """

    n: int
    edges: list[tuple[int, int]]
    features: np.ndarray
    label: int
    gt_attention: np.ndarray | None = None
    _ops: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.n:
            raise ValueError(
                f"features must be {self.n} x C, got {self.features.shape}")
        seen = set()
        for i, j in self.edges:
            if not 0 <= i < j < self.n:
                raise ValueError(f"invalid edge ({i}, {j}) for n={self.n}")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))
        if self.gt_attention is not None:
            gt = np.asarray(self.gt_attention, dtype=np.float64).ravel()
            if gt.shape != (self.n,):
                raise ValueError("gt_attention length must equal node count")
            if (gt < 0).any():
                raise ValueError("gt_attention must be nonnegative")
            total = gt.sum()
            if total != 0.0 and abs(total - 1.0) > 1e-9:
                raise ValueError("gt_attention must sum to 1 or be all-zero")
            self.gt_attention = gt

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class DatasetSplit:
    """A named list of graphs sharing one feature width."""

    name: str
    graphs: list[Graph]
    feature_dim: int

    def __post_init__(self):
        if self.name not in SPLIT_NAMES:
            raise ValueError(f"unknown split name {self.name!r}")
        for g in self.graphs:
            if g.feature_dim != self.feature_dim:
                raise ValueError(
                    f"graph feature width {g.feature_dim} != split width {self.feature_dim}")

    def __len__(self) -> int:
        return len(self.graphs)


def adjacency_dense(g: Graph) -> np.ndarray:
    """Symmetric 0/1 adjacency with zero diagonal."""
    a = np.zeros((g.n, g.n))
    for i, j in g.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def degrees(a: np.ndarray) -> np.ndarray:
    return a.sum(axis=1)


def gcn_norm(a: np.ndarray) -> np.ndarray:
    """Symmetrically normalized adjacency with self loops added.

    Degrees are at least 1 after the self loop, so the scaling is always
    defined; the result stays symmetric with spectral radius <= 1.
    """
    a_hat = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]


def degree_onehot(g: Graph, dmax: int) -> np.ndarray:
    """Per-node one-hot degree features, degrees above dmax clamp to the top bin."""
    if dmax < 0:
        raise ValueError("dmax must be >= 0")
    deg = degrees(adjacency_dense(g)).astype(int)
    out = np.zeros((g.n, dmax + 1))
    out[np.arange(g.n), np.minimum(deg, dmax)] = 1.0
    return out


def _validate_keep(keep: Sequence[int], n: int) -> list[int]:
    idx = list(keep)
    if not idx:
        raise ValueError("keep list must contain at least one node")
    prev = -1
    for i in idx:
        if not 0 <= i < n:
            raise ValueError(f"keep index {i} out of range for n={n}")
        if i <= prev:
            raise ValueError("keep indices must be strictly ascending")
        prev = int(i)
    return [int(i) for i in idx]


def drop_nodes(g: Graph, keep: Sequence[int],
               coeffs: np.ndarray | None = None) -> Graph:
    """Induced subgraph on ``keep`` (ascending indices), order-preserving.

    Surviving edges are exactly those with both endpoints kept. Feature
    rows are gathered, scaled by ``coeffs`` (per original node) when given.
    ``gt_attention`` rows are gathered without renormalization; the field
    is evaluation bookkeeping, not a distribution, after reduction.
    """
    idx = _validate_keep(keep, g.n)
    remap = {old: new for new, old in enumerate(idx)}
    new_edges = [(remap[i], remap[j]) for i, j in g.edges
                 if i in remap and j in remap]
    feats = g.features[idx].copy()
    if coeffs is not None:
        c = np.asarray(coeffs, dtype=np.float64).ravel()
        if c.shape != (g.n,):
            raise ValueError("coeffs length must equal the original node count")
        feats = feats * c[idx, None]
    gt = g.gt_attention[idx] if g.gt_attention is not None else None
    out = Graph(n=len(idx), edges=new_edges, features=feats, label=g.label)
    # bypass the sums-to-one check: restricted ground truth is partial mass
    out.gt_attention = gt
    return out


def remove_single_node(g: Graph, i: int) -> Graph:
    """Drop node ``i``, keeping everything else."""
    if g.n < 2:
        raise ValueError("cannot remove a node from a single-node graph")
    if not 0 <= i < g.n:
        raise ValueError(f"node index {i} out of range for n={g.n}")
    return drop_nodes(g, [j for j in range(g.n) if j != i])


def is_connected(g: Graph) -> bool:
    if g.n == 1:
        return True
    adj: list[list[int]] = [[] for _ in range(g.n)]
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == g.n


def graph_to_record(g: Graph, include_features: bool = True) -> dict:
    """JSON-serializable record for one graph (dataset file line)."""
    rec: dict = {"n": g.n, "edges": [[i, j] for i, j in g.edges], "label": int(g.label)}
    if include_features:
        rec["features"] = [list(row) for row in g.features]
    rec["gt_attn"] = list(g.gt_attention) if g.gt_attention is not None else None
    return rec


def graph_from_record(rec: dict, feature_builder=None) -> Graph:
    """Rebuild a graph from its record.

    ``feature_builder(graph_without_features) -> ndarray`` supplies features
    for records that omit them (features derivable from structure).
    """
    n = int(rec["n"])
    edges = [(int(i), int(j)) for i, j in rec["edges"]]
    gt = rec.get("gt_attn")
    gt_arr = np.asarray(gt, dtype=np.float64) if gt is not None else None
    if "features" in rec:
        feats = np.asarray(rec["features"], dtype=np.float64)
        if feats.size == 0:
            feats = feats.reshape(n, 0)
    elif feature_builder is not None:
        stub = Graph(n=n, edges=edges, features=np.zeros((n, 1)), label=int(rec["label"]))
        feats = feature_builder(stub)
    else:
        raise ValueError("record omits features and no feature builder was given")
    return Graph(n=n, edges=edges, features=feats, label=int(rec["label"]),
                 gt_attention=gt_arr)
