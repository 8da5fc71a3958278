"""Attention over nodes and the two pooling mechanisms built on it.

Per-node coefficients are a softmax over pre-activations produced either
by a learned projection vector or by a small nested GNN. Pooling keeps a
subset of nodes: the top ``ceil(r * N)`` by coefficient (fixed-ratio), or
every node whose coefficient clears a threshold (size-adaptive). Kept
nodes carry their attention-weighted features into the reduced graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import Graph, adjacency_dense, drop_nodes
from .layers import ConvLayer, GraphOps, LayerSpec

POOL_MODES = ("none", "topk", "threshold")


@dataclass
class AttentionSpec:
    """How node coefficients are produced and where they attach.

    ``attach_point`` is the layer whose output feeds the attention model
    (0 = raw input features). Exactly one of ``projection_dim`` (linear
    kind) and ``gnn_spec`` (nested-GNN kind) must be set.
    """

    kind: str
    attach_point: int = 0
    projection_dim: int | None = None
    gnn_spec: list[LayerSpec] | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "gnn"):
            raise ValueError(f"unknown attention kind {self.kind!r}")
        if self.kind == "linear" and (self.projection_dim is None or self.gnn_spec is not None):
            raise ValueError("linear attention takes projection_dim only")
        if self.kind == "gnn" and (self.gnn_spec is None or self.projection_dim is not None):
            raise ValueError("gnn attention takes gnn_spec only")


@dataclass
class PoolSpec:
    """Pooling mode plus its single hyperparameter and placement."""

    mode: str
    ratio: float | None = None
    threshold: float | None = None
    layers_after: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in POOL_MODES:
            raise ValueError(f"unknown pooling mode {self.mode!r}")
        if self.mode == "topk":
            if self.ratio is None or not 0 < self.ratio <= 1:
                raise ValueError("topk pooling needs ratio in (0, 1]")
            if self.threshold is not None:
                raise ValueError("topk pooling does not take a threshold")
        elif self.mode == "threshold":
            if self.threshold is None or not 0 <= self.threshold < 1:
                raise ValueError("threshold pooling needs a threshold in [0, 1)")
            if self.ratio is not None:
                raise ValueError("threshold pooling does not take a ratio")
        else:
            if self.ratio is not None or self.threshold is not None or self.layers_after:
                raise ValueError("mode 'none' takes no pooling parameters")
        if self.mode != "none" and not self.layers_after:
            raise ValueError("pooling needs at least one placement index")


@dataclass
class AttentionOutput:
    """Attention state at one pooling stage.

    ``alpha`` stays on the gradient tape (it feeds the attention loss);
    ``alpha_pre`` and ``kept`` are plain values. Coefficients always refer
    to the pre-pooling node set of the stage. ``alpha_pre`` is None when
    pooling was applied to externally supplied coefficients.
    """

    alpha_pre: np.ndarray | None
    alpha: Tensor
    kept: list[int]
    Z: Tensor

    @property
    def alpha_values(self) -> np.ndarray:
        return self.alpha.data.ravel()


class LinearAttention:
    """Single projection vector; pre-activations are X @ p (no bias)."""

    def __init__(self, dim: int, rng: np.random.Generator,
                 init_scale: float = 1.0):
        self.p = Tensor(rng.normal(0.0, init_scale, (dim, 1)), requires_grad=True)
        self.params = {"p": self.p}

    def forward(self, ops: GraphOps, x: Tensor) -> Tensor:
        return ad.matmul(x, self.p)


class GnnAttention:
    """Nested GNN mapping N x C node features to N x 1 pre-activations."""

    def __init__(self, specs: list[LayerSpec], rng: np.random.Generator):
        if specs[-1].out_dim != 1:
            raise ValueError("attention GNN must end with out_dim 1")
        self.layers = [ConvLayer(s, rng) for s in specs]
        self.params = {f"conv{i + 1}.{name}": t
                       for i, layer in enumerate(self.layers)
                       for name, t in layer.params.items()}

    def forward(self, ops: GraphOps, x: Tensor) -> Tensor:
        h = x
        for layer in self.layers:
            h = layer.forward(ops, h)
        return h


def attend(x: Tensor, alpha: Tensor) -> Tensor:
    """Row i of the output is alpha_i times row i of x."""
    if alpha.shape != (x.rows, 1):
        raise ValueError(
            f"alpha must be {x.rows} x 1 to weight {x.shape} features, got {alpha.shape}")
    return ad.mul(alpha, x)


def topk_keep(alpha_values: np.ndarray, r: float) -> list[int]:
    """Indices of the ceil(r * N) largest coefficients, ties to lower index."""
    if not 0 < r <= 1:
        raise ValueError("ratio must be in (0, 1]")
    n = alpha_values.shape[0]
    k = math.ceil(r * n)
    order = np.lexsort((np.arange(n), -alpha_values))
    return sorted(int(i) for i in order[:k])


def threshold_keep(alpha_values: np.ndarray, alpha_tilde: float) -> list[int]:
    """Indices with coefficient strictly above the threshold.

    When nothing clears the threshold the single argmax node (lowest index
    on ties) is kept so the reduced graph stays non-empty.
    """
    if not 0 <= alpha_tilde < 1:
        raise ValueError("threshold must be in [0, 1)")
    kept = np.flatnonzero(alpha_values > alpha_tilde)
    if kept.size == 0:
        return [int(np.argmax(alpha_values))]
    return [int(i) for i in kept]


def _pool(graph: Graph, x: Tensor, alpha: Tensor, kept: list[int],
          alpha_pre: np.ndarray | None) -> tuple[AttentionOutput, Graph]:
    z_full = attend(x, alpha)
    z = z_full if len(kept) == graph.n else ad.select_rows(z_full, kept)
    reduced = drop_nodes(graph, kept, coeffs=alpha.data.ravel())
    return AttentionOutput(alpha_pre=alpha_pre, alpha=alpha, kept=kept, Z=z), reduced


def topk_pool(graph: Graph, x: Tensor, alpha: Tensor, r: float,
              alpha_pre: np.ndarray | None = None) -> tuple[AttentionOutput, Graph]:
    kept = topk_keep(alpha.data.ravel(), r)
    return _pool(graph, x, alpha, kept, alpha_pre)


def threshold_pool(graph: Graph, x: Tensor, alpha: Tensor, alpha_tilde: float,
                   alpha_pre: np.ndarray | None = None) -> tuple[AttentionOutput, Graph]:
    kept = threshold_keep(alpha.data.ravel(), alpha_tilde)
    return _pool(graph, x, alpha, kept, alpha_pre)


def pool_stage(graph: Graph, ops: GraphOps, x: Tensor, attention,
               spec: PoolSpec) -> tuple[AttentionOutput, Graph, GraphOps, Tensor]:
    """Run one attention + pooling stage and return the reduced state."""
    alpha_pre = attention.forward(ops, x)
    alpha = ad.softmax_vector(alpha_pre)
    if spec.mode == "topk":
        out, reduced = topk_pool(graph, x, alpha, spec.ratio,
                                 alpha_pre=alpha_pre.data.ravel())
    elif spec.mode == "threshold":
        out, reduced = threshold_pool(graph, x, alpha, spec.threshold,
                                      alpha_pre=alpha_pre.data.ravel())
    else:
        raise ValueError("pool_stage requires an active pooling mode")
    return out, reduced, GraphOps(adjacency_dense(reduced)), out.Z
