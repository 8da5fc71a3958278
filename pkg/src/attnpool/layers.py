"""Graph convolution layers: GCN, multiscale mean (Cheby), sum + MLP (GIN),
and the multiscale-sum + MLP combination of the two (ChebyGIN).

A layer consumes the operators of the current graph (adjacency and its
normalizations) plus node features and produces new node features; a
readout collapses node features to one graph-level row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

KINDS = ("gcn", "cheby", "gin", "chebygin")
MULTISCALE_KINDS = ("cheby", "chebygin")


@dataclass
class LayerSpec:
    """Shape and behavior of one convolution layer.

    ``K`` is the scale count for multiscale kinds (1 = features only).
    ``mlp_hidden`` is the hidden width of the post-aggregation MLP and is
    present exactly for the kinds that use one (gin always; chebygin when
    configured with a 2-layer MLP rather than a single linear map).
    """

    kind: str
    in_dim: int
    out_dim: int
    K: int | None = None
    mlp_hidden: int | None = None
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in MULTISCALE_KINDS:
            if self.K is None or self.K < 1:
                raise ValueError(f"{self.kind} requires K >= 1")
        elif self.K is not None:
            raise ValueError(f"{self.kind} does not take K")
        if self.kind == "gin" and self.mlp_hidden is None:
            raise ValueError("gin requires mlp_hidden")
        if self.kind in ("gcn", "cheby") and self.mlp_hidden is not None:
            raise ValueError(f"{self.kind} does not take mlp_hidden")
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


class GraphOps:
    """Adjacency-derived constant operators for one graph, built lazily."""

    def __init__(self, adjacency: np.ndarray):
        self.adjacency = adjacency
        self.n = adjacency.shape[0]
        self.degrees = adjacency.sum(axis=1)
        self._raw: Tensor | None = None
        self._self_loop: Tensor | None = None
        self._normalized: Tensor | None = None
        self._mean_prop: Tensor | None = None

    def raw(self) -> Tensor:
        if self._raw is None:
            self._raw = Tensor(self.adjacency)
        return self._raw

    def with_self_loops(self) -> Tensor:
        if self._self_loop is None:
            self._self_loop = Tensor(self.adjacency + np.eye(self.n))
        return self._self_loop

    def normalized(self) -> Tensor:
        if self._normalized is None:
            from .graphs import gcn_norm
            self._normalized = Tensor(gcn_norm(self.adjacency))
        return self._normalized

    def mean_propagation(self) -> Tensor:
        """Row-normalized adjacency; rows of isolated nodes are zero."""
        if self._mean_prop is None:
            inv = np.where(self.degrees > 0, 1.0 / np.maximum(self.degrees, 1.0), 0.0)
            self._mean_prop = Tensor(inv[:, None] * self.adjacency)
        return self._mean_prop


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
    """Uniform(-a, a) weight with a = sqrt(6 / (fan_in + fan_out)), zero bias."""
    a = math.sqrt(6.0 / (fan_in + fan_out))
    w = Tensor(rng.uniform(-a, a, (fan_in, fan_out)), requires_grad=True)
    b = Tensor(np.zeros((1, fan_out)), requires_grad=True)
    return w, b


def multiscale_stack(ops: GraphOps, x: Tensor, K: int, aggregator: str) -> Tensor:
    """Stack K propagation scales along the feature axis.

    Scale 1 is ``x`` itself; scale k applies the propagation operator to
    scale k-1. ``mean`` averages over one-hop neighbors (isolated nodes
    yield zeros); ``sum`` uses the raw adjacency, i.e. mean aggregation
    rescaled by node degree.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if aggregator not in ("mean", "sum"):
        raise ValueError(f"unknown aggregator {aggregator!r}")
    if K == 1:
        return x
    prop = ops.mean_propagation() if aggregator == "mean" else ops.raw()
    return ad.propagation_stack(prop, x, K)


def _activate(x: Tensor, activation: str) -> Tensor:
    return ad.relu(x) if activation == "relu" else x


class ConvLayer:
    """One graph convolution with its own parameters."""

    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        k = spec.K or 1
        agg_width = spec.in_dim * (k if spec.kind in MULTISCALE_KINDS else 1)
        if spec.kind == "gin" or (spec.kind == "chebygin" and spec.mlp_hidden is not None):
            w1, b1 = init_linear(rng, agg_width, spec.mlp_hidden)
            w2, b2 = init_linear(rng, spec.mlp_hidden, spec.out_dim)
            self.params = {"mlp1.weight": w1, "mlp1.bias": b1,
                           "mlp2.weight": w2, "mlp2.bias": b2}
        else:
            w, b = init_linear(rng, agg_width, spec.out_dim)
            self.params = {"weight": w, "bias": b}

    def _mlp(self, h: Tensor) -> Tensor:
        if "weight" in self.params:
            return ad.add(ad.matmul(h, self.params["weight"]), self.params["bias"])
        h = ad.relu(ad.add(ad.matmul(h, self.params["mlp1.weight"]),
                           self.params["mlp1.bias"]))
        return ad.add(ad.matmul(h, self.params["mlp2.weight"]),
                      self.params["mlp2.bias"])

    def forward(self, ops: GraphOps, x: Tensor) -> Tensor:
        spec = self.spec
        if x.cols != spec.in_dim:
            raise ValueError(f"layer expects width {spec.in_dim}, got {x.cols}")
        if spec.kind == "gcn":
            h = ad.matmul(ops.normalized(), x)
        elif spec.kind == "gin":
            h = ad.matmul(ops.with_self_loops(), x)
        elif spec.kind == "cheby":
            h = multiscale_stack(ops, x, spec.K, "mean")
        else:  # chebygin
            h = multiscale_stack(ops, x, spec.K, "sum")
        return _activate(self._mlp(h), spec.activation)


class Linear:
    """Plain dense map, used for the prediction head."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.params: dict[str, Tensor] = {}
        w, b = init_linear(rng, in_dim, out_dim)
        self.params = {"weight": w, "bias": b}

    def forward(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.params["weight"]), self.params["bias"])


def readout(x: Tensor, kind: str) -> Tensor:
    """Permutation-invariant graph-level reduction: column sum or max."""
    if kind == "sum":
        return ad.sum_over_rows(x)
    if kind == "max":
        return ad.max_over_rows(x)
    raise ValueError(f"unknown readout kind {kind!r}")
