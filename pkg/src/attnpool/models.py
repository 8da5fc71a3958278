"""Full network assembly: conv stack, optional attention pooling stages,
readout, and a linear prediction head producing one scalar per graph.

Checkpoints are JSON: every parameter path maps to its shape and row-major
values, along with the full model configuration; files are written
atomically (temp file + rename).
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import Graph, adjacency_dense
from .layers import ConvLayer, GraphOps, LayerSpec, Linear, MULTISCALE_KINDS, readout
from .pooling import (AttentionOutput, AttentionSpec, GnnAttention,
                      LinearAttention, PoolSpec, pool_stage)

TASKS = ("colors", "triangles")
LABEL_RANGES = {"colors": (0, 10), "triangles": (1, 10)}

# Cache adjacency operators on the graph instance only at training/val
# sizes; large test graphs are visited once and would pin O(N^2) arrays.
_OPS_CACHE_MAX_NODES = 30


def graph_ops(graph: Graph) -> GraphOps:
    if graph.n <= _OPS_CACHE_MAX_NODES:
        if graph._ops is None:
            graph._ops = GraphOps(adjacency_dense(graph))
        return graph._ops
    return GraphOps(adjacency_dense(graph))


@dataclass
class ModelConfig:
    """Architecture, attention, and pooling choices for one model."""

    task: str
    kind: str
    in_dim: int
    hidden: tuple[int, ...] = (64, 64)
    K: int | None = None
    mlp_hidden: int | None = None
    readout: str = "sum"
    pool_mode: str = "none"
    pool_ratio: float | None = None
    pool_threshold: float | None = None
    pool_after: tuple[int, ...] = ()
    attn_kind: str | None = None
    attn_attach: int = 0
    attn_arch: str = "mirror"  # gnn attention: mirror the classifier (K=2) or compact 3x32
    attn_init_scale: float = 1.0
    attn_frozen: bool = False
    tag: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.kind not in ("gcn", "cheby", "gin", "chebygin"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        self.hidden = tuple(int(h) for h in self.hidden)
        self.pool_after = tuple(int(i) for i in self.pool_after)
        if not self.hidden:
            raise ValueError("at least one conv layer is required")
        if self.readout not in ("sum", "max"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.kind in MULTISCALE_KINDS and (self.K is None or self.K < 1):
            raise ValueError(f"{self.kind} requires K >= 1")
        if self.kind == "gin" and self.mlp_hidden is None:
            raise ValueError("gin requires mlp_hidden")
        self.pool_spec()  # validates mode/parameter pairing
        if self.pool_mode == "none":
            if self.attn_kind is not None:
                raise ValueError("attention requires an active pooling mode")
        else:
            if self.attn_kind not in ("linear", "gnn"):
                raise ValueError("active pooling requires attn_kind linear or gnn")
            if self.attn_arch not in ("mirror", "compact"):
                raise ValueError(f"unknown attn_arch {self.attn_arch!r}")
            for i in self.pool_after:
                if not 0 <= i <= len(self.hidden):
                    raise ValueError(f"pool placement {i} outside the conv stack")
            if tuple(sorted(self.pool_after)) != self.pool_after:
                raise ValueError("pool placements must be ascending")
            if self.attn_attach != self.pool_after[0]:
                raise ValueError(
                    "the attention model attaches at the first pooling point")

    def pool_spec(self) -> PoolSpec:
        return PoolSpec(mode=self.pool_mode, ratio=self.pool_ratio,
                        threshold=self.pool_threshold, layers_after=self.pool_after)

    @property
    def label_range(self) -> tuple[int, int]:
        return LABEL_RANGES[self.task]

    @property
    def model_tag(self) -> str:
        if self.tag:
            return self.tag
        return f"{self.kind}-{self.pool_mode}"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["pool_after"] = list(self.pool_after)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown model config keys: {sorted(extra)}")
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        if "pool_after" in d:
            d["pool_after"] = tuple(d["pool_after"])
        return cls(**d)


def decode_prediction(value: float, task: str) -> int:
    """Regression output to class: round to nearest integer, clamp to range."""
    lo, hi = LABEL_RANGES[task]
    return int(min(max(round(value), lo), hi))


def _attention_width(cfg: ModelConfig) -> int:
    attach = cfg.attn_attach
    return cfg.in_dim if attach == 0 else cfg.hidden[attach - 1]


def _stage_width(cfg: ModelConfig, pool_point: int) -> int:
    return cfg.in_dim if pool_point == 0 else cfg.hidden[pool_point - 1]


def _attention_gnn_specs(cfg: ModelConfig, in_dim: int) -> list[LayerSpec]:
    k = 2 if cfg.kind in MULTISCALE_KINDS else None
    if cfg.attn_arch == "mirror":
        widths = list(cfg.hidden)
        mlp_hidden = cfg.mlp_hidden
    else:  # compact: 3 layers, 32 filters
        widths = [32] * 3
        mlp_hidden = 32 if cfg.mlp_hidden is not None else None
    specs = []
    prev = in_dim
    for w in widths[:-1]:
        specs.append(LayerSpec(kind=cfg.kind, in_dim=prev, out_dim=w, K=k,
                               mlp_hidden=mlp_hidden, activation="relu"))
        prev = w
    specs.append(LayerSpec(kind=cfg.kind, in_dim=prev, out_dim=1, K=k,
                           mlp_hidden=mlp_hidden, activation="none"))
    return specs


class Model:
    """Conv stack + pooling stages + readout + scalar regression head."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        cfg = config
        self._pool_spec = cfg.pool_spec() if cfg.pool_mode != "none" else None
        self.convs: list[ConvLayer] = []
        prev = cfg.in_dim
        for width in cfg.hidden:
            spec = LayerSpec(kind=cfg.kind, in_dim=prev, out_dim=width,
                             K=cfg.K if cfg.kind in MULTISCALE_KINDS else None,
                             mlp_hidden=cfg.mlp_hidden if cfg.kind in ("gin", "chebygin") else None,
                             activation="relu")
            self.convs.append(ConvLayer(spec, rng))
            prev = width

        self.attention: list = []
        if cfg.pool_mode != "none":
            for point in cfg.pool_after:
                width = _stage_width(cfg, point)
                if cfg.attn_kind == "linear":
                    self.attention.append(
                        LinearAttention(width, rng, init_scale=cfg.attn_init_scale))
                else:
                    specs = _attention_gnn_specs(cfg, width)
                    self.attention.append(GnnAttention(specs, rng))
        self.head = Linear(cfg.hidden[-1], 1, rng)

    # -- parameter bookkeeping -------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.convs, 1):
            for name, t in layer.params.items():
                out[f"conv{i}.{name}"] = t
        for s, attn in enumerate(self.attention, 1):
            for name, t in attn.params.items():
                out[f"attn{s}.{name}"] = t
        for name, t in self.head.params.items():
            out[f"head.{name}"] = t
        return out

    def trainable_parameters(self) -> dict[str, Tensor]:
        params = self.parameters()
        if self.config.attn_frozen:
            params = {k: v for k, v in params.items() if not k.startswith("attn")}
        return params

    def attention_spec(self) -> AttentionSpec | None:
        cfg = self.config
        if cfg.pool_mode == "none":
            return None
        if cfg.attn_kind == "linear":
            return AttentionSpec(kind="linear", attach_point=cfg.attn_attach,
                                 projection_dim=_attention_width(cfg))
        return AttentionSpec(kind="gnn", attach_point=cfg.attn_attach,
                             gnn_spec=_attention_gnn_specs(cfg, _attention_width(cfg)))

    def set_projection(self, vector) -> None:
        """Overwrite the first-stage linear projection (frozen-attention runs)."""
        if not self.attention or not isinstance(self.attention[0], LinearAttention):
            raise ValueError("model has no linear attention projection")
        v = np.asarray(vector, dtype=np.float64).reshape(-1, 1)
        if v.shape != self.attention[0].p.shape:
            raise ValueError(f"projection must have shape {self.attention[0].p.shape}")
        self.attention[0].p.data = v

    # -- forward passes ---------------------------------------------------
    def forward(self, graph: Graph) -> tuple[Tensor, list[AttentionOutput]]:
        cfg = self.config
        if graph.feature_dim != cfg.in_dim:
            raise ValueError(
                f"model expects feature width {cfg.in_dim}, got {graph.feature_dim}")
        ops = graph_ops(graph)
        x = Tensor(graph.features)
        g = graph
        attn_outputs: list[AttentionOutput] = []
        pool_points = set(cfg.pool_after) if cfg.pool_mode != "none" else set()
        spec = self._pool_spec

        if 0 in pool_points:
            out, g, ops, x = pool_stage(g, ops, x, self.attention[0], spec)
            attn_outputs.append(out)
        for i, layer in enumerate(self.convs, 1):
            x = layer.forward(ops, x)
            if i in pool_points:
                attn = self.attention[len(attn_outputs)]
                out, g, ops, x = pool_stage(g, ops, x, attn, spec)
                attn_outputs.append(out)
        pred = self.head.forward(readout(x, cfg.readout))
        return pred, attn_outputs

    def predict(self, graph: Graph) -> float:
        with ad.no_grad():
            pred, _ = self.forward(graph)
        return pred.item()

    def attention_maps(self, graph: Graph) -> list[AttentionOutput]:
        with ad.no_grad():
            _, outs = self.forward(graph)
        return outs

    # -- persistence ------------------------------------------------------
    def save(self, path: str | os.PathLike) -> None:
        payload = {
            "model_config": self.config.to_dict(),
            "params": {
                name: {"shape": list(t.shape), "values": t.data.ravel().tolist()}
                for name, t in self.parameters().items()
            },
        }
        path = os.fspath(path)
        directory = os.path.dirname(path) or "."
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
                fh.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Model":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        config = ModelConfig.from_dict(payload["model_config"])
        model = cls(config, np.random.default_rng(0))
        params = model.parameters()
        stored = payload["params"]
        if set(stored) != set(params):
            missing = set(params) - set(stored)
            extra = set(stored) - set(params)
            raise ValueError(f"checkpoint parameter mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, entry in stored.items():
            shape = tuple(entry["shape"])
            if params[name].shape != shape:
                raise ValueError(f"checkpoint shape mismatch for {name}: "
                                 f"{shape} vs {params[name].shape}")
            params[name].data = np.asarray(entry["values"], dtype=np.float64).reshape(shape)
        return model
