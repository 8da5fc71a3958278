"""Training machinery: regression and attention losses, Adam with step
decay, the epoch loop for unsupervised / supervised / weakly-supervised
attention, and occlusion-derived weak attention labels.

A "batch" is processed as a loop over graphs with gradient accumulation
(each graph's loss scaled by 1/batch) before one optimizer step; graphs
change size mid-network under pooling, so there is nothing to vectorize
across samples at this scale.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import DatasetSplit, Graph, remove_single_node
from .models import Model, ModelConfig
from .rng import substream

SUPERVISION_MODES = ("none", "gt", "weak")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    weight_decay: float = 1e-4
    epochs: int = 100
    lr_decay_epochs: tuple[int, ...] = (90,)
    lr_decay_factor: float = 0.1
    beta: float = 100.0
    supervision: str = "none"
    seed: int = 0

    def __post_init__(self):
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        if self.supervision not in SUPERVISION_MODES:
            raise ValueError(f"unknown supervision mode {self.supervision!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if list(self.lr_decay_epochs) != sorted(set(self.lr_decay_epochs)):
            raise ValueError("lr decay epochs must be strictly increasing")
        if self.lr_decay_epochs and self.lr_decay_epochs[-1] >= self.epochs:
            raise ValueError("lr decay epochs must come before the final epoch")


def mse_loss(pred: Tensor, label: float) -> Tensor:
    d = ad.sub(pred, Tensor([[float(label)]]))
    return ad.mul(d, d)


def kl_attention_loss(alpha_gt: np.ndarray, alpha: Tensor, beta: float,
                      n: int) -> Tensor:
    """Divergence of predicted coefficients from a target distribution.

    Computes (beta / n) * sum_i gt_i * log(gt_i / alpha_i) with the
    conventions 0 * log(0 / x) = 0 and alpha clamped at 1e-15 inside the
    log. An all-zero target contributes exactly zero (term skipped).
    """
    gt = np.asarray(alpha_gt, dtype=np.float64).ravel()
    if gt.shape[0] != n or alpha.shape != (n, 1):
        raise ValueError(f"target and alpha must both have length {n}")
    if (gt < 0).any():
        raise ValueError("attention targets must be nonnegative")
    support = gt > 0
    if not support.any():
        return Tensor([[0.0]])
    const = float((gt[support] * np.log(gt[support])).sum())
    weighted = ad.mul(Tensor(gt.reshape(-1, 1)),
                      ad.log(ad.clamp_min(alpha, 1e-15)))
    return ad.scale(ad.sub(Tensor([[const]]), ad.tsum(weighted)), beta / n)


class Adam:
    """First/second-moment optimizer with bias correction.

    L2 regularization is applied by adding weight_decay * param to the
    gradient before the moment updates; a missing gradient counts as zero.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 weight_decay: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def restrict_target(target: np.ndarray, kept: list[int]) -> np.ndarray:
    """Target for the next pooling stage: surviving mass, renormalized.

    When no target mass survives the stage the restricted target is
    all-zero and later divergence terms are skipped.
    """
    t = np.asarray(target, dtype=np.float64).ravel()[kept]
    s = t.sum()
    return t / s if s > 0 else np.zeros_like(t)


def graph_loss(model: Model, graph: Graph, cfg: TrainConfig,
               weak_target: np.ndarray | None = None) -> Tensor:
    """Total loss for one graph: regression plus per-stage attention terms."""
    pred, attn_outs = model.forward(graph)
    loss = mse_loss(pred, graph.label)
    if cfg.supervision == "none" or cfg.beta == 0 or not attn_outs:
        return loss
    if cfg.supervision == "gt":
        target = graph.gt_attention
        if target is None:
            raise ValueError("supervision='gt' needs ground-truth attention")
    else:
        if weak_target is None:
            raise ValueError("supervision='weak' needs a weak label per graph")
        target = weak_target
    target = np.asarray(target, dtype=np.float64).ravel()
    for out in attn_outs:
        if target.sum() > 0:
            loss = ad.add(loss, kl_attention_loss(target, out.alpha,
                                                  cfg.beta, len(target)))
        target = restrict_target(target, out.kept)
    return loss


def train(model_cfg: ModelConfig, train_split: DatasetSplit,
          val_split: DatasetSplit, cfg: TrainConfig,
          weak_labels: list[np.ndarray] | None = None,
          initial_model: Model | None = None) -> tuple[Model, list[dict]]:
    """Train a model and return it with its per-epoch history.

    ``initial_model`` substitutes for the seeded fresh initialization
    (e.g. a planted, frozen attention projection); it must match
    ``model_cfg``.
    """
    from .evaluation import accuracy  # local import: evaluation depends on this module

    if cfg.supervision == "gt":
        if any(g.gt_attention is None for g in train_split.graphs):
            raise ValueError("supervision='gt' requires gt attention on every training graph")
    if cfg.supervision == "weak":
        if weak_labels is None or len(weak_labels) != len(train_split.graphs):
            raise ValueError("supervision='weak' requires one weak label per training graph")

    if initial_model is not None and initial_model.config != model_cfg:
        raise ValueError("initial_model does not match the model config")
    model = initial_model if initial_model is not None \
        else Model(model_cfg, substream(cfg.seed, "init"))
    optimizer = Adam(model.trainable_parameters(), lr=cfg.lr,
                     weight_decay=cfg.weight_decay)
    order_rng = substream(cfg.seed, "data-order")
    decay_after = set(cfg.lr_decay_epochs)
    graphs = train_split.graphs
    history: list[dict] = []

    for epoch in range(1, cfg.epochs + 1):
        if (epoch - 1) in decay_after:
            optimizer.lr *= cfg.lr_decay_factor
        order = order_rng.permutation(len(graphs))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            optimizer.zero_grad()
            batch_loss = 0.0
            for idx in batch:
                weak = weak_labels[idx] if cfg.supervision == "weak" else None
                loss = graph_loss(model, graphs[idx], cfg, weak_target=weak)
                ad.backward(ad.scale(loss, 1.0 / len(batch)))
                batch_loss += loss.item()
            batch_loss /= len(batch)
            if not math.isfinite(batch_loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}")
            optimizer.step()
            epoch_loss += batch_loss * len(batch)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / max(len(order), 1),
            "val_acc": accuracy(model, val_split),
            "lr": optimizer.lr,
        })
    return model, history


# ---------------------------------------------------------------------------
# Occlusion: per-node importance from single-node removals.

def occlusion_attention(model_b: Model, graph: Graph) -> np.ndarray:
    """Normalized absolute prediction change when each node is removed.

    The probing model must pool globally (no intermediate attention or
    pooling), so removing a node is the only structural intervention.
    Returns a probability vector; uniform when the model is insensitive
    to every node.
    """
    if model_b.config.pool_mode != "none":
        raise ValueError("occlusion probing requires a global-pooling model")
    if graph.n == 1:
        return np.array([1.0])
    y = model_b.predict(graph)
    diffs = np.empty(graph.n)
    for i in range(graph.n):
        diffs[i] = abs(model_b.predict(remove_single_node(graph, i)) - y)
    denom = diffs.sum()
    if denom == 0:
        return np.full(graph.n, 1.0 / graph.n)
    return diffs / denom


def compute_weak_labels(model_b: Model, split: DatasetSplit) -> list[np.ndarray]:
    return [occlusion_attention(model_b, g) for g in split.graphs]


def save_weak_labels(labels: list[np.ndarray], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, alpha in enumerate(labels):
            rec = {"index": i, "alpha_ws": [float(a) for a in alpha]}
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def load_weak_labels(path: str | os.PathLike) -> list[np.ndarray]:
    labels: dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                rec = json.loads(line)
                labels[int(rec["index"])] = np.asarray(rec["alpha_ws"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}: line {lineno}: malformed weak label ({e})") from None
    return [labels[i] for i in range(len(labels))]


def weaksup_pipeline(model_cfg_a: ModelConfig, model_cfg_b: ModelConfig,
                     train_split: DatasetSplit, val_split: DatasetSplit,
                     cfg_a: TrainConfig, cfg_b: TrainConfig
                     ) -> dict:
    """Train the probing model, derive weak labels, train the pooled model.

    The probing model (B) shares the conv architecture of the pooled model
    (A) but has no attention or pooling; A then trains against B's
    occlusion labels in place of ground truth.
    """
    if model_cfg_b.pool_mode != "none":
        raise ValueError("the probing model must not have pooling")
    if model_cfg_a.pool_mode == "none":
        raise ValueError("the pooled model needs an active pooling mode")
    shared = ("task", "kind", "hidden", "K", "mlp_hidden", "readout", "in_dim")
    for name in shared:
        if getattr(model_cfg_a, name) != getattr(model_cfg_b, name):
            raise ValueError(f"models must share the conv architecture; {name} differs")
    if cfg_a.supervision != "weak":
        raise ValueError("the pooled model must train with supervision='weak'")
    if cfg_b.supervision != "none":
        raise ValueError("the probing model must train with supervision='none'")

    model_b, history_b = train(model_cfg_b, train_split, val_split, cfg_b)
    weak_labels = compute_weak_labels(model_b, train_split)
    model_a, history_a = train(model_cfg_a, train_split, val_split, cfg_a,
                               weak_labels=weak_labels)
    return {"model_a": model_a, "model_b": model_b,
            "weak_labels": weak_labels,
            "history_a": history_a, "history_b": history_b}


# ---------------------------------------------------------------------------
# Run directory layout shared by the CLI and the pipeline helpers.

def write_history_csv(history: list[dict], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_acc", "lr"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]),
                             repr(row["val_acc"]), repr(row["lr"])])


def write_run_dir(out_dir: str | os.PathLike, model: Model,
                  history: list[dict], model_cfg: ModelConfig,
                  train_cfg: TrainConfig,
                  weak_labels: list[np.ndarray] | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    resolved = {
        "model": model_cfg.to_dict(),
        "train": {**asdict(train_cfg),
                  "lr_decay_epochs": list(train_cfg.lr_decay_epochs),
                  "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}},
        "multiscale_propagation": "raw-adjacency-powers",
    }
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    model.save(os.path.join(out_dir, "checkpoint.json"))
    write_history_csv(history, os.path.join(out_dir, "history.csv"))
    if weak_labels is not None:
        save_weak_labels(weak_labels, os.path.join(out_dir, "weak_labels.jsonl"))
