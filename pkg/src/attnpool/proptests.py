"""Executable verification suites for the whole toolkit.

Three suites bind the library's contracts to independent checks:

* gradients: every differentiable op and layer against central finite
  differences (1e-4 relative; 1e-3 for composed paths),
* oracles: closed-form or brute-force recomputation of triangle counts,
  ranking AUC, pooling kept-sets, and induced subgraphs,
* invariants: permutation symmetry, normalization, determinism replays,
  round trips, and algebraic identities.

Runs standalone (``python -m attnpool.proptests``) and emits a
machine-readable JSON summary for CI.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import evaluation as ev
from .autodiff import Tensor
from .datasets import ColorsConfig, count_triangles, gen_colors, save_dataset
from .graphs import (DatasetSplit, Graph, adjacency_dense, degree_onehot,
                     drop_nodes, gcn_norm)
from .layers import ConvLayer, GraphOps, LayerSpec, readout
from .models import Model, ModelConfig
from .pooling import (LinearAttention, GnnAttention, threshold_keep,
                      threshold_pool, topk_keep)
from .training import TrainConfig, graph_loss, kl_attention_loss, mse_loss, train

REL_TOL = 1e-4
REL_TOL_COMPOSED = 1e-3
ABS_TOL = 1e-7


# ---------------------------------------------------------------------------
# Finite-difference oracle

def finite_difference(f: Callable[[], float], param: Tensor,
                      h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` w.r.t. ``param.data``."""
    grad = np.zeros_like(param.data)
    it = np.nditer(param.data, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        orig = param.data[i]
        param.data[i] = orig + h
        up = f()
        param.data[i] = orig - h
        down = f()
        param.data[i] = orig
        grad[i] = (up - down) / (2 * h)
        it.iternext()
    return grad


def gradients_match(analytic: np.ndarray, numeric: np.ndarray,
                    rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL) -> bool:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return bool(((diff <= abs_tol) | (diff <= rel_tol * scale)).all())


def _away_from_kinks(rng: np.random.Generator, shape, margin: float = 1e-3) -> np.ndarray:
    """Uniform [-2, 2] samples kept away from 0 so relu-style kinks cannot
    flip inside the finite-difference stencil."""
    x = rng.uniform(-2, 2, shape)
    while (np.abs(x) < margin).any():
        mask = np.abs(x) < margin
        x[mask] = rng.uniform(-2, 2, int(mask.sum()))
    return x


def _random_ops(rng: np.random.Generator, n: int, p: float = 0.4) -> GraphOps:
    a = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                a[i, j] = a[j, i] = 1.0
    return GraphOps(a)


def _layer_forward_numpy(spec: LayerSpec, params: dict, ops: GraphOps,
                         x: np.ndarray) -> tuple[np.ndarray, float]:
    """Independent numpy re-derivation of a conv layer.

    Returns the output and the smallest |relu input| encountered, so a
    caller can reject instances whose kinks sit inside an FD stencil.
    """
    a = ops.adjacency
    n = a.shape[0]
    if spec.kind == "gcn":
        h = gcn_norm(a) @ x
    elif spec.kind == "gin":
        h = (a + np.eye(n)) @ x
    else:
        deg = a.sum(axis=1)
        inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1.0), 0.0)
        prop = inv[:, None] * a if spec.kind == "cheby" else a
        blocks = [x]
        for _ in range(spec.K - 1):
            blocks.append(prop @ blocks[-1])
        h = np.concatenate(blocks, axis=1)
    margin = np.inf
    if "weight" in params:
        z = h @ params["weight"].data + params["bias"].data
    else:
        z1 = h @ params["mlp1.weight"].data + params["mlp1.bias"].data
        margin = min(margin, float(np.abs(z1).min()))
        z = np.maximum(z1, 0) @ params["mlp2.weight"].data + params["mlp2.bias"].data
    if spec.activation == "relu":
        margin = min(margin, float(np.abs(z).min()))
        z = np.maximum(z, 0)
    return z, margin


class _Suite:
    def __init__(self, name: str):
        self.name = name
        self.checks: list[dict] = []
        self._t0 = time.perf_counter()

    def check(self, name: str, fn: Callable[[], bool]) -> None:
        try:
            passed = bool(fn())
            detail = ""
        except Exception as e:  # a crashed check is a failed check
            passed = False
            detail = f"{type(e).__name__}: {e}"
        self.checks.append({"name": name, "passed": passed, "detail": detail})

    def result(self) -> dict:
        return {
            "suite": self.name,
            "passed": all(c["passed"] for c in self.checks),
            "seconds": round(time.perf_counter() - self._t0, 3),
            "checks": self.checks,
        }


# ---------------------------------------------------------------------------
# Gradient suite

def _one_sided_slopes(f: Callable[[], float], param: Tensor, idx,
                      h: float) -> tuple[float, float]:
    f0 = f()
    orig = param.data[idx]
    param.data[idx] = orig + h
    up = f()
    param.data[idx] = orig - h
    down = f()
    param.data[idx] = orig
    return (up - f0) / h, (f0 - down) / h


def _check_param_grads(build_loss: Callable[[], Tensor],
                       params: list[Tensor], rel_tol: float) -> bool:
    """Analytic gradients against central differences for every parameter.

    Mismatching entries get a smoothness probe: when the one-sided
    difference quotients disagree, a relu kink or pooling-membership jump
    sits inside the stencil (zero-initialized biases put dead nodes
    exactly on the kink), the point is not differentiable and the entry
    is excluded. Entries that are smooth yet still disagree fail.
    """
    loss = build_loss()
    ad.backward(loss)
    grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
             for p in params]

    def f() -> float:
        with ad.no_grad():
            return build_loss().item()

    for analytic, p in zip(grads, params):
        numeric = finite_difference(f, p)
        diff = np.abs(analytic - numeric)
        scale = np.maximum(np.abs(analytic), np.abs(numeric))
        bad = (diff > ABS_TOL) & (diff > rel_tol * scale)
        for idx in map(tuple, np.argwhere(bad)):
            d_plus, d_minus = _one_sided_slopes(f, p, idx, h=1e-5)
            if abs(d_plus - d_minus) > 1e-3 * max(abs(d_plus), abs(d_minus), 1.0):
                continue  # not differentiable here
            return False
    return True


def run_gradient_suite(seed: int = 0, cases_per_op: int = 20) -> dict:
    suite = _Suite("gradients")
    rng = np.random.default_rng(seed)

    def many(fn: Callable[[int], bool]) -> Callable[[], bool]:
        return lambda: all(fn(i) for i in range(cases_per_op))

    def matmul_case(_):
        a = Tensor(rng.uniform(-2, 2, (4, 5)), requires_grad=True)
        b = Tensor(rng.uniform(-2, 2, (5, 3)), requires_grad=True)
        w = rng.uniform(-1, 1, (4, 3))
        return _check_param_grads(
            lambda: ad.tsum(ad.mul(ad.matmul(a, b), Tensor(w))), [a, b], REL_TOL)
    suite.check("matmul", many(matmul_case))

    def elementwise_case(_):
        x = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        y = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        row = Tensor(rng.uniform(-2, 2, (1, 4)), requires_grad=True)
        col = Tensor(rng.uniform(-2, 2, (3, 1)), requires_grad=True)
        build = lambda: ad.tsum(ad.mul(ad.add(ad.sub(x, y), row), col))
        return _check_param_grads(build, [x, y, row, col], REL_TOL)
    suite.check("add/sub/mul with broadcast", many(elementwise_case))

    def relu_case(_):
        x = Tensor(_away_from_kinks(rng, (4, 4)), requires_grad=True)
        w = rng.uniform(-1, 1, (4, 4))
        return _check_param_grads(
            lambda: ad.tsum(ad.mul(ad.relu(x), Tensor(w))), [x], REL_TOL)
    suite.check("relu", many(relu_case))

    def log_clamp_case(_):
        x = Tensor(rng.uniform(0.2, 3.0, (3, 3)), requires_grad=True)
        return _check_param_grads(
            lambda: ad.tsum(ad.log(ad.clamp_min(x, 1e-15))), [x], REL_TOL)
    suite.check("log(clamp_min)", many(log_clamp_case))

    def reduce_case(_):
        x = Tensor(rng.uniform(-2, 2, (4, 3)), requires_grad=True)
        build = lambda: ad.add(ad.add(ad.tsum(x), ad.tmean(x)),
                               ad.tsum(ad.sum_over_rows(x)))
        return _check_param_grads(build, [x], REL_TOL)
    suite.check("sum/mean/sum_over_rows", many(reduce_case))

    def max_case(_):
        # distinct entries per column keep the argmax stable under the stencil
        base = np.array([rng.permutation(6) for _ in range(4)], dtype=float).T
        x = Tensor(base * 0.37 + rng.uniform(-0.1, 0.1), requires_grad=True)
        w = rng.uniform(0.5, 1.5, (1, 4))
        return _check_param_grads(
            lambda: ad.tsum(ad.mul(ad.max_over_rows(x), Tensor(w))), [x], REL_TOL)
    suite.check("max_over_rows", many(max_case))

    def softmax_case(_):
        v = Tensor(rng.uniform(-2, 2, (6, 1)), requires_grad=True)
        w = rng.uniform(-1, 1, (6, 1))
        return _check_param_grads(
            lambda: ad.tsum(ad.mul(ad.softmax_vector(v), Tensor(w))), [v], REL_TOL)
    suite.check("softmax_vector", many(softmax_case))

    def select_case(_):
        x = Tensor(rng.uniform(-2, 2, (6, 3)), requires_grad=True)
        idx = sorted(rng.choice(6, size=3, replace=False).tolist())
        w = rng.uniform(-1, 1, (3, 3))
        return _check_param_grads(
            lambda: ad.tsum(ad.mul(ad.select_rows(x, idx), Tensor(w))), [x], REL_TOL)
    suite.check("select_rows", many(select_case))

    def concat_case(_):
        x = Tensor(rng.uniform(-2, 2, (3, 2)), requires_grad=True)
        y = Tensor(rng.uniform(-2, 2, (3, 3)), requires_grad=True)
        w = rng.uniform(-1, 1, (3, 5))
        return _check_param_grads(
            lambda: ad.tsum(ad.mul(ad.concat_cols([x, y]), Tensor(w))), [x, y], REL_TOL)
    suite.check("concat_cols", many(concat_case))

    layer_specs = {
        "gcn layer": LayerSpec(kind="gcn", in_dim=3, out_dim=4),
        "cheby layer": LayerSpec(kind="cheby", in_dim=3, out_dim=4, K=3),
        "gin layer": LayerSpec(kind="gin", in_dim=3, out_dim=4, mlp_hidden=6),
        "chebygin layer": LayerSpec(kind="chebygin", in_dim=3, out_dim=4, K=3,
                                    mlp_hidden=6),
    }
    for label, spec in layer_specs.items():
        def layer_case(_, spec=spec):
            # redraw until every relu input clears the stencil, so the kink
            # cannot corrupt the central difference; the numpy mirror also
            # cross-checks the forward values
            for _attempt in range(50):
                layer = ConvLayer(spec, rng)
                ops = _random_ops(rng, 6)
                x = Tensor(rng.uniform(-2, 2, (6, 3)))
                mirror, margin = _layer_forward_numpy(spec, layer.params, ops, x.data)
                if margin > 1e-3:
                    break
            else:
                return False
            if np.abs(mirror - layer.forward(ops, x).data).max() > 1e-12:
                return False
            w = rng.uniform(-1, 1, (6, 4))
            build = lambda: ad.tsum(ad.mul(layer.forward(ops, x), Tensor(w)))
            return _check_param_grads(build, list(layer.params.values()), REL_TOL)
        suite.check(label, many(layer_case))

    def linear_attn_case(_):
        attn = LinearAttention(3, rng)
        x = Tensor(rng.uniform(-2, 2, (5, 3)))
        w = rng.uniform(-1, 1, (5, 1))
        build = lambda: ad.tsum(ad.mul(ad.softmax_vector(attn.forward(None, x)),
                                       Tensor(w)))
        return _check_param_grads(build, [attn.p], REL_TOL)
    suite.check("linear attention", many(linear_attn_case))

    def gnn_attn_case(_):
        specs = [LayerSpec(kind="gcn", in_dim=3, out_dim=4),
                 LayerSpec(kind="gcn", in_dim=4, out_dim=1, activation="none")]
        attn = GnnAttention(specs, rng)
        ops = _random_ops(rng, 5)
        x = Tensor(rng.uniform(-2, 2, (5, 3)))
        w = rng.uniform(-1, 1, (5, 1))
        build = lambda: ad.tsum(ad.mul(ad.softmax_vector(attn.forward(ops, x)),
                                       Tensor(w)))
        return _check_param_grads(build, list(attn.params.values()), REL_TOL)
    suite.check("gnn attention", many(gnn_attn_case))

    def mse_case(_):
        p = Tensor(rng.uniform(-2, 2, (1, 1)), requires_grad=True)
        label = float(rng.uniform(-3, 3))
        return _check_param_grads(lambda: mse_loss(p, label), [p], REL_TOL)
    suite.check("mse loss", many(mse_case))

    def kl_case(_):
        n = 5
        gt = rng.dirichlet(np.ones(n))
        pre = Tensor(rng.uniform(-2, 2, (n, 1)), requires_grad=True)
        build = lambda: kl_attention_loss(gt, ad.softmax_vector(pre), 100.0, n)
        return _check_param_grads(build, [pre], REL_TOL)
    suite.check("kl attention loss", many(kl_case))

    def threshold_end_to_end_case(_):
        g = Graph(n=6, edges=[(0, 1), (1, 2), (3, 4)],
                  features=rng.uniform(-2, 2, (6, 3)), label=1)
        pre = Tensor(rng.uniform(-2, 2, (6, 1)), requires_grad=True)
        w = rng.uniform(-1, 1, 3)

        def build():
            alpha = ad.softmax_vector(pre)
            out, _ = threshold_pool(g, Tensor(g.features), alpha, 0.1)
            return ad.tsum(ad.mul(out.Z, Tensor(np.tile(w, (out.Z.rows, 1)))))
        return _check_param_grads(build, [pre], REL_TOL_COMPOSED)
    suite.check("threshold pooling end to end", many(threshold_end_to_end_case))

    def full_model_case(i):
        cfg = ModelConfig(task="colors", kind="gin", in_dim=4, hidden=(5, 5),
                          mlp_hidden=6, pool_mode="threshold",
                          pool_threshold=0.05, pool_after=(0,), attn_kind="linear")
        model = Model(cfg, np.random.default_rng(seed * 1000 + i))
        graph_rng = np.random.default_rng(seed * 2000 + i)
        colors = graph_rng.integers(0, 3, 6)
        feats = np.zeros((6, 4))
        feats[np.arange(6), colors] = 1.0
        n_green = int((colors == 1).sum())
        gt = np.zeros(6)
        if n_green:
            gt[colors == 1] = 1.0 / n_green
        g = Graph(n=6, edges=[(0, 1), (2, 3), (4, 5)], features=feats,
                  label=n_green, gt_attention=gt)
        tcfg = TrainConfig(supervision="gt", beta=10.0, epochs=1, lr_decay_epochs=())
        build = lambda: graph_loss(model, g, tcfg)
        return _check_param_grads(build, list(model.parameters().values()),
                                  REL_TOL_COMPOSED)
    suite.check("two-layer pooled model, total loss",
                lambda: all(full_model_case(i) for i in range(5)))

    return suite.result()


# ---------------------------------------------------------------------------
# Oracle suite

def _brute_force_triangles(a: np.ndarray) -> tuple[int, np.ndarray]:
    n = a.shape[0]
    total = 0
    per_node = np.zeros(n, dtype=int)
    for i, j, k in itertools.combinations(range(n), 3):
        if a[i, j] and a[j, k] and a[i, k]:
            total += 1
            per_node[[i, j, k]] += 1
    return total, per_node


def _pairwise_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = scores[labels]
    neg = scores[~labels]
    wins = 0.0
    for p in pos:
        wins += (p > neg).sum() + 0.5 * (p == neg).sum()
    return 100.0 * wins / (len(pos) * len(neg))


def run_oracle_suite(seed: int = 0) -> dict:
    suite = _Suite("oracles")
    rng = np.random.default_rng(seed)

    def triangles_match():
        k4 = np.ones((4, 4)) - np.eye(4)
        if count_triangles(k4).total != 4:
            return False
        for _ in range(500):
            n = int(rng.integers(3, 21))
            a = np.zeros((n, n))
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < rng.uniform(0.1, 0.6):
                        a[i, j] = a[j, i] = 1.0
            total, per_node = _brute_force_triangles(a)
            stats = count_triangles(a)
            if stats.total != total or (stats.per_node != per_node).any():
                return False
        return True
    suite.check("triangle counts vs triple enumeration (500 graphs)", triangles_match)

    def auc_matches():
        if ev.auc_rank_sum(np.array([0.1, 0.9]), np.array([True, False])) != 0.0:
            return False
        for _ in range(100):
            n = int(rng.integers(5, 201))
            labels = rng.random(n) < rng.uniform(0.2, 0.8)
            if labels.all() or not labels.any():
                continue
            scores = np.round(rng.random(n), 2)
            got = ev.auc_rank_sum(scores, labels)
            if abs(got - _pairwise_auc(scores, labels)) > 1e-9:
                return False
        return True
    suite.check("rank-sum AUC vs pairwise oracle (100 pools)", auc_matches)

    def kept_sets_match():
        for _ in range(200):
            n = int(rng.integers(1, 60))
            alpha = rng.dirichlet(np.ones(n))
            r = float(rng.uniform(0.05, 1.0))
            k = int(np.ceil(r * n))
            oracle_topk = sorted(sorted(range(n), key=lambda i: (-alpha[i], i))[:k])
            if topk_keep(alpha, r) != oracle_topk:
                return False
            t = float(rng.uniform(0, 0.6))
            oracle_thresh = [i for i in range(n) if alpha[i] > t] or [int(np.argmax(alpha))]
            if threshold_keep(alpha, t) != oracle_thresh:
                return False
        return True
    suite.check("pooling kept-sets vs sort/filter oracles (200 cases)", kept_sets_match)

    def induced_subgraphs_match():
        for _ in range(200):
            n = int(rng.integers(2, 25))
            edges = [(i, j) for i in range(n) for j in range(i + 1, n)
                     if rng.random() < 0.3]
            g = Graph(n=n, edges=edges, features=np.zeros((n, 1)), label=0)
            k = int(rng.integers(1, n + 1))
            keep = sorted(rng.choice(n, size=k, replace=False).tolist())
            remap = {old: new for new, old in enumerate(keep)}
            oracle = sorted((remap[i], remap[j]) for i, j in edges
                            if i in remap and j in remap)
            if sorted(drop_nodes(g, keep).edges) != oracle:
                return False
        return True
    suite.check("induced subgraphs vs edge-filter oracle (200 cases)",
                induced_subgraphs_match)

    return suite.result()


# ---------------------------------------------------------------------------
# Invariant suite

def _random_colors_graph(rng: np.random.Generator, n: int) -> Graph:
    colors = rng.integers(0, 3, n)
    feats = np.zeros((n, 4))
    feats[np.arange(n), colors] = 1.0
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.2]
    n_green = int((colors == 1).sum())
    gt = np.zeros(n)
    if n_green:
        gt[colors == 1] = 1.0 / n_green
    return Graph(n=n, edges=edges, features=feats, label=n_green, gt_attention=gt)


def _permuted(g: Graph, perm: np.ndarray) -> Graph:
    inv = np.argsort(perm)
    edges = sorted(tuple(sorted((int(inv[i]), int(inv[j])))) for i, j in g.edges)
    gt = g.gt_attention[perm] if g.gt_attention is not None else None
    return Graph(n=g.n, edges=edges, features=g.features[perm], label=g.label,
                 gt_attention=gt)


def run_invariant_suite(seed: int = 0, tmp_dir: str | None = None) -> dict:
    import tempfile

    suite = _Suite("invariants")
    rng = np.random.default_rng(seed)

    def softmax_props():
        for _ in range(50):
            v = rng.uniform(-40, 40, int(rng.integers(1, 40)))
            s = ad.softmax_vector(Tensor.column(v)).data
            if abs(s.sum() - 1.0) > 1e-9 or (s <= 0).any():
                return False
            shifted = ad.softmax_vector(Tensor.column(v + 77.7)).data
            if np.abs(s - shifted).max() > 1e-9:
                return False
        return True
    suite.check("softmax normalization and shift invariance", softmax_props)

    def kl_props():
        for _ in range(50):
            n = int(rng.integers(2, 15))
            gt = rng.dirichlet(np.ones(n))
            alpha = rng.dirichlet(np.ones(n))
            l1 = kl_attention_loss(gt, Tensor.column(alpha), 1.0, n).item()
            l2 = kl_attention_loss(gt, Tensor.column(alpha), 2.0, n).item()
            same = kl_attention_loss(gt, Tensor.column(gt), 100.0, n).item()
            if l1 < -1e-12 or l2 != 2 * l1 or abs(same) > 1e-9:
                return False
        return True
    suite.check("kl nonnegativity, beta linearity, zero at identity", kl_props)

    def accumulation():
        a, b = rng.uniform(-2, 2, (3, 3)), rng.uniform(-2, 2, (3, 3))
        x1 = Tensor(np.ones((3, 3)), requires_grad=True)
        ad.backward(ad.add(ad.tsum(ad.mul(x1, Tensor(a))),
                           ad.tsum(ad.mul(x1, Tensor(b)))))
        x2 = Tensor(np.ones((3, 3)), requires_grad=True)
        ad.backward(ad.tsum(ad.mul(x2, Tensor(a + b))))
        return np.abs(x1.grad - x2.grad).max() <= 1e-12
    suite.check("gradient accumulation over shared inputs", accumulation)

    def model_permutation_invariance():
        cfg = ModelConfig(task="colors", kind="gin", in_dim=4, hidden=(8, 8),
                          mlp_hidden=8, pool_mode="threshold",
                          pool_threshold=0.05, pool_after=(0,), attn_kind="linear")
        model = Model(cfg, np.random.default_rng(seed + 1))
        checked = 0
        for _ in range(5):
            g = _random_colors_graph(rng, int(rng.integers(4, 15)))
            base = model.predict(g)
            for _ in range(10):
                perm = rng.permutation(g.n)
                if abs(model.predict(_permuted(g, perm)) - base) > 1e-9:
                    return False
                checked += 1
        return checked == 50
    suite.check("full-model prediction permutation invariance (50 permutations)",
                model_permutation_invariance)

    def pooling_equivalence():
        for i in range(100):
            n = int(rng.integers(3, 15))
            g = _random_colors_graph(rng, n)
            cfg_args = dict(task="colors", kind="gin", in_dim=4, hidden=(6, 6),
                            mlp_hidden=6, pool_after=(0,), attn_kind="linear")
            m_topk = Model(ModelConfig(pool_mode="topk", pool_ratio=1.0, **cfg_args),
                           np.random.default_rng(seed + i))
            m_thresh = Model(ModelConfig(pool_mode="threshold", pool_threshold=0.0,
                                         **cfg_args), np.random.default_rng(seed + i))
            p1, o1 = m_topk.forward(g)
            p2, o2 = m_thresh.forward(g)
            if abs(p1.item() - p2.item()) > 1e-9 or o1[0].kept != o2[0].kept:
                return False
        return True
    suite.check("topk(r=1) equals threshold(0) on 100 model/graph pairs",
                pooling_equivalence)

    def pooled_counts():
        for _ in range(100):
            n = int(rng.integers(1, 30))
            alpha = rng.dirichlet(np.ones(n))
            r = float(rng.uniform(0.05, 1.0))
            if len(topk_keep(alpha, r)) != int(np.ceil(r * n)):
                return False
            t = float(rng.uniform(0, 0.5))
            kept = threshold_keep(alpha, t)
            expected = int((alpha > t).sum())
            if len(kept) != (expected if expected > 0 else 1):
                return False
        return True
    suite.check("kept-set sizes match their definitions", pooled_counts)

    def spectral_radius():
        for _ in range(20):
            n = int(rng.integers(2, 25))
            g = _random_colors_graph(rng, n)
            norm = gcn_norm(adjacency_dense(g))
            v = rng.standard_normal(n)
            for _ in range(80):
                v = norm @ v
                nv = np.linalg.norm(v)
                if nv == 0:
                    return True
                v /= nv
            if abs(v @ norm @ v) > 1.0 + 1e-9:
                return False
        return True
    suite.check("normalized adjacency spectral radius <= 1", spectral_radius)

    def structural_transforms():
        for _ in range(30):
            n = int(rng.integers(2, 20))
            g = _random_colors_graph(rng, n)
            if sorted(drop_nodes(g, list(range(n))).edges) != sorted(g.edges):
                return False
            k = int(rng.integers(1, n + 1))
            keep = sorted(rng.choice(n, size=k, replace=False).tolist())
            if len(drop_nodes(g, keep).edges) > len(g.edges):
                return False
            onehot = degree_onehot(g, 6)
            if not (onehot.sum(axis=1) == 1).all():
                return False
        return True
    suite.check("node dropping monotone and identity; degree one-hots", structural_transforms)

    def readout_and_accuracy_oracles():
        x = rng.uniform(-3, 3, (9, 5))
        if np.abs(readout(Tensor(x), "max").data - x.max(axis=0, keepdims=True)).max() > 0:
            return False

        class Oracle:
            config = ModelConfig(task="colors", kind="gin", in_dim=4,
                                 hidden=(2,), mlp_hidden=2)

            def predict(self, graph):
                return float(graph.label)

        graphs = [_random_colors_graph(rng, int(rng.integers(4, 12))) for _ in range(20)]
        split = DatasetSplit(name="test-orig", graphs=graphs, feature_dim=4)
        return ev.accuracy(Oracle(), split) == 100.0
    suite.check("max readout brute force; label-reading oracle scores 100",
                readout_and_accuracy_oracles)

    def determinism_replays():
        cfg = ColorsConfig(n_train=20, n_val=10, n_test=10,
                           node_range_large=(26, 30), seed=seed + 5)
        with tempfile.TemporaryDirectory(dir=tmp_dir) as td:
            import os
            paths = []
            for run in ("a", "b"):
                splits, meta = gen_colors(cfg)
                save_dataset(splits, meta, os.path.join(td, run))
                paths.append(os.path.join(td, run, "train.jsonl"))
            with open(paths[0], "rb") as f1, open(paths[1], "rb") as f2:
                if f1.read() != f2.read():
                    return False
        splits, _ = gen_colors(cfg)
        mcfg = ModelConfig(task="colors", kind="gin", in_dim=4, hidden=(6, 6),
                           mlp_hidden=6)
        tcfg = TrainConfig(epochs=2, lr_decay_epochs=(), batch_size=8, seed=3)
        h1 = train(mcfg, splits["train"], splits["val"], tcfg)[1]
        h2 = train(mcfg, splits["train"], splits["val"], tcfg)[1]
        return h1 == h2
    suite.check("generation and training determinism replays", determinism_replays)

    def aggregation_invariance():
        reports = [ev.RunReport(task="colors", model_tag="m",
                                accuracies={"test-orig": float(v)}, attn_auc=None,
                                seed=i)
                   for i, v in enumerate((88.0, 92.0, 97.0))]
        a = ev.aggregate(reports).cells
        b = ev.aggregate(list(reversed(reports))).cells
        return a == b
    suite.check("aggregation order invariance", aggregation_invariance)

    return suite.result()


# ---------------------------------------------------------------------------
# CLI entry: run suites and emit a JSON summary.

SUITES = {
    "gradients": run_gradient_suite,
    "oracles": run_oracle_suite,
    "invariants": run_invariant_suite,
}


def run_all(seed: int = 0, suites: list[str] | None = None) -> dict:
    chosen = suites or list(SUITES)
    results = [SUITES[name](seed) for name in chosen]
    return {"seed": seed, "all_passed": all(r["passed"] for r in results),
            "suites": results}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="attnpool.proptests",
        description="Run the gradient/oracle/invariant verification suites.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--suite", choices=sorted(SUITES), action="append",
                        help="run only this suite (repeatable)")
    parser.add_argument("--out", help="write the JSON summary here")
    args = parser.parse_args(argv)

    summary = run_all(seed=args.seed, suites=args.suite)
    for suite in summary["suites"]:
        for check in suite["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            detail = f" ({check['detail']})" if check["detail"] else ""
            print(f"[{suite['suite']}] {status}: {check['name']}{detail}")
        print(f"[{suite['suite']}] {'PASS' if suite['passed'] else 'FAIL'} "
              f"in {suite['seconds']}s")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0 if summary["all_passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
