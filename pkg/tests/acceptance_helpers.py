"""Experiment runners for the acceptance suite.

Top-level functions so forked worker processes can execute seeds in
parallel; every runner regenerates its dataset deterministically from the
task seed, so workers share nothing.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context

from attnpool.datasets import ColorsConfig, TrianglesConfig, gen_colors, gen_triangles
from attnpool.evaluation import evaluate_run
from attnpool.models import ModelConfig
from attnpool.training import TrainConfig, train, weaksup_pipeline

DATA_SEED = 0


def pmap(fn, argses):
    """Run fn over argument tuples, in parallel when CPUs allow."""
    env_cap = os.environ.get("ATTNPOOL_THREADS")
    workers = int(env_cap) if env_cap else (os.cpu_count() or 1)
    workers = max(1, min(workers, len(argses)))
    if workers == 1:
        return [fn(*a) for a in argses]
    with ProcessPoolExecutor(max_workers=workers,
                             mp_context=get_context("fork")) as pool:
        futures = [pool.submit(fn, *a) for a in argses]
        return [f.result() for f in futures]


def colors_splits():
    splits, _ = gen_colors(ColorsConfig(seed=DATA_SEED))
    return splits


def triangles_splits():
    cfg = TrianglesConfig(n_train=5000, n_val=1000, n_test=1000, seed=DATA_SEED)
    splits, _ = gen_triangles(cfg)
    return splits


def colors_gin_config(pool_mode, threshold=None):
    return ModelConfig(task="colors", kind="gin", in_dim=4, hidden=(64, 64),
                       mlp_hidden=256, readout="sum", pool_mode=pool_mode,
                       pool_threshold=threshold,
                       pool_after=(0,) if pool_mode != "none" else (),
                       attn_kind="linear" if pool_mode != "none" else None)


def colors_cheby_config(pool_mode, threshold=None):
    return ModelConfig(task="colors", kind="cheby", in_dim=4, hidden=(64, 64),
                       K=2, readout="sum", pool_mode=pool_mode,
                       pool_threshold=threshold,
                       pool_after=(0,) if pool_mode != "none" else (),
                       attn_kind="linear" if pool_mode != "none" else None)


def train_colors_sup(seed):
    """Supervised threshold-attention GIN (projection on the input layer)."""
    splits = colors_splits()
    cfg = TrainConfig(epochs=300, lr_decay_epochs=(280,), supervision="gt",
                      beta=100.0, seed=seed)
    model, _ = train(colors_gin_config("threshold", 0.05),
                     splits["train"], splits["val"], cfg)
    report = evaluate_run(model, splits, seed=seed)
    return {"seed": seed, "accuracies": report.accuracies,
            "attn_auc": report.attn_auc}


def train_colors_global(seed, ckpt_dir):
    """Global-pooling GIN baseline; checkpoint saved for occlusion probing."""
    splits = colors_splits()
    cfg = TrainConfig(epochs=100, lr_decay_epochs=(90,), supervision="none",
                      seed=seed)
    model, _ = train(colors_gin_config("none"), splits["train"], splits["val"], cfg)
    path = os.path.join(ckpt_dir, f"colors_global_seed{seed}.json")
    model.save(path)
    report = evaluate_run(model, splits, seed=seed, with_attn_auc=False)
    return {"seed": seed, "accuracies": report.accuracies, "checkpoint": path}


def train_colors_weak_pair(seed):
    """Weak-sup pipeline and its unsupervised counterpart, same seed."""
    splits = colors_splits()
    out = weaksup_pipeline(
        colors_cheby_config("threshold", 0.05), colors_cheby_config("none"),
        splits["train"], splits["val"],
        TrainConfig(epochs=300, lr_decay_epochs=(280,), supervision="weak",
                    beta=100.0, seed=seed),
        TrainConfig(epochs=100, lr_decay_epochs=(90,), supervision="none",
                    seed=seed))
    weak_report = evaluate_run(out["model_a"], splits, seed=seed)

    unsup_model, _ = train(colors_cheby_config("threshold", 0.03),
                           splits["train"], splits["val"],
                           TrainConfig(epochs=300, lr_decay_epochs=(280,),
                                       supervision="none", seed=seed))
    unsup_report = evaluate_run(unsup_model, splits, seed=seed)
    return {"seed": seed,
            "weak_combined": weak_report.accuracies["combined"],
            "unsup_combined": unsup_report.accuracies["combined"],
            "weak_auc": weak_report.attn_auc,
            "unsup_auc": unsup_report.attn_auc}


def triangles_gin_config(in_dim):
    return ModelConfig(task="triangles", kind="gin", in_dim=in_dim,
                       hidden=(64, 64, 64), mlp_hidden=64, readout="max")


def triangles_chebygin_config(in_dim, threshold):
    return ModelConfig(task="triangles", kind="chebygin", in_dim=in_dim,
                       hidden=(64, 64, 64), K=7, mlp_hidden=64, readout="max",
                       pool_mode="threshold", pool_threshold=threshold,
                       pool_after=(1, 2), attn_kind="gnn", attn_attach=1,
                       attn_arch="mirror")


def train_triangles_gin(seed):
    splits = triangles_splits()
    cfg = TrainConfig(epochs=100, lr_decay_epochs=(85, 95), supervision="none",
                      seed=seed)
    model, _ = train(triangles_gin_config(splits["train"].feature_dim),
                     splits["train"], splits["val"], cfg)
    report = evaluate_run(model, splits, seed=seed, with_attn_auc=False)
    return {"seed": seed, "accuracies": report.accuracies}


def train_triangles_chebygin(seed, supervision):
    splits = triangles_splits()
    threshold = 0.001 if supervision == "gt" else 0.0001
    cfg = TrainConfig(epochs=100, lr_decay_epochs=(85, 95),
                      supervision=supervision, beta=100.0, seed=seed)
    model, _ = train(triangles_chebygin_config(splits["train"].feature_dim, threshold),
                     splits["train"], splits["val"], cfg)
    report = evaluate_run(model, splits, seed=seed)
    return {"seed": seed, "supervision": supervision,
            "accuracies": report.accuracies, "attn_auc": report.attn_auc}
