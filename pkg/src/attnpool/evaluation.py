"""Accuracy, attention ranking quality (AUC), and report aggregation.

Attention quality is scored as the area under the ROC curve of predicted
coefficients against binary node relevance (ground-truth attention > 0),
pooling the nodes of every graph in the combined test set. Ties contribute
one half via the rank-sum (Mann-Whitney) formulation.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .graphs import DatasetSplit, Graph
from .models import Model, decode_prediction

TEST_SUBSETS = ("test-orig", "test-large", "test-largec")


def accuracy(model: Model, split: DatasetSplit) -> float:
    """Percent of graphs whose rounded, clamped prediction hits the label."""
    if split.feature_dim != model.config.in_dim:
        raise ValueError(f"model expects feature width {model.config.in_dim}, "
                         f"split has {split.feature_dim}")
    if not split.graphs:
        raise ValueError("cannot score an empty split")
    task = model.config.task
    hits = sum(decode_prediction(model.predict(g), task) == g.label
               for g in split.graphs)
    return 100.0 * hits / len(split.graphs)


def _tied_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties averaged."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_rank_sum(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """AUC in percent from pooled scores and binary labels; None if one-class."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _tied_ranks(scores)
    stat = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return 100.0 * stat / (n_pos * n_neg)


def attention_auc(pairs: list[tuple[np.ndarray, np.ndarray]],
                  per_graph: bool = False) -> float | None:
    """Ranking quality of predicted coefficients against ground truth.

    ``pairs`` holds (predicted alpha, gt alpha) per graph. The default
    pools every node across graphs; all-positive or all-negative graphs
    contribute their nodes to the pool as-is. ``per_graph`` instead
    averages per-graph AUCs, skipping graphs where AUC is undefined.
    """
    if per_graph:
        vals = []
        for scores, gt in pairs:
            v = auc_rank_sum(np.asarray(scores), np.asarray(gt) > 0)
            if v is not None:
                vals.append(v)
        return float(np.mean(vals)) if vals else None
    scores = np.concatenate([np.asarray(s, dtype=np.float64).ravel() for s, _ in pairs])
    labels = np.concatenate([np.asarray(g, dtype=np.float64).ravel() > 0 for _, g in pairs])
    return auc_rank_sum(scores, labels)


def predicted_attention(model: Model, graph: Graph) -> np.ndarray:
    """Per-node scores on the full node set.

    Attention models expose their first-stage coefficients; global-pooling
    models are probed by occlusion.
    """
    if model.config.pool_mode != "none":
        return model.attention_maps(graph)[0].alpha_values
    from .training import occlusion_attention
    return occlusion_attention(model, graph)


@dataclass
class RunReport:
    """One trained model scored on every test subset."""

    task: str
    model_tag: str
    accuracies: dict[str, float]
    attn_auc: float | None
    seed: int | None = None
    runtime_seconds: float = 0.0

    def __post_init__(self):
        for name, v in self.accuracies.items():
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"accuracy {name}={v} outside [0, 100]")
        if self.attn_auc is not None and not 0.0 <= self.attn_auc <= 100.0:
            raise ValueError(f"attention AUC {self.attn_auc} outside [0, 100]")


@dataclass
class AggregateReport:
    """Mean and spread per (model, subset, metric) over seeds."""

    task: str
    cells: dict[tuple[str, str, str], tuple[float, float, int]] = field(default_factory=dict)


def evaluate_run(model: Model, splits: dict[str, DatasetSplit],
                 seed: int | None = None, with_attn_auc: bool = True,
                 per_graph_auc: bool = False) -> RunReport:
    """Score one checkpoint on every test subset present in ``splits``."""
    t0 = time.perf_counter()
    present = [name for name in TEST_SUBSETS if name in splits]
    if not present:
        raise ValueError("no test subsets to evaluate")
    accuracies = {name: accuracy(model, splits[name]) for name in present}
    combined: list[Graph] = []
    for name in present:
        combined.extend(splits[name].graphs)
    hits = sum(decode_prediction(model.predict(g), model.config.task) == g.label
               for g in combined)
    accuracies["combined"] = 100.0 * hits / len(combined)

    auc = None
    if with_attn_auc:
        pairs = [(predicted_attention(model, g), g.gt_attention)
                 for g in combined if g.gt_attention is not None]
        if pairs:
            auc = attention_auc(pairs, per_graph=per_graph_auc)
    return RunReport(task=model.config.task, model_tag=model.config.model_tag,
                     accuracies=accuracies, attn_auc=auc, seed=seed,
                     runtime_seconds=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# CSV emission: rows of task,model,subset,metric,mean,std,n_seeds.

CSV_COLUMNS = ("task", "model", "subset", "metric", "mean", "std", "n_seeds")


def report_rows(report: RunReport) -> list[dict]:
    rows = []
    for subset, value in report.accuracies.items():
        rows.append({"task": report.task, "model": report.model_tag,
                     "subset": subset, "metric": "accuracy",
                     "mean": value, "std": 0.0, "n_seeds": 1})
    if report.attn_auc is not None:
        rows.append({"task": report.task, "model": report.model_tag,
                     "subset": "combined", "metric": "attn_auc",
                     "mean": report.attn_auc, "std": 0.0, "n_seeds": 1})
    return rows


def write_csv_rows(rows: list[dict], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([r["task"], r["model"], r["subset"], r["metric"],
                             repr(float(r["mean"])), repr(float(r["std"])),
                             r["n_seeds"]])


def read_csv_rows(path: str | os.PathLike) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            missing = set(CSV_COLUMNS) - set(rec)
            if missing:
                raise ValueError(f"{path}: missing report columns {sorted(missing)}")
            rows.append({"task": rec["task"], "model": rec["model"],
                         "subset": rec["subset"], "metric": rec["metric"],
                         "mean": float(rec["mean"]), "std": float(rec["std"]),
                         "n_seeds": int(rec["n_seeds"])})
    return rows


def aggregate(reports: list[RunReport]) -> AggregateReport:
    """Mean +- std (unbiased, 0 for a single seed) per report cell."""
    if not reports:
        raise ValueError("aggregate needs at least one report")
    tasks = {r.task for r in reports}
    if len(tasks) != 1:
        raise ValueError(f"cannot aggregate mixed tasks {sorted(tasks)}")
    groups: dict[tuple[str, str, str], list[float]] = {}
    for rep in reports:
        for subset, value in rep.accuracies.items():
            groups.setdefault((rep.model_tag, subset, "accuracy"), []).append(value)
        if rep.attn_auc is not None:
            groups.setdefault((rep.model_tag, "combined", "attn_auc"), []).append(rep.attn_auc)
    out = AggregateReport(task=tasks.pop())
    for key, values in groups.items():
        arr = np.asarray(values)
        std = float(arr.std(ddof=1)) if arr.size >= 2 else 0.0
        out.cells[key] = (float(arr.mean()), std, arr.size)
    return out


def aggregate_rows(agg: AggregateReport) -> list[dict]:
    rows = []
    for (model, subset, metric), (mean, std, n) in sorted(agg.cells.items()):
        rows.append({"task": agg.task, "model": model, "subset": subset,
                     "metric": metric, "mean": mean, "std": std, "n_seeds": n})
    return rows


def aggregate_from_row_dicts(rows: list[dict]) -> list[dict]:
    """Aggregate per-run report rows (n_seeds 1 each) into mean/std rows."""
    if not rows:
        raise ValueError("no report rows to aggregate")
    tasks = {r["task"] for r in rows}
    if len(tasks) != 1:
        raise ValueError(f"cannot aggregate mixed tasks {sorted(tasks)}")
    groups: dict[tuple[str, str, str], list[float]] = {}
    for r in rows:
        groups.setdefault((r["model"], r["subset"], r["metric"]), []).append(r["mean"])
    out = []
    task = tasks.pop()
    for (model, subset, metric), values in sorted(groups.items()):
        arr = np.asarray(values)
        std = float(arr.std(ddof=1)) if arr.size >= 2 else 0.0
        out.append({"task": task, "model": model, "subset": subset,
                    "metric": metric, "mean": float(arr.mean()), "std": std,
                    "n_seeds": arr.size})
    return out


# ---------------------------------------------------------------------------
# Attention dumps: per-graph stage coefficients for offline inspection.

def dump_attention(model: Model, split: DatasetSplit,
                   path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, g in enumerate(split.graphs):
            if model.config.pool_mode != "none":
                stages = [{"alpha": [float(a) for a in out.alpha_values],
                           "kept": out.kept}
                          for out in model.attention_maps(g)]
            else:
                stages = []
            rec = {"index": i, "stages": stages}
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def attention_auc_from_dump(path: str | os.PathLike,
                            split: DatasetSplit) -> float | None:
    """Pooled AUC of dumped first-stage coefficients against the split's gt."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            g = split.graphs[int(rec["index"])]
            if g.gt_attention is None or not rec["stages"]:
                continue
            pairs.append((np.asarray(rec["stages"][0]["alpha"]), g.gt_attention))
    return attention_auc(pairs) if pairs else None
