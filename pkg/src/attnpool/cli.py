"""Command-line entry point: dataset generation, training, occlusion
labeling, evaluation, and report aggregation.

Every command is deterministic given its seed and idempotent given
``--force``; diagnostics go to stderr, data to files (stdout only with
``--print``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import evaluation as ev
from . import training as tr
from .datasets import (ColorsConfig, TrianglesConfig, gen_colors,
                       gen_triangles, load_dataset, save_dataset)
from .models import Model, ModelConfig
from .training import TrainConfig

GEN_SCALES = {
    "colors": {"paper": (500, 2500, 2500), "desk": (500, 2500, 2500),
               "smoke": (40, 20, 20)},
    "triangles": {"paper": (30000, 5000, 5000), "desk": (5000, 1000, 1000),
                  "smoke": (60, 20, 20)},
}

_CONFIG_KEYS = {
    "task", "model", "pooling", "supervision", "seeds", "tag",
    "hidden", "K", "mlp_hidden", "readout",
    "alpha_tilde", "r", "pool_layers_after",
    "attn_kind", "attn_attach", "attn_arch", "attn_init_scale",
    "lr", "batch_size", "weight_decay", "epochs", "lr_decay_epochs", "beta",
    "weak_labels",
}

_POOL_ONLY_KEYS = ("alpha_tilde", "r", "pool_layers_after", "attn_kind",
                   "attn_attach", "attn_arch", "attn_init_scale")


def _default_alpha_tilde(task: str, supervision: str) -> float:
    if task == "colors":
        return 0.05 if supervision in ("gt", "weak") else 0.03
    return {"gt": 0.001, "none": 0.0001, "weak": 0.01}[supervision]


def _task_defaults(task: str, model: str, pooling: str, supervision: str) -> dict:
    if task == "colors":
        d = {"hidden": [64, 64], "readout": "sum",
             "mlp_hidden": 256 if model in ("gin", "chebygin") else None,
             "K": 2 if model in ("cheby", "chebygin") else None,
             "pool_layers_after": [0], "attn_kind": "linear", "attn_attach": 0,
             "epochs": 300 if pooling != "none" else 100,
             "lr_decay_epochs": [280] if pooling != "none" else [90]}
    else:
        d = {"hidden": [64, 64, 64], "readout": "max",
             "mlp_hidden": 64 if model in ("gin", "chebygin") else None,
             "K": 7 if model in ("cheby", "chebygin") else None,
             "pool_layers_after": [1, 2], "attn_kind": "gnn", "attn_attach": 1,
             "epochs": 100, "lr_decay_epochs": [85, 95]}
    d.update({"lr": 1e-3, "batch_size": 32, "weight_decay": 1e-4, "beta": 100.0,
              "attn_arch": "mirror", "attn_init_scale": 1.0,
              "alpha_tilde": _default_alpha_tilde(task, supervision),
              "r": 0.97 if (task == "triangles" and supervision == "gt") else 1.0,
              "tag": f"{model}-{pooling}-{supervision}", "weak_labels": None})
    return d


@dataclasses.dataclass
class ExperimentConfig:
    """Fully resolved experiment: architecture, supervision, seeds."""

    task: str
    model: str
    pooling: str
    supervision: str
    seeds: list[int]
    settings: dict

    @classmethod
    def parse(cls, raw: dict) -> "ExperimentConfig":
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("task", "model", "pooling", "supervision", "seeds"):
            if key not in raw:
                raise ValueError(f"config is missing required key {key!r}")
        task, model = raw["task"], raw["model"]
        pooling, supervision = raw["pooling"], raw["supervision"]
        if task not in ("colors", "triangles"):
            raise ValueError(f"unknown task {task!r}")
        if model not in ("gcn", "cheby", "gin", "chebygin"):
            raise ValueError(f"unknown model {model!r}")
        if pooling not in ("none", "topk", "threshold"):
            raise ValueError(f"unknown pooling {pooling!r}")
        if supervision not in ("none", "gt", "weak"):
            raise ValueError(f"unknown supervision {supervision!r}")
        seeds = [int(s) for s in raw["seeds"]]
        if not seeds:
            raise ValueError("seeds must be a non-empty list")

        if pooling == "none":
            rejected = [k for k in _POOL_ONLY_KEYS + ("beta",) if k in raw]
            if rejected:
                raise ValueError(
                    f"keys {rejected} require an active pooling mode")
            if supervision != "none":
                raise ValueError("attention supervision requires pooling")
        else:
            if pooling == "topk" and "alpha_tilde" in raw:
                raise ValueError("alpha_tilde applies to threshold pooling only")
            if pooling == "threshold" and "r" in raw:
                raise ValueError("r applies to topk pooling only")
            if supervision == "none" and "beta" in raw:
                raise ValueError("beta applies to supervised attention only")
        if supervision != "weak" and raw.get("weak_labels"):
            raise ValueError("weak_labels applies to supervision='weak' only")

        settings = _task_defaults(task, model, pooling, supervision)
        for key, value in raw.items():
            if key in ("task", "model", "pooling", "supervision", "seeds"):
                continue
            settings[key] = value
        return cls(task=task, model=model, pooling=pooling,
                   supervision=supervision, seeds=seeds, settings=settings)

    def model_config(self, in_dim: int) -> ModelConfig:
        s = self.settings
        pooled = self.pooling != "none"
        return ModelConfig(
            task=self.task, kind=self.model, in_dim=in_dim,
            hidden=tuple(s["hidden"]), K=s["K"], mlp_hidden=s["mlp_hidden"],
            readout=s["readout"], pool_mode=self.pooling,
            pool_ratio=s["r"] if self.pooling == "topk" else None,
            pool_threshold=s["alpha_tilde"] if self.pooling == "threshold" else None,
            pool_after=tuple(s["pool_layers_after"]) if pooled else (),
            attn_kind=s["attn_kind"] if pooled else None,
            attn_attach=s["attn_attach"] if pooled else 0,
            attn_arch=s["attn_arch"], attn_init_scale=s["attn_init_scale"],
            tag=s["tag"])

    def train_config(self, seed: int) -> TrainConfig:
        s = self.settings
        return TrainConfig(lr=s["lr"], batch_size=s["batch_size"],
                           weight_decay=s["weight_decay"], epochs=s["epochs"],
                           lr_decay_epochs=tuple(s["lr_decay_epochs"]),
                           beta=s["beta"], supervision=self.supervision,
                           seed=seed)


def _worker_count(requested: int) -> int:
    cap = os.environ.get("ATTNPOOL_THREADS")
    if cap:
        requested = min(requested, max(1, int(cap)))
    return max(1, requested)


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# gen

def cmd_gen(args) -> int:
    out = args.out
    if os.path.isdir(out) and os.listdir(out) and not args.force:
        return _fail(f"output directory {out!r} is not empty (use --force)")
    counts = GEN_SCALES[args.task][args.scale]
    if args.task == "colors":
        cfg = ColorsConfig(dim=args.dim, n_train=counts[0], n_val=counts[1],
                           n_test=counts[2], edge_prob=args.edge_prob,
                           seed=args.seed)
        splits, meta = gen_colors(cfg)
    else:
        if args.dim != 3:
            return _fail("--dim applies to the colors task only")
        cfg = TrianglesConfig(n_train=counts[0], n_val=counts[1],
                              n_test=counts[2], seed=args.seed)
        splits, meta = gen_triangles(cfg)
    meta["scale"] = args.scale
    save_dataset(splits, meta, out)
    total = sum(len(s) for s in splits.values())
    print(f"wrote {total} graphs across {len(splits)} splits to {out}",
          file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# train

def _train_one_seed(payload: dict) -> str:
    """Run one seed end to end; top-level so process pools can pickle it."""
    exp = ExperimentConfig.parse(payload["raw_config"])
    splits, meta = load_dataset(payload["data"], names=("train", "val"))
    seed = payload["seed"]
    model_cfg = exp.model_config(in_dim=splits["train"].feature_dim)
    train_cfg = exp.train_config(seed)
    weak_labels = None
    if exp.supervision == "weak":
        weak_labels = tr.load_weak_labels(exp.settings["weak_labels"])
    model, history = tr.train(model_cfg, splits["train"], splits["val"],
                              train_cfg, weak_labels=weak_labels)
    run_dir = os.path.join(payload["out"], f"seed_{seed}")
    tr.write_run_dir(run_dir, model, history, model_cfg, train_cfg,
                     weak_labels=weak_labels)
    return run_dir


def cmd_train(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        raw = json.load(fh)
    exp = ExperimentConfig.parse(raw)
    splits, meta = load_dataset(args.data, names=("train", "val"))
    if meta.get("task") != exp.task:
        return _fail(f"config task {exp.task!r} does not match dataset task "
                     f"{meta.get('task')!r}")
    if exp.supervision == "gt":
        if any(g.gt_attention is None for g in splits["train"].graphs):
            return _fail("supervision='gt' but the dataset lacks ground-truth attention")
    if exp.supervision == "weak":
        path = exp.settings.get("weak_labels")
        if not path:
            return _fail("supervision='weak' requires the weak_labels config key")
        labels = tr.load_weak_labels(path)
        if len(labels) != len(splits["train"].graphs):
            return _fail(f"weak label count {len(labels)} != training graphs "
                         f"{len(splits['train'].graphs)}")
    # resolve the model config now so bad architectures fail before training
    exp.model_config(in_dim=splits["train"].feature_dim)

    os.makedirs(args.out, exist_ok=True)
    payloads = [{"raw_config": raw, "data": args.data, "out": args.out,
                 "seed": seed} for seed in exp.seeds]
    jobs = _worker_count(args.jobs)
    if jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            run_dirs = list(pool.map(_train_one_seed, payloads))
    else:
        run_dirs = [_train_one_seed(p) for p in payloads]
    for run_dir in run_dirs:
        print(f"run complete: {run_dir}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# occlude

def cmd_occlude(args) -> int:
    model = Model.load(args.ckpt)
    if model.config.pool_mode != "none":
        return _fail("occlusion labels require a global-pooling checkpoint "
                     "(the probing model must have no pooling layers)")
    splits, meta = load_dataset(args.data, names=(args.split,))
    split = splits[args.split]
    if meta.get("task") != model.config.task:
        return _fail(f"checkpoint task {model.config.task!r} does not match "
                     f"dataset task {meta.get('task')!r}")
    labels = tr.compute_weak_labels(model, split)
    tr.save_weak_labels(labels, args.out)
    print(f"wrote {len(labels)} weak labels to {args.out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# eval / report

def cmd_eval(args) -> int:
    model = Model.load(args.ckpt)
    splits, meta = load_dataset(args.data)
    if meta.get("task") != model.config.task:
        return _fail(f"checkpoint task {model.config.task!r} does not match "
                     f"dataset task {meta.get('task')!r}")
    report = ev.evaluate_run(model, splits, seed=args.seed,
                             with_attn_auc=not args.no_attn_auc,
                             per_graph_auc=args.per_graph_auc)
    ev.write_csv_rows(ev.report_rows(report), args.out)
    if args.dump_attention:
        subset = splits.get("test-orig") or next(iter(splits.values()))
        ev.dump_attention(model, subset, args.dump_attention)
    if args.print:
        for name, value in report.accuracies.items():
            print(f"{report.model_tag} {name} accuracy: {value:.2f}")
        if report.attn_auc is not None:
            print(f"{report.model_tag} attention AUC: {report.attn_auc:.2f}")
    return 0


def cmd_report(args) -> int:
    rows = []
    if os.path.isdir(args.runs):
        for entry in sorted(os.listdir(args.runs)):
            candidate = os.path.join(args.runs, entry, "report.csv")
            if os.path.isfile(candidate):
                rows.extend(ev.read_csv_rows(candidate))
    if not rows:
        return _fail(f"no run reports found under {args.runs!r}")
    aggregated = ev.aggregate_from_row_dicts(rows)
    ev.write_csv_rows(aggregated, args.out)
    if args.print:
        for r in aggregated:
            print(f"{r['model']} {r['subset']} {r['metric']}: "
                  f"{r['mean']:.2f} +- {r['std']:.2f} (n={r['n_seeds']})")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnpool",
        description="Attention pooling for graph networks: synthetic counting "
                    "benchmarks, training, occlusion labels, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset")
    p.add_argument("--task", required=True, choices=("colors", "triangles"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", choices=("paper", "desk", "smoke"), default="desk")
    p.add_argument("--dim", type=int, default=3,
                   help="colors: number of base colors (feature width dim+1)")
    p.add_argument("--edge-prob", type=float, default=0.1,
                   help="colors: edge probability")
    p.add_argument("--force", action="store_true",
                   help="overwrite a non-empty output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one run per seed")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel seeds (capped by ATTNPOOL_THREADS)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("occlude", help="derive weak attention labels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_occlude)

    p = sub.add_parser("eval", help="score a checkpoint on the test subsets")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="seed recorded in the report")
    p.add_argument("--no-attn-auc", action="store_true")
    p.add_argument("--per-graph-auc", action="store_true")
    p.add_argument("--dump-attention", default=None,
                   help="also dump per-graph attention to this JSONL file")
    p.add_argument("--print", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate per-run report CSVs")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--print", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, FileNotFoundError, OSError,
            json.JSONDecodeError) as e:
        return _fail(str(e))


if __name__ == "__main__":
    sys.exit(main())
