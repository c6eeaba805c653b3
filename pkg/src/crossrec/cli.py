"""Command-line entry point: prepare | train | eval | gradcheck | synth | bench.

Config files are flat ``key=value`` lines (``#`` comments allowed);
unknown keys are rejected up front. Data goes to files or stdout,
diagnostics to stderr, and the exit code is 0 only when no error
occurred.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .baselines import SyntheticSpec, generate_synthetic, manifest_json_subset, run_grid
from .data import (
    Interaction,
    InteractionLog,
    compute_stats,
    format_stats_table,
    parse_log,
    split_leave_latest,
    write_interactions_tsv,
)
from .evaluation import build_eval_tasks, evaluate, format_metric_table, write_metrics_kv
from .graph import build_graph
from .model import load_checkpoint, save_checkpoint
from .training import (
    TrainConfig,
    fit,
    format_epoch_line,
    gradient_check,
    make_model,
    resolve_domain_weights,
    sample_triplets,
)

MODE_CHOICES = ("full", "specific_only", "shared_only", "mf")


def parse_config_file(path: str) -> dict:
    """Flat key=value file -> string dict; duplicates and junk rejected."""
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = s.partition("=")
            key, value = key.strip(), value.strip()
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            if key in raw:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            raw[key] = value
    return raw


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _int_or_none(s: str):
    return None if s.lower() in ("none", "") else int(s)


def _weights(s: str):
    return "auto" if s == "auto" else [float(x) for x in s.split(",")]


def _mode(s: str) -> str:
    if s not in MODE_CHOICES:
        raise ValueError(f"mode must be one of {MODE_CHOICES}, got {s!r}")
    return s


TRAIN_KEYS = {
    "epochs": int,
    "dim": int,
    "layers": int,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "lambda_reg": float,
    "domain_weights": _weights,
    "triplets_per_epoch": _int_or_none,
    "seed": int,
    "mode": _mode,
    "tie_relation_weights": _bool,
    "mean_aggregation": _bool,
    "reg_per_domain": _bool,
    "alternate_domains": _bool,
    "use_validation": _bool,
    "eval_every": int,
    "num_eval_negatives": int,
}

SYNTH_KEYS = {
    "num_users": int,
    "items_per_domain": int,
    "num_domains": int,
    "latent_dim": int,
    "shared_signal": float,
    "interactions_per_user": int,
    "temperature": float,
    "seed": int,
    "matched_item_latents": _bool,
}

GRADCHECK_KEYS = {
    "num_users": int,
    "items_per_domain": lambda s: [int(x) for x in s.split(",")],
    "num_edges": int,
    "dim": int,
    "layers": int,
    "mode": _mode,
    "tie_relation_weights": _bool,
    "mean_aggregation": _bool,
    "lambda_reg": float,
    "triplets": int,
    "seed": int,
    "corrupt_param": str,  # negative-control hook: breaks one gradient
}

BENCH_KEYS = dict(TRAIN_KEYS)
BENCH_KEYS.update({
    "modes": lambda s: [_mode(x) for x in s.split(",")],
    "seeds": lambda s: [int(x) for x in s.split(",")],
})
del BENCH_KEYS["mode"], BENCH_KEYS["seed"]


def coerce(raw: dict, schema: dict, allow: tuple = ()) -> dict:
    unknown = set(raw) - set(schema) - set(allow)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, value in raw.items():
        if key in schema:
            out[key] = schema[key](value)
    return out


def _load_config(path, schema, allow=()):
    raw = parse_config_file(path) if path else {}
    extras = {k: raw[k] for k in allow if k in raw}
    return coerce(raw, schema, allow), extras


def _require_file(path: str, what: str) -> str:
    if not path:
        raise ValueError(f"missing required {what} path")
    if not os.path.isfile(path):
        raise ValueError(f"{what} file not found: {path}")
    return path


def _ensure_out(path: str) -> str:
    if not path:
        raise ValueError("missing required --out directory")
    os.makedirs(path, exist_ok=True)
    return path


# -- commands ------------------------------------------------------------------


def cmd_prepare(args) -> int:
    data = _require_file(args.data, "--data")
    out = _ensure_out(args.out)
    log = parse_log(data)
    split = split_leave_latest(log)
    write_interactions_tsv(os.path.join(out, "train.tsv"), split.train)
    with open(os.path.join(out, "test.tsv"), "w", encoding="utf-8") as fh:
        for rec in split.test:
            fh.write(f"{log.user_names[rec.user_id]}\t"
                     f"{log.item_names[rec.domain_id][rec.item_id]}\t"
                     f"{log.domain_names[rec.domain_id]}\t{rec.timestamp}\n")
    table = format_stats_table(compute_stats(log))
    with open(os.path.join(out, "stats.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def _train_config(args) -> tuple:
    kwargs, extras = _load_config(args.config, TRAIN_KEYS, allow=("data",))
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.mode is not None:
        kwargs["mode"] = args.mode
    data = args.data or extras.get("data")
    return TrainConfig(**kwargs), data


def cmd_train(args) -> int:
    config, data = _train_config(args)
    data = _require_file(data, "--data")
    out = _ensure_out(args.out)
    split = split_leave_latest(parse_log(data))
    with open(os.path.join(out, "train_log.tsv"), "w", encoding="utf-8") as log_fh:
        result = fit(split, config, log_stream=log_fh)
    save_checkpoint(result.model, os.path.join(out, "model.ckpt"))
    if result.reports:
        print(format_epoch_line(result.reports[-1], result.graph.num_domains))
    return 0


def cmd_eval(args) -> int:
    kwargs, _ = _load_config(args.config, {"num_eval_negatives": int, "seed": int})
    seed = args.seed if args.seed is not None else kwargs.get("seed", 0)
    num_negatives = kwargs.get("num_eval_negatives", 99)
    data = _require_file(args.data, "--data")
    ckpt = _require_file(args.checkpoint, "--checkpoint")
    log = parse_log(data)
    split = split_leave_latest(log)
    graph = build_graph(split.train)
    model = load_checkpoint(ckpt, graph)
    tasks = build_eval_tasks(split, graph, seed=seed, num_negatives=num_negatives)
    if not tasks:
        raise ValueError("no eval tasks could be built (candidate pools too small?)")
    reports = evaluate(model, tasks)
    print(format_metric_table(reports, domain_names=log.domain_names))
    if args.out:
        out = _ensure_out(args.out)
        write_metrics_kv(os.path.join(out, "metrics.kv"), reports,
                         domain_names=log.domain_names)
    return 0


def cmd_gradcheck(args) -> int:
    kwargs, _ = _load_config(args.config, GRADCHECK_KEYS)
    config_seed = kwargs.pop("seed", 0)
    seed = args.seed if args.seed is not None else config_seed
    config_mode = kwargs.pop("mode", "full")
    mode = args.mode if args.mode is not None else config_mode
    num_users = kwargs.pop("num_users", 6)
    items = kwargs.pop("items_per_domain", [5, 4])
    num_edges = kwargs.pop("num_edges", 14)
    dim = kwargs.pop("dim", 4)
    layers = kwargs.pop("layers", 2)
    lambda_reg = kwargs.pop("lambda_reg", 1e-3)
    triplets = kwargs.pop("triplets", 12)
    corrupt = kwargs.pop("corrupt_param", None)

    rng = np.random.default_rng(seed)
    seen, edges = set(), []
    for d in range(len(items)):
        edges.append((int(rng.integers(num_users)), int(rng.integers(items[d])), d))
        seen.add(edges[-1])
    while len(edges) < num_edges:
        d = int(rng.integers(len(items)))
        e = (int(rng.integers(num_users)), int(rng.integers(items[d])), d)
        if e not in seen:
            seen.add(e)
            edges.append(e)
    log = InteractionLog(
        interactions=[Interaction(u, i, d, k) for k, (u, i, d) in enumerate(edges)],
        user_names=[f"u{n}" for n in range(num_users)],
        item_names=[[f"i{n}" for n in range(c)] for c in items],
        domain_names=[f"d{n}" for n in range(len(items))],
    )
    graph = build_graph(log)
    config = TrainConfig(dim=dim, layers=layers, mode=mode, seed=seed,
                         lambda_reg=lambda_reg, **kwargs)
    model = make_model(graph, config)
    betas = resolve_domain_weights(graph, "auto")
    batches = {d: sample_triplets(graph, d, triplets,
                                  np.random.default_rng([seed, 99, d]))
               for d in range(graph.num_domains)}
    report = gradient_check(model, batches, betas, lambda_reg=lambda_reg,
                            corrupt_param=corrupt)
    worst = max(report.values())
    for name in sorted(report):
        print(f"{name}\t{report[name]:.3e}")
    verdict = "PASS" if worst < 1e-4 else "FAIL"
    print(f"{verdict}\tmax_rel_err={worst:.3e}")
    return 0 if verdict == "PASS" else 1


def cmd_synth(args) -> int:
    kwargs, _ = _load_config(args.config, SYNTH_KEYS)
    if args.seed is not None:
        kwargs["seed"] = args.seed
    out = _ensure_out(args.out)
    spec = SyntheticSpec(**kwargs)
    log, manifest = generate_synthetic(spec)
    write_interactions_tsv(os.path.join(out, "interactions.tsv"), log)
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest_json_subset(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(format_stats_table(compute_stats(log)))
    return 0


def cmd_bench(args) -> int:
    kwargs, extras = _load_config(args.config, BENCH_KEYS, allow=("data",))
    modes = kwargs.pop("modes", ["full"])
    seeds = kwargs.pop("seeds", [0])
    data = args.data or extras.get("data")
    data = _require_file(data, "--data")
    out = _ensure_out(args.out)
    split = split_leave_latest(parse_log(data))
    results_path = os.path.join(out, "results.tsv")
    new_file = not os.path.exists(results_path)
    with open(results_path, "a", encoding="utf-8") as fh:
        if new_file:
            fh.write("mode\tseed\tdomain\tusers\thr_at_10\tndcg_at_10\n")
        rows = run_grid(split, modes, seeds, kwargs, out_stream=fh)
    for row in rows:
        print("\t".join(str(c) for c in row))
    return 0


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossrec",
        description="multi-domain graph recommender: data prep, training, "
                    "evaluation, gradient checking, synthetic data, benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a TSV log and report stats")
    p.add_argument("--data", required=True, help="interaction TSV")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model, write checkpoint + log")
    p.add_argument("--config", help="key=value training config")
    p.add_argument("--data", help="interaction TSV (overrides config data=)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODE_CHOICES)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="optional key=value eval config")
    p.add_argument("--out", help="optional directory for metrics.kv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic gradients to finite differences")
    p.add_argument("--config", help="optional key=value gradcheck config")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODE_CHOICES[:3])
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic multi-domain dataset")
    p.add_argument("--config", help="key=value generator spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="train/eval a (mode, seed) grid")
    p.add_argument("--config", help="key=value grid + training config")
    p.add_argument("--data", help="interaction TSV (overrides config data=)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
