"""Command-line entry point: ``bpldag {generate,fit,eval,variance}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical abort.
Every command writes ``manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .bpl import BplParams, load_checkpoint
from .conditionals import LinearGaussian
from .estimators import variance_report, write_variance_csv
from .graph import evaluate_graph, is_dag, load_graph, save_graph_json
from .objective import DataError, interventional_score, load_dataset_dir, save_dataset
from .synth import (generate, noisy_target, ordering_reward,
                    sample_er_dag)
from .trainer import NumericalAbort, TrainConfig, fit

log = logging.getLogger("bpldag")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def default_threads() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def write_json_atomic(path, obj) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, path)


def write_manifest(out_dir, command, argv, config, seed, inputs, outputs, seconds, threads) -> Path:
    path = Path(out_dir) / "manifest.json"
    write_json_atomic(path, {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seconds": seconds,
        "version": __version__,
        "threads": threads,
    })
    return path


# ---------------------------------------------------------------- generate


def cmd_generate(args) -> dict:
    if args.degree is None and args.edge_prob is None:
        args.degree = 1.0
    truth, data = generate(args.n, args.mechanism, degree=args.degree, edge_prob=args.edge_prob,
                           seed=args.seed, n_obs=args.n_obs, n_int_per_var=args.n_int,
                           alpha=args.alpha, p_mislabel=args.p_mislabel)
    out = Path(args.out)
    paths = save_dataset(out, data)
    paths["truth"] = out / "truth.json"
    save_graph_json(paths["truth"], truth.dag, mechanism=truth.mechanism, alpha=truth.alpha,
                    meta={k: v for k, v in truth.meta.items()})
    config = {"n": args.n, "mechanism": args.mechanism, "degree": args.degree,
              "edge_prob": args.edge_prob, "n_obs": args.n_obs, "n_int": args.n_int,
              "alpha": args.alpha, "p_mislabel": args.p_mislabel}
    return {"config": config, "inputs": {}, "outputs": paths}


# ---------------------------------------------------------------- fit

_FIT_FLAGS = {
    "estimator": "estimator", "steps": "steps", "batch_size": "batch_size", "lr": "learning_rate",
    "mc_samples": "mc_samples", "lam": "lam", "threshold": "threshold",
    "val_fraction": "val_fraction", "model": "model", "regime_weighting": "regime_weighting",
    "mlp_layers": "mlp_layers", "mlp_width": "mlp_width", "val_every": "val_every",
}


def resolve_fit_config(args) -> TrainConfig:
    """Defaults < JSON file < explicit flags."""
    overrides = {dest: getattr(args, flag) for flag, dest in _FIT_FLAGS.items()
                 if getattr(args, flag) is not None}
    if args.subsample:
        overrides["subsample_nodes"] = True
    overrides["seed"] = args.seed
    base = {}
    if args.config:
        if not Path(args.config).exists():
            raise UsageError(f"config file not found: {args.config}")
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = set(base) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    estimator = overrides.get("estimator", base.get("estimator", "reinforce"))
    merged = {**base, **overrides}
    try:
        config = (TrainConfig.analytic_defaults(**merged) if estimator == "analytic"
                  else TrainConfig(**merged))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    # fail before training rather than at graph extraction
    if config.threshold < 0.5:
        raise UsageError("threshold below 0.5 does not guarantee an acyclic graph")
    return config


def cmd_fit(args) -> dict:
    config = resolve_fit_config(args)
    data = load_dataset_dir(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = fit(data, config, dump_path=out / "abort_state.json")
    paths = result.save(out)
    return {"config": config.to_dict(), "inputs": {"data": args.data}, "outputs": paths}


# ---------------------------------------------------------------- eval


def cmd_eval(args) -> dict:
    for label, path in (("estimate", args.est), ("truth", args.truth)):
        if not Path(path).exists():
            raise UsageError(f"{label} graph not found: {path}")
    est = load_graph(args.est)
    truth = load_graph(args.truth)
    if est.shape != truth.shape:
        raise DataError(f"graph sizes differ: {est.shape[0]} vs {truth.shape[0]}")
    scores = None
    if args.checkpoint:
        params, _ = load_checkpoint(args.checkpoint)
        scores = params.theta
    report = evaluate_graph(est, truth, scores)
    metrics = report.as_dict()
    for key, value in metrics.items():
        if value is not None:
            print(f"{key:>12s}  {value:.4f}" if isinstance(value, float) else f"{key:>12s}  {value}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.json"
    write_json_atomic(metrics_path, metrics)
    inputs = {"estimate": args.est, "truth": args.truth}
    if args.checkpoint:
        inputs["checkpoint"] = args.checkpoint
    # link the manifests of the runs that produced each input, when present
    links = {}
    for label, path in inputs.items():
        sibling = Path(path).parent / "manifest.json"
        if sibling.exists() and sibling.resolve() != (out / "manifest.json").resolve():
            links[label] = str(sibling)
    return {"config": {"linked_manifests": links}, "inputs": inputs,
            "outputs": {"metrics": metrics_path}}


# ---------------------------------------------------------------- variance


def _least_squares_model(data) -> LinearGaussian:
    """Per-node regression on every other variable, observational rows only."""
    obs = [r for r in data.regimes if not data.intervened[r]]
    X = data.X[np.isin(data.regime_of, obs)] if obs else data.X
    n = data.n
    model = LinearGaussian.init(n)
    for j in range(n):
        others = [i for i in range(n) if i != j]
        design = np.column_stack([X[:, others], np.ones(X.shape[0])])
        coef, *_ = np.linalg.lstsq(design, X[:, j], rcond=None)
        model.params["weights"][others, j] = coef[:-1]
        model.params["bias"][j] = coef[-1]
        resid = X[:, j] - design @ coef
        model.params["log_scale"][j] = 0.5 * np.log(max(resid.var(), 1e-8))
    return model


def _variance_rewards(args):
    """Return ``(params, reward_fn_for_step, inputs)`` for the requested setting."""
    if args.data:
        data = load_dataset_dir(args.data)
        if args.checkpoint:
            params, model = load_checkpoint(args.checkpoint)
            if model is None or params.n != data.n:
                raise DataError("checkpoint does not match the dataset")
        else:
            params, model = BplParams.init(data.n), _least_squares_model(data)

        def reward_for_step(step, rng):
            rows = rng.integers(0, data.m, size=min(args.batch_size, data.m))
            batch = data.subset(rows)
            return lambda A: interventional_score(batch, A, model)

        inputs = {"data": args.data}
        if args.checkpoint:
            inputs["checkpoint"] = args.checkpoint
        return params, reward_for_step, inputs

    n = args.ordering_n
    dag = sample_er_dag(n, args.edge_prob, np.random.default_rng(args.seed))

    def reward_for_step(step, rng):
        return ordering_reward(noisy_target(dag, args.rho, rng))

    return BplParams.init(n), reward_for_step, {}


def cmd_variance(args) -> dict:
    try:
        K_values = [int(k) for k in args.K.split(",") if k.strip()]
    except ValueError as exc:
        raise UsageError(f"--K must be a comma-separated list of integers: {args.K}") from exc
    if not K_values or min(K_values) < 2:
        raise UsageError("--K needs sample counts of at least 2")
    if args.data is None and args.ordering_n is None:
        raise UsageError("give --data or --ordering-n")
    params, reward_for_step, inputs = _variance_rewards(args)
    rng = np.random.default_rng(args.seed)
    rows = variance_report(params, reward_for_step, K_values, args.repeats, rng, steps=args.steps,
                           train_K=args.train_K, lr=args.lr, record_every=args.record_every)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "variance.csv"
    write_variance_csv(path, rows)
    config = {"K": K_values, "repeats": args.repeats, "steps": args.steps, "train_K": args.train_K,
              "lr": args.lr, "record_every": args.record_every, "batch_size": args.batch_size,
              "ordering_n": args.ordering_n, "edge_prob": args.edge_prob, "rho": args.rho}
    return {"config": config, "inputs": inputs, "outputs": {"variance": path}}


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bpldag", description="DAG structure learning from interventional data.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")

    g = sub.add_parser("generate", help="synthetic dataset plus ground truth")
    common(g)
    g.add_argument("--n", type=int, required=True)
    density = g.add_mutually_exclusive_group()
    density.add_argument("--degree", type=float)
    density.add_argument("--edge-prob", type=float)
    g.add_argument("--mechanism", choices=("linear", "mlp"), default="linear")
    g.add_argument("--n-obs", type=int, default=10_000)
    g.add_argument("--n-int", type=int, default=500, help="interventional rows per variable")
    g.add_argument("--alpha", type=float, default=1.0, help="soft-intervention blend")
    g.add_argument("--p-mislabel", type=float, default=0.0)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="learn a DAG from a dataset directory")
    common(f)
    f.add_argument("--data", required=True, help="directory with samples/regimes/interventions")
    f.add_argument("--config", help="JSON file of training settings")
    f.add_argument("--estimator", choices=("reinforce", "analytic"))
    f.add_argument("--steps", type=int)
    f.add_argument("--batch-size", type=int)
    f.add_argument("--lr", type=float)
    f.add_argument("--mc-samples", type=int)
    f.add_argument("--lam", type=float)
    f.add_argument("--threshold", type=float)
    f.add_argument("--val-fraction", type=float)
    f.add_argument("--val-every", type=int)
    f.add_argument("--model", choices=("linear", "mlp"))
    f.add_argument("--mlp-layers", type=int)
    f.add_argument("--mlp-width", type=int)
    f.add_argument("--regime-weighting", choices=("empirical", "regime"))
    f.add_argument("--subsample", action="store_true", help="subsample nodes in the analytic cross term")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="compare an estimated graph with the truth")
    common(e)
    e.add_argument("--est", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--checkpoint", help="checkpoint whose node logits give Kendall tau")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("variance", help="gradient variance with and without the baseline")
    common(v)
    v.add_argument("--data")
    v.add_argument("--checkpoint")
    v.add_argument("--ordering-n", type=int, help="use the noisy-target ordering task on n nodes")
    v.add_argument("--edge-prob", type=float, default=1.0, help="target DAG density for --ordering-n")
    v.add_argument("--rho", type=float, default=0.3)
    v.add_argument("--K", default="10,50,100,200")
    v.add_argument("--repeats", type=int, default=20)
    v.add_argument("--steps", type=int, default=100)
    v.add_argument("--record-every", type=int, default=10)
    v.add_argument("--train-K", type=int, default=100)
    v.add_argument("--lr", type=float, default=0.01)
    v.add_argument("--batch-size", type=int, default=64)
    v.set_defaults(func=cmd_variance)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"bpldag: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or default_threads()
    Path(args.out).mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        run = args.func(args)
    except UsageError as exc:
        print(f"bpldag: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"bpldag: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, KeyError, OSError) as exc:
        print(f"bpldag: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    write_manifest(args.out, args.command, argv, run["config"], args.seed, run["inputs"],
                   run["outputs"], time.perf_counter() - start, threads)
    if args.command == "fit":
        graph = load_graph(run["outputs"]["graph_json"])
        log.info("fitted graph: %d edges, acyclic=%s", int(graph.sum()), is_dag(graph))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
