"""Command-line entry point: dataset generation, training, evaluation,
studies, and plan export.

Config values come from an optional flat key-value file (section-prefixed
keys, e.g. ``train.lr = 0.01``), overridden by repeated ``--set key=value``
flags. Unknown keys are rejected before any computation. Every command
writes its artifacts under a run directory (``--run-dir``, the
SLICEPLAN_RUN_DIR environment variable, or ``runs/<config-hash>``), never
mutating its input files.

Exit codes: 0 success, 2 bad configuration, 3 missing/unreadable input
file, 4 numerical failure. Errors are reported as one JSON object on
stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .errors import (
    ConfigurationError,
    InfeasibleRegimeError,
    ParseError,
    UndefinedCorrelationError,
    UnsupportedInstanceError,
)
from .exact_ot import ot_assignment, plan_to_csv
from .experiments import (
    AmortizedStudyConfig,
    BlobPairFamily,
    DriftStudyConfig,
    config_hash,
    run_amortized_study,
    run_drift_study,
    run_minibatch_study,
    run_theory_suite,
)
from .measures import DatasetSpec, Drift, generate, load_points, save_points
from .slicer import load_checkpoint, make_slicer, save_checkpoint
from .stp import lift_plan
from .train import TrainConfig, train_minstp

RUN_DIR_ENV = "SLICEPLAN_RUN_DIR"

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(v: str) -> bool:
    try:
        return _BOOL[v.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"expected a boolean, got {v!r}") from None


def _parse_ints(v: str):
    return tuple(int(x) for x in str(v).split(",") if x != "")


KNOWN_KEYS = {
    "train.epochs": int,
    "train.batch_size": int,
    "train.batches_per_epoch": int,
    "train.lr": float,
    "train.alpha_fraction": float,
    "train.optimizer": str,
    "train.momentum": float,
    "train.seed": int,
    "train.p": float,
    "train.full_cost_every": int,
    "train.update_per_batch": _parse_bool,
    "train.keep_best": _parse_bool,
    "slicer.variant": str,
    "slicer.hidden": _parse_ints,
    "slicer.seed": int,
    "study.seed": int,
    "study.quick": _parse_bool,
    "study.runs": int,
    "study.num_tasks": int,
    "study.n": int,
    "study.batch_sizes": _parse_ints,
    "study.seeds": _parse_ints,
}


def load_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; unknown keys rejected."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{i}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return coerce_config(values)


def coerce_config(values: dict) -> dict:
    out = {}
    for key, value in values.items():
        if key not in KNOWN_KEYS:
            raise ConfigurationError(f"unknown config key {key!r}")
        out[key] = KNOWN_KEYS[key](value)
    return out


def build_train_config(cfg: dict) -> TrainConfig:
    kwargs = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("train.")}
    return TrainConfig(**kwargs)


def _gather_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"config file not found: {args.config}")
        cfg.update(load_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.update(coerce_config({key.strip(): value.strip()}))
    return cfg


def _run_dir(args, cfg: dict) -> str:
    base = args.run_dir or os.environ.get(RUN_DIR_ENV)
    if base is None:
        base = os.path.join("runs", config_hash({"cmd": args.command, **cfg}))
    os.makedirs(base, exist_ok=True)
    return base


def _write_config(run_dir: str, cfg: dict) -> None:
    with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump({**cfg, "config_hash": config_hash(cfg)}, fh, indent=2, default=str)


def _load_measure(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"point-cloud file not found: {path}")
    return load_points(path)


def _resolve_slicer(spec: str, dim: int, seed: int, hidden):
    if spec == "random" or spec == "random-linear":
        return make_slicer("linear", dim, seed)
    if spec == "random-mlp":
        return make_slicer("mlp", dim, seed, hidden)
    return load_checkpoint(spec)


def cmd_gen(args) -> int:
    drift = None
    if args.rotation or args.zoom != 1.0:
        drift = Drift(rotation=args.rotation, zoom=args.zoom)
    spec = DatasetSpec(args.family, args.n, args.seed, drift=drift)
    measure = generate(spec)
    save_points(measure, args.out, fmt=args.format)
    print(json.dumps({"written": args.out, "n": measure.n, "dim": measure.dim}))
    return 0


def cmd_train(args) -> int:
    cfg = _gather_config(args)
    mu = _load_measure(args.mu)
    nu = _load_measure(args.nu)
    tcfg = build_train_config(cfg)
    variant = cfg.get("slicer.variant", args.slicer)
    hidden = cfg.get("slicer.hidden", _parse_ints(args.hidden))
    sseed = cfg.get("slicer.seed", args.slicer_seed)
    f0 = make_slicer(variant, mu.dim, sseed, hidden)
    run_dir = _run_dir(args, cfg)
    _write_config(run_dir, cfg)
    f, trace = train_minstp(mu, nu, f0, tcfg)
    trace.to_jsonl(os.path.join(run_dir, "trace.jsonl"))
    ckpt = os.path.join(run_dir, "checkpoint.json")
    save_checkpoint(f, ckpt, seed=sseed)
    print(
        json.dumps(
            {
                "run_dir": run_dir,
                "checkpoint": ckpt,
                "final_full_cost": trace.final_full_cost,
                "epochs": tcfg.epochs,
            }
        )
    )
    return 0


def cmd_eval(args) -> int:
    mu = _load_measure(args.mu)
    nu = _load_measure(args.nu)
    f = _resolve_slicer(args.slicer, mu.dim, args.seed, _parse_ints(args.hidden))
    res = lift_plan(f, mu, nu, args.p)
    report = {
        "stp_cost": res.cost,
        "stp_value": res.value,
        "slicer": args.slicer,
        "p": args.p,
    }
    if mu.n == nu.n and mu.is_uniform() and nu.is_uniform():
        ot = ot_assignment(mu, nu, args.p)
        report["ot_cost"] = ot.cost
        report["ot_value"] = ot.value
    print(json.dumps(report))
    return 0


def cmd_study(args) -> int:
    cfg = _gather_config(args)
    seed = cfg.get("study.seed", args.seed)
    run_dir = _run_dir(args, {**cfg, "study": args.kind, "seed": seed})
    _write_config(run_dir, {**cfg, "study": args.kind, "seed": seed})
    if args.kind == "theory":
        report = run_theory_suite(seed=seed, quick=cfg.get("study.quick", args.quick))
    elif args.kind == "drift":
        dcfg = DriftStudyConfig(
            num_tasks=cfg.get("study.num_tasks", 7),
            n=cfg.get("study.n", 256),
            runs=cfg.get("study.runs", 5),
            seed=seed,
        )
        report = run_drift_study(dcfg, jobs=args.jobs)
    elif args.kind == "minibatch":
        tcfg = None
        if any(k.startswith("train.") for k in cfg):
            tcfg = build_train_config(cfg)
            tcfg = replace(tcfg, keep_best=True)
        report = run_minibatch_study(
            n=cfg.get("study.n", 1024),
            batch_sizes=cfg.get("study.batch_sizes", (64,)),
            cfg=tcfg,
            seeds=cfg.get("study.seeds", (seed,)),
            run_dir=run_dir,
        )
    elif args.kind == "amortized":
        acfg = AmortizedStudyConfig(seeds=cfg.get("study.seeds", (0, 1, 2)))
        report = run_amortized_study([BlobPairFamily()], acfg)
    else:  # pragma: no cover - argparse choices guard this
        raise ConfigurationError(f"unknown study kind {args.kind!r}")
    report.print_lines()
    out = os.path.join(run_dir, "report.json")
    report.to_json(out)
    print(json.dumps({"run_dir": run_dir, "report": out, "all_passed": report.all_passed}))
    return 0


def cmd_export_plan(args) -> int:
    mu = _load_measure(args.mu)
    nu = _load_measure(args.nu)
    if args.slicer == "exact":
        plan = ot_assignment(mu, nu, args.p).plan
    else:
        f = _resolve_slicer(args.slicer, mu.dim, args.seed, _parse_ints(args.hidden))
        plan = lift_plan(f, mu, nu, args.p).plan
    plan_to_csv(plan, args.out)
    print(json.dumps({"written": args.out, "nonzeros": len(plan.nonzeros())}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sliceplan",
        description="Sliced transport plans: datasets, training, studies, exports.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic point cloud")
    g.add_argument("--family", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rotation", type=float, default=0.0)
    g.add_argument("--zoom", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=("csv", "json"), default=None)
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train a slicer on a measure pair")
    t.add_argument("--mu", required=True)
    t.add_argument("--nu", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--slicer", choices=("linear", "mlp"), default="mlp")
    t.add_argument("--hidden", default="64,64")
    t.add_argument("--slicer-seed", type=int, default=0)
    t.add_argument("--run-dir", default=None)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="sliced-plan cost of a slicer on a pair")
    e.add_argument("--mu", required=True)
    e.add_argument("--nu", required=True)
    e.add_argument("--slicer", default="random", help="checkpoint path, 'random', or 'random-mlp'")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--hidden", default="64,64")
    e.add_argument("--p", type=float, default=2.0)
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("study", help="run a study harness")
    s.add_argument("kind", choices=("drift", "minibatch", "amortized", "theory"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--quick", action="store_true")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--config", default=None)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--run-dir", default=None)
    s.set_defaults(fn=cmd_study)

    x = sub.add_parser("export-plan", help="write plan triples (i, j, mass) as CSV")
    x.add_argument("--mu", required=True)
    x.add_argument("--nu", required=True)
    x.add_argument("--slicer", default="exact", help="'exact', checkpoint path, 'random', 'random-mlp'")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--hidden", default="64,64")
    x.add_argument("--p", type=float, default=2.0)
    x.add_argument("--out", required=True)
    x.set_defaults(fn=cmd_export_plan)
    return parser


def _fail(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        return _fail(exc, 2)
    except (FileNotFoundError, ParseError) as exc:
        return _fail(exc, 3)
    except (
        UnsupportedInstanceError,
        UndefinedCorrelationError,
        InfeasibleRegimeError,
        FloatingPointError,
        np.linalg.LinAlgError,
    ) as exc:
        return _fail(exc, 4)


if __name__ == "__main__":
    sys.exit(main())
