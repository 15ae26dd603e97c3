"""Command-line entry point; every subcommand prints one JSON line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, RunConfig


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.out:
        changes["out"] = args.out
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def cmd_mab(args) -> dict:
    result = harness.run_mab_study(seeds=args.seeds, horizon=args.horizon, out=args.out or "runs/mab")
    return {"final_regret": {name: float(r["mean"][-1]) for name, r in result.items()},
            "out": str(Path(args.out or "runs/mab") / "regret.csv")}


def _phase_line(summary: dict, out: str) -> dict:
    keys = ("phase", "steps", "episodes", "coverage", "window_size", "final_eval_return", "critic_loss",
            "actor_loss", "query_loss", "kl_to_pt")
    return {**{k: summary[k] for k in keys if k in summary}, "out": out}


def cmd_pretrain(args) -> dict:
    cfg = _load_config(args)
    res = harness.run_pretrain(cfg, cfg.out)
    return _phase_line(res["summary"], cfg.out)


def cmd_finetune(args) -> dict:
    cfg = _load_config(args)
    res = harness.run_finetune(cfg, args.from_ckpt, cfg.out)
    return _phase_line(res["summary"], cfg.out)


def cmd_distill(args) -> dict:
    cfg = _load_config(args)
    res = harness.run_distill(cfg, args.from_ckpt, cfg.out)
    return {**res["report"], "out": cfg.out}


def cmd_eval(args) -> dict:
    res = harness.run_eval(args.from_ckpt, args.episodes, args.task)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "eval.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    return res


def cmd_metrics(args) -> dict:
    res = harness.collect_metrics(args.runs)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "metrics.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    return res


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfref", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mab", help="bandit regret study")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mab)

    for name, func, needs_ckpt in (("pretrain", cmd_pretrain, False), ("finetune", cmd_finetune, True),
                                   ("distill", cmd_distill, True)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if needs_ckpt:
            p.add_argument("--from", dest="from_ckpt", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("eval")
    p.add_argument("--from", dest="from_ckpt", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--task")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics")
    p.add_argument("--runs", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        result = args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(json.dumps({"error": str(exc)}))
        return 2
    print(json.dumps(_jsonable(result), sort_keys=True))
    return 0
