"""Command line entry point: ``brpg run|episodic|imitate|evaluate``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .bench import (ExperimentConfig, Evaluator, emit_outputs, load_policy, run_experiment,
                    save_policy, summarize, with_overrides)

MODE_OF = {"run": "batch", "episodic": "episodic", "imitate": "imitate"}


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    mode = MODE_OF.get(args.command, cfg.mode)
    cfg = with_overrides(cfg, mode=mode, seed=args.seed, reps=getattr(args, "reps", None),
                         out=getattr(args, "out", None), workers=getattr(args, "workers", None))
    if mode == "imitate" and cfg.loss != "kl":
        cfg = with_overrides(cfg, loss="kl")
    return cfg


def _print_table(rows) -> None:
    print(f"{'method':<16}{'N':>6}{'beta':>6}{'mean_loss':>12}{'stderr':>10}{'psv':>10}")
    for r in rows:
        print(f"{r['method']:<16}{r['N']:>6}{r['beta']:>6g}{r['mean_loss']:>12.4f}"
              f"{r['stderr']:>10.4f}{r['psv']:>10.4f}")


def cmd_experiment(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out)
    results = run_experiment(cfg)
    emit_outputs(results, out, plots=cfg.plots and not args.no_plots)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    for row in results.rows:
        if row.rep == 0:
            save_policy(row.alpha, out / f"policy_{row.method}_N{row.N}.txt")
    _print_table(summarize(results))
    label = "optimal loss" if cfg.loss == "linear" else "initial loss"
    value = results.oracle if cfg.loss == "linear" else results.initial_loss
    print(f"{label}: {value:.4f}  ({results.failures} failed replications)")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    alpha = load_policy(args.policy)
    ev = Evaluator(cfg)
    loss = float(ev(alpha))
    print(f"true-model loss: {loss:.6f}")
    if cfg.loss == "linear":
        oracle = ev.oracle()
        print(f"optimal loss:    {oracle:.6f}  (gap {100 * (loss / oracle - 1):.2f}%)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brpg", description="Bayesian risk policy gradient experiments")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"run": "batch data benchmark (table of mean loss / psv)",
             "episodic": "alternate data collection and policy updates",
             "imitate": "KL imitation of an expert state distribution"}
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", "-c", help="YAML experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--reps", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, help="process pool size")
        sp.add_argument("--no-plots", action="store_true")
        sp.add_argument("-v", "--verbose", action="store_true")
        sp.set_defaults(func=cmd_experiment)
    sp = sub.add_parser("evaluate", help="true-model loss of a saved policy")
    sp.add_argument("policy")
    sp.add_argument("--config", "-c")
    sp.add_argument("--seed", type=int)
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
