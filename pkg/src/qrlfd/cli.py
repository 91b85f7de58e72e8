"""Command-line entry point.

Subcommands: grape, train, eval, wigner, sweep, print-config.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import (
    ALGORITHMS,
    TASKS,
    ConfigError,
    config_from_overrides,
    config_hash,
    default_config,
    load_config,
    resolve,
    to_yaml,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="YAML experiment config")
    p.add_argument("--seed", type=int, help="run this seed instead of the config's list")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--budget", type=int, help="environment episode budget")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrlfd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("grape", help="synthesise the demonstration on the nominal model"))
    _common(sub.add_parser("train", help="train on each seed in turn"))
    _common(sub.add_parser("sweep", help="train all seeds in parallel, one worker per seed"))

    p = sub.add_parser("eval", help="evaluate a saved policy, pulse file or ECD file")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)

    p = sub.add_parser("wigner", help="Wigner CSV of the target or of a control's final state")
    _common(p)
    p.add_argument("--control", help="pulse / ECD JSON or actor checkpoint; default: the target state")

    p = sub.add_parser("print-config", help="print a fully-resolved config")
    p.add_argument("--config")
    p.add_argument("--task", choices=TASKS, default="bell")
    p.add_argument("--algorithm", choices=ALGORITHMS, default="sacfd")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _load(args):
    overrides = list(getattr(args, "override", []) or [])
    if getattr(args, "budget", None) is not None:
        overrides.append(f"budget={args.budget}")
    if getattr(args, "out", None):
        overrides.append(f"output_dir={json.dumps(args.out)}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seeds=[{args.seed}]")
    if args.config:
        return load_config(args.config, overrides)
    base = {"task": args.task, "algorithm": args.algorithm}
    return config_from_overrides(overrides, base)


def _wigner(args, cfg) -> Path:
    from .experiment import build_env, policy_action
    from .model import phase_space_grid, wigner
    from .qmath import partial_trace_keep

    cfg = resolve(cfg)
    seed = cfg.seeds[0]
    env = build_env(cfg, seed)
    state = env.target if not args.control else env.final_state(policy_action(args.control, env))
    if state.dims == (2, 2):
        raise ConfigError("the Bell task has no oscillator mode to show", "task")
    rho = partial_trace_keep(state, len(state.dims) - 1)
    xs = np.linspace(-cfg.wigner_extent, cfg.wigner_extent, cfg.wigner_points)
    w = wigner(rho, phase_space_grid(cfg.wigner_extent, cfg.wigner_points))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / ("wigner_target.csv" if not args.control else "wigner_control.csv")
    io.write_wigner_csv(path, xs, xs, w, config_hash(cfg))
    return path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    from .experiment import RunFailure, ShapeMismatch, eval_agent, run_experiment, run_grape

    try:
        if args.command == "print-config":
            sys.stdout.write(io.header_line(config_hash(cfg)) + "\n" + to_yaml(resolve(cfg)))
        elif args.command == "grape":
            for seed in cfg.seeds:
                demo = run_grape(cfg, seed, cfg.output_dir)
                print(f"seed {seed}: nominal fidelity {demo.nominal_fidelity:.6f}, "
                      f"biased fidelity {demo.biased_fidelity:.6f}")
        elif args.command in ("train", "sweep"):
            workers = len(cfg.seeds) if args.command == "sweep" else 1
            out = run_experiment(cfg, workers=workers)
            print((out / "summary.json").read_text())
        elif args.command == "eval":
            print(json.dumps(eval_agent(args.checkpoint, cfg, args.episodes, cfg.seeds[0]), indent=1))
        elif args.command == "wigner":
            print(_wigner(args, cfg))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunFailure, ShapeMismatch, io.FormatError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
