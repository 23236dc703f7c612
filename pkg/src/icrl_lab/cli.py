"""Command-line entry point: ``icrl-lab <command> [options]``.

Exit codes: 0 success, 2 bad configuration, 3 non-convergence,
4 dataset or I/O problem, 1 anything else raised by the package.
"""

from __future__ import annotations

import argparse
from collections.abc import Sequence
import json
import logging
import os
from pathlib import Path
import sys
from typing import Any

from . import driver
from .acceptance import CHECKS, DEFAULT_SEEDS, run_checks
from .checkpoints import load_policy
from .config import METHODS, RunConfig, load_config
from .datasets import lint_dataset, read_dataset
from .envs import ENV_REGISTRY
from .errors import IcrlLabError
from .metrics import export_plot_data
from .models import EnvMode

logger = logging.getLogger("icrl_lab")

LOG_LEVEL_ENV_VAR = "ICRL_LAB_LOG_LEVEL"


def _add_common(parser: argparse.ArgumentParser, *, seed_required: bool = False) -> None:
    parser.add_argument("--config", default=None, help="YAML config file (default: $ICRL_LAB_CONFIG or config.yaml)")
    parser.add_argument("--seed", type=int, default=None, required=seed_required)
    parser.add_argument("--env", choices=sorted(ENV_REGISTRY), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icrl-lab", description="Inverse constrained RL laboratory")
    parser.add_argument("--log-level", default=None, help=f"logging level (default: ${LOG_LEVEL_ENV_VAR} or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("expert", help="train an expert on the true constraint and write its dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset path (JSON lines)")
    p.add_argument("--rollouts", type=int, default=None)

    p = sub.add_parser("lint", help="check an expert dataset against an environment")
    _add_common(p)
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("train", help="run ICRL or a baseline")
    _add_common(p, seed_required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--expert", default=None, help="expert dataset path")
    p.add_argument("--iterations", type=int, default=None)

    p = sub.add_parser("transfer", help="solve a new environment with a frozen constraint net")
    _add_common(p)
    p.add_argument("--source", required=True, help="constraint checkpoint")
    p.add_argument("--target-env", required=True, choices=sorted(ENV_REGISTRY))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--iterations", type=int, default=None)

    p = sub.add_parser("evaluate", help="evaluate a saved policy")
    _add_common(p)
    p.add_argument("--policy", required=True, help="policy checkpoint")
    p.add_argument("--episodes", type=int, default=None)

    p = sub.add_parser("export", help="write plot-ready CSVs for a run directory")
    p.add_argument("--run-dir", required=True)

    p = sub.add_parser("ablate", help="importance-sampling / early-stopping ablation over seeds")
    _add_common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    p.add_argument("--expert", default=None)

    p = sub.add_parser("acceptance", help="full training runs checked against fixed thresholds")
    p.add_argument("--checks", nargs="+", choices=sorted(CHECKS), default=sorted(CHECKS))
    p.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
    p.add_argument("--out-dir", required=True)
    return parser


def _configure_logging(level: str | None) -> None:
    name = (level or os.getenv(LOG_LEVEL_ENV_VAR) or "INFO").upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load(args: argparse.Namespace, **overrides: Any) -> RunConfig:
    return load_config(args.config, {"seed": args.seed, "env.name": args.env, **overrides})


def _cmd_expert(args: argparse.Namespace) -> int:
    config = _load(args, expert_rollouts=args.rollouts)
    result = driver.generate_expert(config, args.out)
    print(f"wrote {len(result.trajectories)} expert trajectories to {args.out}")
    return 0


def _cmd_lint(args: argparse.Namespace) -> int:
    config = _load(args)
    dataset = read_dataset(args.dataset)
    env = driver.build_env(config, EnvMode.CONSTRAINED, name=args.env or dataset.env_name)
    report = lint_dataset(dataset.trajectories, env)
    for problem in report.problems:
        print(problem)
    print(f"{report.trajectories} trajectories, {report.transitions} transitions, {report.violations} violations")
    return 0 if report.ok else 4


def _cmd_train(args: argparse.Namespace) -> int:
    config = _load(args, method=args.method, expert_path=args.expert, iterations=args.iterations)
    result = driver.train(config, args.out_dir)
    print(f"metrics written to {result.metrics_path}")
    return 0


def _cmd_transfer(args: argparse.Namespace) -> int:
    config = _load(
        args,
        **{
            "env.name": args.target_env,
            "transfer.source_checkpoint": args.source,
            "transfer.target_env": args.target_env,
            "iterations": args.iterations,
        },
    )
    result = driver.transfer(config, args.out_dir)
    print(f"metrics written to {result.metrics_path}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load(args, eval_episodes=args.episodes)
    bundle, meta = load_policy(args.policy, config.forward)
    env = driver.build_env(config, name=args.env or meta.get("env"))
    record = driver.evaluate(
        bundle, env, config.eval_episodes, driver.seed_rng(config.seed), deterministic=config.deterministic_eval
    )
    print(json.dumps({"true_reward": record.true_reward, "violation_rate": record.violation_rate, "nominal_reward": record.nominal_reward}))
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    long_path, agg_path = export_plot_data(args.run_dir)
    print(f"{long_path}\n{agg_path}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    config = _load(args, expert_path=args.expert, **{"ablation.seeds": args.seeds})
    run_dirs = driver.ablate(config, args.out_dir)
    print(f"{len(run_dirs)} runs under {Path(args.out_dir)}")
    return 0


def _cmd_acceptance(args: argparse.Namespace) -> int:
    results = run_checks(args.checks, args.out_dir, args.seeds)
    for result in results:
        status = "ok" if result.passed else "FAILED: " + "; ".join(result.failures)
        print(f"{result.name}: {status}")
    return 0 if all(r.passed for r in results) else 1


_COMMANDS = {
    "expert": _cmd_expert,
    "lint": _cmd_lint,
    "train": _cmd_train,
    "transfer": _cmd_transfer,
    "evaluate": _cmd_evaluate,
    "export": _cmd_export,
    "ablate": _cmd_ablate,
    "acceptance": _cmd_acceptance,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)
    try:
        return _COMMANDS[args.command](args)
    except IcrlLabError as exc:
        logger.error(str(exc))
        return exc.exit_code
    except OSError as exc:
        logger.error(f"I/O error: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
