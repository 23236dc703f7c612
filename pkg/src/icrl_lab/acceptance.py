"""Threshold checks over full training runs.

Each check trains through :mod:`icrl_lab.driver` for every seed, averages
the final evaluation across seeds and compares it with fixed thresholds.
A seed takes minutes, so the test suite only runs these under ``-m slow``.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, replace
import json
import logging
from pathlib import Path
import time
from typing import Any

import numpy as np

from . import driver
from .backward import ConstraintNet
from .baselines import gc_train
from .config import RunConfig, apply_overrides, config_from_dict
from .metrics import METRIC_FIELDS, MetricsRecord, read_metrics
from .models import Trajectory

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
SECONDS_PER_SEED = 30 * 60


@dataclass(frozen=True, slots=True)
class CheckResult:
    name: str
    measured: dict[str, float]
    failures: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.failures


class _Thresholds:
    """Collects measured values and the comparisons that failed."""

    def __init__(self, name: str):
        self.name = name
        self.measured: dict[str, float] = {}
        self.failures: list[str] = []

    def above(self, key: str, value: float, bound: float) -> None:
        self.measured[key] = float(value)
        if not value > bound:
            self.failures.append(f"{key}={value:.4f} not > {bound:.4f}")

    def at_least(self, key: str, value: float, bound: float) -> None:
        self.measured[key] = float(value)
        if not value >= bound:
            self.failures.append(f"{key}={value:.4f} not >= {bound:.4f}")

    def below(self, key: str, value: float, bound: float) -> None:
        self.measured[key] = float(value)
        if not value < bound:
            self.failures.append(f"{key}={value:.4f} not < {bound:.4f}")

    def result(self) -> CheckResult:
        result = CheckResult(self.name, dict(self.measured), tuple(self.failures))
        status = "passed" if result.passed else f"FAILED ({'; '.join(result.failures)})"
        logger.info(f"acceptance {self.name}: {status}")
        return result


def run_config(env: str, seed: int, overrides: dict[str, Any] | None = None, **run: Any) -> RunConfig:
    """Per-environment defaults, then ``overrides`` (dotted keys), then run-level fields."""
    merged = {**(overrides or {}), "env.name": env, "seed": seed, **run}
    return config_from_dict(apply_overrides({}, merged))


def _final(records: Sequence[MetricsRecord]) -> MetricsRecord:
    return records[-1]


def _expert(config: RunConfig, out_dir: Path) -> tuple[Trajectory, ...]:
    return driver.generate_expert(config, out_dir / f"expert_{config.env.name}_seed{config.seed}.jsonl").trajectories


def _expert_return(expert: Sequence[Trajectory]) -> float:
    return float(np.mean([traj.total_reward for traj in expert]))


def check_reward_hacking(out_dir: str | Path, seeds: Sequence[int] = DEFAULT_SEEDS, overrides: dict[str, Any] | None = None) -> CheckResult:
    """LapGridWorld: the nominal agent cheats, the ICRL agent laps like the expert."""
    root = Path(out_dir) / "reward_hacking"
    expert_returns, nominal_returns, nominal_violations = [], [], []
    icrl_rewards, icrl_violations, durations = [], [], []
    for seed in seeds:
        started = time.perf_counter()
        config = run_config("lap_grid", seed, overrides)
        expert = _expert(config, root)
        expert_returns.append(_expert_return(expert))
        nominal = _final(driver.train(replace(config, method="nominal"), root / "nominal" / f"seed{seed}").records)
        icrl = _final(driver.train(replace(config, method="icrl"), root / "icrl" / f"seed{seed}", expert).records)
        nominal_returns.append(nominal.nominal_reward)
        nominal_violations.append(nominal.violation_rate)
        icrl_rewards.append(icrl.true_reward)
        icrl_violations.append(icrl.violation_rate)
        durations.append(time.perf_counter() - started)

    check = _Thresholds("reward_hacking")
    expert_return = float(np.mean(expert_returns))
    check.measured["expert_return"] = expert_return
    check.above("nominal_nominal_reward", float(np.mean(nominal_returns)), expert_return)
    check.above("nominal_violation_rate", float(np.mean(nominal_violations)), 0.3)
    check.at_least("icrl_true_reward", float(np.mean(icrl_rewards)), expert_return - 0.1 * abs(expert_return))
    check.below("icrl_violation_rate", float(np.mean(icrl_violations)), 0.05)
    check.below("max_seconds_per_seed", max(durations), SECONDS_PER_SEED)
    return check.result()


def check_bridges_recovery(
    out_dir: str | Path, seeds: Sequence[int] = DEFAULT_SEEDS, overrides: dict[str, Any] | None = None
) -> CheckResult:
    """BridgesGridWorld: ``zeta < 0.5`` marks the lower bridge and nothing the expert used."""
    root = Path(out_dir) / "bridges_recovery"
    precisions, recalls = [], []
    for seed in seeds:
        config = run_config("bridges", seed, overrides, method="icrl")
        expert = _expert(config, root)
        result = driver.train(config, root / "icrl" / f"seed{seed}", expert)
        report = driver.constraint_recovery(result.net, driver.build_env(config), expert)
        precisions.append(report.precision)
        recalls.append(report.recall)

    check = _Thresholds("bridges_recovery")
    check.at_least("precision", float(np.mean(precisions)), 0.9)
    check.at_least("recall", float(np.mean(recalls)), 0.9)
    return check.result()


def _gc_transfer(config: RunConfig, discriminator: ConstraintNet, expert: Sequence[Trajectory]) -> MetricsRecord:
    """Re-solve ``config``'s environment on ``r + log zeta`` with the discriminator frozen."""
    env = driver.build_env(config)
    rng = driver.seed_rng(config.seed)
    result = gc_train(
        env,
        expert,
        config,
        rng,
        discriminator=discriminator.bind(env),
        train_discriminator=False,
    )
    return driver.evaluate(result.bundle, env, config.eval_episodes, rng, deterministic=config.deterministic_eval)


def check_transfer(out_dir: str | Path, seeds: Sequence[int] = DEFAULT_SEEDS, overrides: dict[str, Any] | None = None) -> CheckResult:
    """PointMass constraint learned, then carried frozen to PointMassBroken."""
    root = Path(out_dir) / "transfer"
    icrl_violations, nominal_violations, moved_violations, moved_rewards = [], [], [], []
    for seed in seeds:
        config = run_config("point_mass", seed, overrides)
        expert = _expert(config, root)
        icrl = driver.train(replace(config, method="icrl"), root / "icrl" / f"seed{seed}", expert)
        nominal = driver.train(replace(config, method="nominal"), root / "nominal" / f"seed{seed}")
        target = run_config("point_mass_broken", seed, overrides)
        moved = driver.transfer(target, root / "broken" / f"seed{seed}", icrl.net)
        icrl_violations.append(_final(icrl.records).violation_rate)
        nominal_violations.append(_final(nominal.records).violation_rate)
        moved_violations.append(_final(moved.records).violation_rate)
        moved_rewards.append(_final(moved.records).true_reward)

    check = _Thresholds("transfer")
    check.below("icrl_violation_rate", float(np.mean(icrl_violations)), 0.05)
    check.above("nominal_violation_rate", float(np.mean(nominal_violations)), 0.3)
    check.below("transfer_violation_rate", float(np.mean(moved_violations)), 0.05)
    check.above("transfer_true_reward", float(np.mean(moved_rewards)), 0.0)
    return check.result()


def _final_metrics(run_dir: Path) -> MetricsRecord:
    return _final(read_metrics(next(run_dir.glob("metrics__*.csv"))))


def check_ablation_trend(
    out_dir: str | Path, seeds: Sequence[int] = DEFAULT_SEEDS, overrides: dict[str, Any] | None = None
) -> CheckResult:
    """LapGridWorld with B=10: dropping both IS and early stopping is no better than the full method."""
    root = Path(out_dir) / "ablation"
    settings = {**(overrides or {}), "backward.iterations": 10, "ablation.seeds": list(seeds)}
    config = run_config("lap_grid", seeds[0], settings)
    run_dirs = driver.ablate(config, root)

    full = [_final_metrics(d).violation_rate for d in run_dirs if d.parent.name == driver.ablation_tag(True, True, 10)]
    bare = [_final_metrics(d).violation_rate for d in run_dirs if d.parent.name == driver.ablation_tag(False, False, 10)]
    check = _Thresholds("ablation_trend")
    check.measured["full_violation_rate"] = float(np.mean(full))
    check.at_least("bare_violation_rate", float(np.mean(bare)), float(np.mean(full)))
    return check.result()


def check_baseline_parity(
    out_dir: str | Path, seeds: Sequence[int] = DEFAULT_SEEDS, overrides: dict[str, Any] | None = None
) -> CheckResult:
    """BC and GC share the metrics schema; GC matches ICRL on LapGridWorld and falls behind after transfer."""
    root = Path(out_dir) / "baselines"
    icrl_rewards, gc_rewards, icrl_moved, gc_moved = [], [], [], []
    schema_ok = True
    for seed in seeds:
        lap = run_config("lap_grid", seed, overrides)
        expert = _expert(lap, root)
        runs = {
            method: driver.train(replace(lap, method=method), root / "lap" / method / f"seed{seed}", expert)
            for method in ("icrl", "gc", "bc")
        }
        for run in runs.values():
            header = run.metrics_path.read_text(encoding="utf-8").splitlines()[0]
            schema_ok &= tuple(header.split(",")) == METRIC_FIELDS
        icrl_rewards.append(_final(runs["icrl"].records).true_reward)
        gc_rewards.append(_final(runs["gc"].records).true_reward)

        point = run_config("point_mass", seed, overrides)
        point_expert = _expert(point, root)
        icrl = driver.train(replace(point, method="icrl"), root / "point" / "icrl" / f"seed{seed}", point_expert)
        gc = driver.train(replace(point, method="gc"), root / "point" / "gc" / f"seed{seed}", point_expert)
        target = run_config("point_mass_broken", seed, overrides)
        icrl_moved.append(_final(driver.transfer(target, root / "broken" / "icrl" / f"seed{seed}", icrl.net).records).true_reward)
        gc_moved.append(_gc_transfer(target, gc.net, point_expert).true_reward)

    check = _Thresholds("baseline_parity")
    check.at_least("same_metrics_schema", float(schema_ok), 1.0)
    icrl_reward = float(np.mean(icrl_rewards))
    check.measured["icrl_true_reward"] = icrl_reward
    check.below("gc_relative_gap", abs(float(np.mean(gc_rewards)) - icrl_reward) / max(abs(icrl_reward), 1e-8), 0.15)
    check.measured["gc_transfer_true_reward"] = float(np.mean(gc_moved))
    check.above("icrl_transfer_true_reward", float(np.mean(icrl_moved)), float(np.mean(gc_moved)))
    return check.result()


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "reward_hacking": check_reward_hacking,
    "bridges_recovery": check_bridges_recovery,
    "transfer": check_transfer,
    "ablation_trend": check_ablation_trend,
    "baseline_parity": check_baseline_parity,
}


def run_checks(
    names: Sequence[str],
    out_dir: str | Path,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    overrides: dict[str, Any] | None = None,
) -> list[CheckResult]:
    """Run the named checks and write ``acceptance.json`` under ``out_dir``."""
    root = Path(out_dir)
    results = [CHECKS[name](root, seeds, overrides) for name in names]
    root.mkdir(parents=True, exist_ok=True)
    payload = [{**asdict(r), "passed": r.passed} for r in results]
    (root / "acceptance.json").write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return results

