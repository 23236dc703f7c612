"""End-to-end runs: expert generation, ICRL training, baselines, evaluation,
transfer and ablations. Every run writes into its own directory::

    run_dir/
      run_config.json              exact config + hash
      metrics__<method>__<tag>__seed<k>.csv
      constraint_iter<k>.json      constraint net after each outer iteration
      constraint_final.json
      policy_final.json
      recovery.json                grid environments only
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace
from itertools import product
import json
import logging
from pathlib import Path

import numpy as np

from .backward import (
    ConstraintNet,
    PairBatch,
    backward_phase,
    init_constraint_net,
    score_table,
)
from .baselines import bc_train, gc_train
from .checkpoints import load_constraint_net, save_constraint_net, save_policy
from .config import ForwardConfig, RunConfig, config_hash, config_to_dict
from .datasets import LintReport, read_dataset, write_dataset, lint_dataset
from .envs import Env, GridEnv, make_env
from .errors import DatasetError, NonConvergenceError
from .forward import PolicyBundle, collect_rollouts, init_bundle, solve_forward, true_cost, zero_cost
from .metrics import MetricsRecord, RecoveryReport, export_plot_data, metrics_filename, recovery_report, write_metrics
from .models import EnvMode, Trajectory

logger = logging.getLogger(__name__)


def seed_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def build_env(config: RunConfig, mode: EnvMode = EnvMode.NOMINAL, name: str | None = None) -> Env:
    return make_env(name or config.env.name, mode, **config.env.options())


def write_run_config(run_dir: Path, config: RunConfig) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "run_config.json"
    payload = {"config": config_to_dict(config), "config_hash": config_hash(config)}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


@dataclass(frozen=True, slots=True)
class ExpertResult:
    trajectories: tuple[Trajectory, ...]
    bundle: PolicyBundle
    lint: LintReport


def generate_expert(config: RunConfig, out_path: str | Path | None = None) -> ExpertResult:
    """Train on the true constraint in the constrained environment, then record clean rollouts.

    Raises :class:`NonConvergenceError` if the expert's cost does not reach
    the budget or no violation-free rollout can be recorded.
    """

    rng = seed_rng(config.seed)
    env = build_env(config, EnvMode.CONSTRAINED)
    logger.info(f"training expert on {env.spec.name} for {config.expert_forward_epochs} epochs")
    result = solve_forward(env, config.forward, rng, cost_fn=true_cost(env), epochs=config.expert_forward_epochs)
    if not result.converged:
        raise NonConvergenceError(f"expert policy on {env.spec.name} did not converge; dataset not exported")

    clean: list[Trajectory] = []
    for _ in range(10 * config.expert_rollouts):
        if len(clean) >= config.expert_rollouts:
            break
        batch = collect_rollouts(env, result.bundle, rng, config.forward, steps=1, deterministic=True)
        clean.extend(
            traj
            for traj in batch.trajectories
            if not any(env.true_violation(t.state, t.action) for t in traj.transitions)
        )
    trajectories = tuple(clean[: config.expert_rollouts])
    if len(trajectories) < config.expert_rollouts:
        raise NonConvergenceError(
            f"only {len(trajectories)} of {config.expert_rollouts} expert rollouts were violation-free"
        )

    lint = lint_dataset(trajectories, env)
    if not lint.ok:
        raise DatasetError(f"expert dataset failed lint: {lint.problems[:3]}")
    if out_path is not None:
        write_dataset(out_path, env, trajectories, seed=config.seed, config_hash=config_hash(config))
    returns = [traj.total_reward for traj in trajectories]
    logger.info(f"expert: {len(trajectories)} rollouts, mean return {np.mean(returns):.3f}")
    return ExpertResult(trajectories, result.bundle, lint)


def evaluate(
    bundle: PolicyBundle,
    env: Env,
    episodes: int,
    rng: np.random.Generator,
    *,
    deterministic: bool = False,
    timestep: int = 0,
    iteration: int = 0,
) -> MetricsRecord:
    """True reward from constrained-mode episodes; violations per step from nominal-mode ones."""
    constrained = env.with_mode(EnvMode.CONSTRAINED)
    nominal = env.with_mode(EnvMode.NOMINAL)
    # Advantages are computed but unused here; only returns and violations matter.
    evaluator = ForwardConfig()

    true_returns: list[float] = []
    for _ in range(episodes):
        batch = collect_rollouts(constrained, bundle, rng, evaluator, steps=1, deterministic=deterministic)
        true_returns.extend(batch.episode_returns.tolist())

    violations = steps = 0
    nominal_returns: list[float] = []
    for _ in range(episodes):
        batch = collect_rollouts(nominal, bundle, rng, evaluator, steps=1, deterministic=deterministic)
        nominal_returns.extend(batch.episode_returns.tolist())
        for traj in batch.trajectories:
            steps += len(traj)
            violations += sum(nominal.true_violation(t.state, t.action) for t in traj.transitions)

    return MetricsRecord(
        timestep=timestep,
        true_reward=float(np.mean(true_returns)),
        violation_rate=violations / steps if steps else 0.0,
        lam=bundle.lam,
        iteration=iteration,
        nominal_reward=float(np.mean(nominal_returns)),
    )


def load_expert(config: RunConfig, env: Env, expert: Sequence[Trajectory] | None) -> tuple[Trajectory, ...]:
    if expert is not None:
        trajectories = tuple(expert)
    elif config.expert_path:
        dataset = read_dataset(config.expert_path)
        if dataset.env_name != env.spec.name:
            raise DatasetError(f"expert dataset is for '{dataset.env_name}', run is for '{env.spec.name}'")
        trajectories = dataset.trajectories
    else:
        raise DatasetError("no expert dataset: set expert_path or run the 'expert' command first")
    if not trajectories:
        raise DatasetError("expert dataset is empty")
    return trajectories


@dataclass(frozen=True, slots=True)
class RunResult:
    run_dir: Path
    net: ConstraintNet | None
    bundle: PolicyBundle
    records: tuple[MetricsRecord, ...]
    metrics_path: Path


class _RunRecorder:
    """Keeps metrics and checkpoints on disk as a run progresses."""

    def __init__(self, run_dir: Path, config: RunConfig, env: Env):
        self.run_dir = run_dir
        self.config = config
        self.env = env
        self.hash = config_hash(config)
        self.records: list[MetricsRecord] = []
        self.metrics_path = run_dir / metrics_filename(
            config.method,
            config.seed,
            use_is=config.ablation.use_importance_sampling,
            use_es=config.ablation.use_early_stopping,
            backward_iterations=config.backward.iterations,
        )
        write_run_config(run_dir, config)

    def add(self, record: MetricsRecord) -> None:
        self.records.append(record)
        write_metrics(self.metrics_path, self.records)
        logger.info(
            f"iteration {record.iteration}: timestep={record.timestep} true_reward={record.true_reward:.3f} "
            f"violation_rate={record.violation_rate:.4f} lam={record.lam:.4f}"
        )

    def save_net(self, net: ConstraintNet, name: str) -> None:
        save_constraint_net(self.run_dir / f"{name}.json", net, env_name=self.env.spec.name, config_hash=self.hash)

    def finish(self, net: ConstraintNet | None, bundle: PolicyBundle) -> RunResult:
        if net is not None:
            self.save_net(net, "constraint_final")
        save_policy(self.run_dir / "policy_final.json", bundle, env_name=self.env.spec.name, config_hash=self.hash)
        return RunResult(self.run_dir, net, bundle, tuple(self.records), self.metrics_path)


def _evaluate(config: RunConfig, bundle: PolicyBundle, env: Env, rng: np.random.Generator, timestep: int, iteration: int) -> MetricsRecord:
    return evaluate(
        bundle,
        env,
        config.eval_episodes,
        rng,
        deterministic=config.deterministic_eval,
        timestep=timestep,
        iteration=iteration,
    )


def run_icrl(config: RunConfig, out_dir: str | Path, expert: Sequence[Trajectory] | None = None) -> RunResult:
    """Alternate forward and backward steps ``config.iterations`` times.

    Metrics and per-iteration constraint checkpoints are written as they are
    produced, so a failing phase leaves the partial run on disk.
    """

    run_dir = Path(out_dir)
    rng = seed_rng(config.seed)
    env = build_env(config)
    expert_trajs = load_expert(config, env, expert)
    recorder = _RunRecorder(run_dir, config, env)

    net = init_constraint_net(env, config.backward, rng)
    bundle = init_bundle(env, config.forward, rng)
    expert_pairs = PairBatch.from_trajectories(env, expert_trajs)
    recorder.add(_evaluate(config, bundle, env, rng, 0, 0))
    timesteps = 0

    for iteration in range(1, config.iterations + 1):
        forward = solve_forward(env, config.forward, rng, cost_fn=net.cost_fn(env), bundle=bundle)
        bundle = forward.bundle
        timesteps += forward.timesteps

        batch = collect_rollouts(
            env, bundle, rng, config.forward, steps=config.backward.nominal_steps, cost_fn=net.cost_fn(env)
        )
        timesteps += batch.size
        nominal_pairs = PairBatch.from_trajectories(env, batch.trajectories)
        net, report = backward_phase(
            net,
            expert_pairs,
            nominal_pairs,
            config.backward,
            rng,
            use_importance_sampling=config.ablation.use_importance_sampling,
            use_early_stopping=config.ablation.use_early_stopping,
        )
        recorder.save_net(net, f"constraint_iter{iteration}")
        record = _evaluate(config, bundle, env, rng, timesteps, iteration)
        recorder.add(
            replace(
                record,
                forward_bound=report.forward_bound,
                reverse_bound=report.reverse_bound,
                backward_iterations=report.iterations,
            )
        )

    if isinstance(env, GridEnv):
        write_recovery_report(run_dir, constraint_recovery(net, env, expert_trajs))
    return recorder.finish(net, bundle)


def run_nominal(config: RunConfig, out_dir: str | Path) -> RunResult:
    """Plain PPO on the nominal environment; no constraint at all."""
    rng = seed_rng(config.seed)
    env = build_env(config)
    recorder = _RunRecorder(Path(out_dir), config, env)
    bundle = replace(init_bundle(env, config.forward, rng), lam=0.0)
    recorder.add(_evaluate(config, bundle, env, rng, 0, 0))
    timesteps = 0
    for iteration in range(1, config.iterations + 1):
        forward = solve_forward(env, config.forward, rng, cost_fn=zero_cost, bundle=bundle, update_lambda=False)
        bundle = forward.bundle
        timesteps += forward.timesteps
        recorder.add(_evaluate(config, bundle, env, rng, timesteps, iteration))
    return recorder.finish(None, bundle)


def run_bc(config: RunConfig, out_dir: str | Path, expert: Sequence[Trajectory] | None = None) -> RunResult:
    """Classifier trained once against a frozen nominal dataset, then a constrained forward solve."""
    rng = seed_rng(config.seed)
    env = build_env(config)
    expert_trajs = load_expert(config, env, expert)
    recorder = _RunRecorder(Path(out_dir), config, env)

    nominal_bundle = replace(init_bundle(env, config.forward, rng), lam=0.0)
    nominal = solve_forward(env, config.forward, rng, bundle=nominal_bundle, update_lambda=False)
    batch = collect_rollouts(env, nominal.bundle, rng, config.forward, steps=config.backward.nominal_steps)
    timesteps = nominal.timesteps + batch.size
    net = init_constraint_net(env, config.backward, rng)
    result = bc_train(
        net,
        PairBatch.from_trajectories(env, expert_trajs),
        PairBatch.from_trajectories(env, batch.trajectories),
        config.bc_epochs,
        config.backward.learning_rate,
    )
    net = result.net
    recorder.save_net(net, "constraint_iter0")

    bundle = init_bundle(env, config.forward, rng)
    recorder.add(_evaluate(config, bundle, env, rng, timesteps, 0))
    for iteration in range(1, config.iterations + 1):
        forward = solve_forward(env, config.forward, rng, cost_fn=net.cost_fn(env), bundle=bundle)
        bundle = forward.bundle
        timesteps += forward.timesteps
        recorder.add(_evaluate(config, bundle, env, rng, timesteps, iteration))
    return recorder.finish(net, bundle)


def run_gc(config: RunConfig, out_dir: str | Path, expert: Sequence[Trajectory] | None = None) -> RunResult:
    rng = seed_rng(config.seed)
    env = build_env(config)
    expert_trajs = load_expert(config, env, expert)
    recorder = _RunRecorder(Path(out_dir), config, env)

    discriminator = init_constraint_net(env, config.backward, rng)
    bundle = replace(init_bundle(env, config.forward, rng), lam=0.0)
    optimizer = None
    recorder.add(_evaluate(config, bundle, env, rng, 0, 0))
    timesteps = 0
    for iteration in range(1, config.iterations + 1):
        result = gc_train(
            env,
            expert_trajs,
            config,
            rng,
            iterations=config.forward.forward_epochs,
            discriminator=discriminator,
            bundle=bundle,
            optimizer=optimizer,
        )
        discriminator, bundle, optimizer = result.discriminator, result.bundle, result.optimizer
        timesteps += result.timesteps
        recorder.add(_evaluate(config, bundle, env, rng, timesteps, iteration))
    return recorder.finish(discriminator, bundle)


def train(config: RunConfig, out_dir: str | Path, expert: Sequence[Trajectory] | None = None) -> RunResult:
    logger.info(f"train: method={config.method} env={config.env.name} seed={config.seed} out={out_dir}")
    if config.method == "icrl":
        return run_icrl(config, out_dir, expert)
    if config.method == "bc":
        return run_bc(config, out_dir, expert)
    if config.method == "gc":
        return run_gc(config, out_dir, expert)
    return run_nominal(config, out_dir)


def transfer(config: RunConfig, out_dir: str | Path, net: ConstraintNet | None = None) -> RunResult:
    """Solve the forward problem on a new environment with a frozen constraint net.

    The net is re-bound to the target's features by name; missing names
    raise :class:`FeatureMismatchError`.
    """

    target_name = config.transfer.target_env or config.env.name
    if net is None:
        if not config.transfer.source_checkpoint:
            raise DatasetError("transfer needs transfer.source_checkpoint")
        net, _ = load_constraint_net(config.transfer.source_checkpoint)
    config = replace(config, env=replace(config.env, name=target_name))
    env = build_env(config)
    net = net.bind(env)

    rng = seed_rng(config.seed)
    recorder = _RunRecorder(Path(out_dir), config, env)
    bundle = init_bundle(env, config.forward, rng)
    recorder.add(_evaluate(config, bundle, env, rng, 0, 0))
    timesteps = 0
    for iteration in range(1, config.iterations + 1):
        forward = solve_forward(env, config.forward, rng, cost_fn=net.cost_fn(env), bundle=bundle)
        bundle = forward.bundle
        timesteps += forward.timesteps
        recorder.add(_evaluate(config, bundle, env, rng, timesteps, iteration))
    return recorder.finish(net, bundle)


def ablation_tag(use_is: bool, use_es: bool, backward_iterations: int) -> str:
    return f"is{int(use_is)}_es{int(use_es)}_b{backward_iterations}"


def ablate(config: RunConfig, out_dir: str | Path, expert: Sequence[Trajectory] | None = None) -> list[Path]:
    """All four importance-sampling / early-stopping combinations for every configured seed."""
    root = Path(out_dir)
    run_dirs: list[Path] = []
    for seed in config.ablation.seeds:
        seeded = replace(config, seed=seed, method="icrl")
        seed_expert = expert
        if seed_expert is None and not config.expert_path:
            seed_expert = generate_expert(seeded, root / f"expert_seed{seed}.jsonl").trajectories
        for use_is, use_es in product((True, False), repeat=2):
            run_config = replace(
                seeded,
                ablation=replace(seeded.ablation, use_importance_sampling=use_is, use_early_stopping=use_es),
            )
            run_dir = root / ablation_tag(use_is, use_es, config.backward.iterations) / f"seed{seed}"
            run_icrl(run_config, run_dir, seed_expert)
            run_dirs.append(run_dir)
    export_plot_data(root)
    return run_dirs


def constraint_recovery(net: ConstraintNet, env: GridEnv, expert: Sequence[Trajectory], threshold: float = 0.5) -> RecoveryReport:
    visited = {env.cell(t.state) for traj in expert for t in traj.transitions}
    visited |= {env.cell(traj.transitions[-1].next_state) for traj in expert}
    return recovery_report(score_table(net, env), env.violation_table(), visited, threshold)


def write_recovery_report(run_dir: Path, report: RecoveryReport) -> Path:
    path = run_dir / "recovery.json"
    payload = {
        "precision": report.precision,
        "recall": report.recall,
        "threshold": report.threshold,
        "true_cells": list(report.true_cells),
        "predicted_cells": list(report.predicted_cells),
        "cell_scores": list(report.cell_scores),
    }
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    logger.info(f"constraint recovery: precision={report.precision:.3f} recall={report.recall:.3f}")
    return path
