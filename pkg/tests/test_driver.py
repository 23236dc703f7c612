import json

import numpy as np
import pytest

from icrl_lab.backward import init_constraint_net, permissive_constraint_net
from icrl_lab.checkpoints import load_constraint_net, save_constraint_net
from icrl_lab.config import AblationConfig, BackwardConfig, EnvConfig, ForwardConfig, RunConfig, TransferConfig, config_hash
from icrl_lab.datasets import read_dataset, write_dataset
from icrl_lab.driver import (
    ablate,
    ablation_tag,
    constraint_recovery,
    evaluate,
    generate_expert,
    seed_rng,
    train,
    transfer,
)
from icrl_lab.envs import make_env
from icrl_lab.errors import DatasetError, FeatureMismatchError
from icrl_lab.forward import init_bundle
from icrl_lab.metrics import read_metrics
from icrl_lab.models import Trajectory


def _tiny(env: str = "two_path", **kwargs) -> RunConfig:
    defaults = dict(
        env=EnvConfig(name=env),
        iterations=1,
        eval_episodes=1,
        bc_epochs=2,
        expert_forward_epochs=1,
        forward=ForwardConfig(hidden_sizes=(8,), rollout_steps=16, batch_size=16, ppo_epochs=1, forward_epochs=1),
        backward=BackwardConfig(hidden_sizes=(4,), iterations=2, nominal_steps=8),
    )
    defaults.update(kwargs)
    return RunConfig(**defaults)


def _upper_path_expert() -> list[Trajectory]:
    env = make_env("two_path")
    state = env.reset()
    transitions = []
    for action in (0, 0):
        tr = env.step(state, action)
        transitions.append(tr)
        state = tr.next_state
    return [Trajectory(tuple(transitions))]


def test_seed_rng_is_reproducible() -> None:
    assert seed_rng(3).random() == seed_rng(3).random()
    assert seed_rng(3).random() != seed_rng(4).random()


def test_zero_iterations_writes_one_metrics_row(tmp_path) -> None:
    result = train(_tiny(iterations=0), tmp_path, _upper_path_expert())
    assert len(read_metrics(result.metrics_path)) == 1
    assert result.records[0].timestep == 0
    assert (tmp_path / "policy_final.json").exists()
    assert (tmp_path / "constraint_final.json").exists()


def test_icrl_run_writes_its_artifacts(tmp_path) -> None:
    config = _tiny()
    result = train(config, tmp_path, _upper_path_expert())

    assert result.metrics_path.name == "metrics__icrl__is1_es1_b2__seed0.csv"
    records = read_metrics(result.metrics_path)
    assert [r.iteration for r in records] == [0, 1]
    assert records[1].timestep > records[0].timestep
    assert 1 <= records[1].backward_iterations <= 2
    assert all(0.0 <= r.violation_rate <= 1.0 for r in records)

    saved = json.loads((tmp_path / "run_config.json").read_text(encoding="utf-8"))
    assert saved["config_hash"] == config_hash(config)
    load_constraint_net(tmp_path / "constraint_iter1.json")

    recovery = json.loads((tmp_path / "recovery.json").read_text(encoding="utf-8"))
    assert recovery["true_cells"] == [2]
    assert len(recovery["cell_scores"]) == 4


def test_ablation_flags_reach_the_metrics_filename(tmp_path) -> None:
    config = _tiny(iterations=0, seed=3, ablation=AblationConfig(use_importance_sampling=False))
    result = train(config, tmp_path, _upper_path_expert())
    assert result.metrics_path.name == "metrics__icrl__is0_es1_b2__seed3.csv"
    assert ablation_tag(False, True, 2) in result.metrics_path.name


def test_runs_without_expert_are_refused(tmp_path) -> None:
    with pytest.raises(DatasetError, match="no expert dataset"):
        train(_tiny(), tmp_path)


def test_expert_dataset_for_another_env_is_refused(tmp_path) -> None:
    lap = make_env("lap_grid", horizon=2)
    state = lap.reset()
    tr = lap.step(state, 0)
    path = write_dataset(tmp_path / "lap.jsonl", lap, [Trajectory((tr,))])
    with pytest.raises(DatasetError, match="lap_grid"):
        train(_tiny(expert_path=str(path)), tmp_path / "run")


@pytest.mark.parametrize("method", ["nominal", "bc", "gc"])
def test_baseline_methods_run(tmp_path, method: str) -> None:
    result = train(_tiny(method=method), tmp_path, _upper_path_expert())
    assert len(result.records) == 2
    assert result.metrics_path.name.startswith(f"metrics__{method}__")
    assert (tmp_path / "constraint_final.json").exists() == (method != "nominal")
    if method == "bc":
        assert (tmp_path / "constraint_iter0.json").exists()


def test_generate_expert_writes_a_clean_dataset(tmp_path) -> None:
    config = _tiny("bandit", expert_rollouts=2)
    expert = generate_expert(config, tmp_path / "expert.jsonl")
    assert len(expert.trajectories) == 2
    assert expert.lint.ok

    dataset = read_dataset(tmp_path / "expert.jsonl")
    assert dataset.env_name == "bandit"
    assert dataset.meta["config_hash"] == config_hash(config)


def test_evaluate_reports_rates_in_range() -> None:
    env = make_env("two_path")
    rng = np.random.default_rng(0)
    bundle = init_bundle(env, ForwardConfig(hidden_sizes=(8,)), rng)
    record = evaluate(bundle, env, 4, rng, timestep=7, iteration=2)
    assert record.timestep == 7
    assert record.iteration == 2
    assert 0.0 <= record.violation_rate <= 0.5
    assert 0.0 <= record.true_reward <= 1.0


def test_transfer_keeps_the_constraint_frozen(tmp_path) -> None:
    env = make_env("two_path")
    net = permissive_constraint_net(env)
    result = transfer(_tiny(), tmp_path, net)
    assert len(result.records) == 2
    loaded, _ = load_constraint_net(tmp_path / "constraint_final.json")
    assert np.array_equal(loaded.params.flat(), net.params.flat())


def test_transfer_from_checkpoint_to_missing_features_fails(tmp_path) -> None:
    lap = make_env("lap_grid")
    net = init_constraint_net(lap, BackwardConfig(hidden_sizes=(4,)), np.random.default_rng(0))
    source = save_constraint_net(tmp_path / "lap.json", net, env_name="lap_grid")
    config = _tiny("point_mass", transfer=TransferConfig(source_checkpoint=str(source)))
    with pytest.raises(FeatureMismatchError, match="missing features"):
        transfer(config, tmp_path / "run")


def test_transfer_needs_a_source(tmp_path) -> None:
    with pytest.raises(DatasetError, match="source_checkpoint"):
        transfer(_tiny(), tmp_path)


def test_constraint_recovery_with_permissive_net() -> None:
    env = make_env("two_path")
    report = constraint_recovery(permissive_constraint_net(env), env, _upper_path_expert())
    assert report.true_cells == (2,)
    assert report.predicted_cells == ()
    assert report.recall == 0.0


def test_ablate_runs_every_combination_per_seed(tmp_path) -> None:
    config = _tiny(iterations=0, ablation=AblationConfig(seeds=(0, 1)))
    run_dirs = ablate(config, tmp_path, _upper_path_expert())
    assert len(run_dirs) == 8
    assert {d.parent.name for d in run_dirs} == {"is1_es1_b2", "is1_es0_b2", "is0_es1_b2", "is0_es0_b2"}
    assert (tmp_path / "plot_aggregate.csv").exists()


@pytest.mark.parametrize("method", ["icrl", "gc"])
def test_same_seed_runs_are_bit_identical(tmp_path, method: str) -> None:
    config = _tiny(method=method, iterations=2, seed=5)
    first = train(config, tmp_path / "a", _upper_path_expert())
    second = train(config, tmp_path / "b", _upper_path_expert())

    assert first.metrics_path.read_bytes() == second.metrics_path.read_bytes()
    assert np.array_equal(first.net.params.flat(), second.net.params.flat())
    assert np.array_equal(first.bundle.policy.flat(), second.bundle.policy.flat())
    assert (tmp_path / "a" / "run_config.json").read_bytes() == (tmp_path / "b" / "run_config.json").read_bytes()
