import json

import numpy as np
import pytest

from icrl_lab.backward import init_constraint_net
from icrl_lab.checkpoints import save_constraint_net
from icrl_lab.cli import build_parser, main
from icrl_lab.config import BackwardConfig
from icrl_lab.datasets import write_dataset
from icrl_lab.envs import make_env
from icrl_lab.models import Trajectory

TINY_CONFIG = """
run:
  iterations: 1
  eval_episodes: 1
env:
  name: two_path
forward:
  hidden_sizes: [8]
  rollout_steps: 16
  batch_size: 16
  ppo_epochs: 1
  forward_epochs: 1
backward:
  hidden_sizes: [4]
  iterations: 2
  nominal_steps: 8
""".strip()


def _two_path_dataset(path, actions) -> str:
    env = make_env("two_path")
    state = env.reset()
    transitions = []
    for action in actions:
        tr = env.step(state, action)
        transitions.append(tr)
        state = tr.next_state
    return str(write_dataset(path, env, [Trajectory(tuple(transitions))]))


@pytest.fixture()
def tiny_config(tmp_path) -> str:
    p = tmp_path / "config.yaml"
    p.write_text(TINY_CONFIG, encoding="utf-8")
    return str(p)


def test_train_requires_seed_and_out_dir() -> None:
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["train", "--out-dir", "runs"])
    with pytest.raises(SystemExit):
        parser.parse_args(["train", "--seed", "0"])
    args = parser.parse_args(["train", "--seed", "0", "--out-dir", "runs", "--method", "bc"])
    assert args.method == "bc"


def test_export_of_empty_directory_exits_4(tmp_path) -> None:
    assert main(["export", "--run-dir", str(tmp_path)]) == 4


def test_invalid_config_exits_2(tmp_path) -> None:
    p = tmp_path / "bad.yaml"
    p.write_text("backward:\n  regularizer: 1.0\n", encoding="utf-8")
    assert main(["train", "--config", str(p), "--seed", "0", "--out-dir", str(tmp_path / "run")]) == 2


def test_train_export_and_evaluate(tmp_path, tiny_config, capsys) -> None:
    expert = _two_path_dataset(tmp_path / "expert.jsonl", (0, 0))
    run_dir = tmp_path / "run"

    code = main(["train", "--config", tiny_config, "--seed", "1", "--out-dir", str(run_dir), "--expert", expert])
    assert code == 0
    assert (run_dir / "metrics__icrl__is1_es1_b2__seed1.csv").exists()

    assert main(["export", "--run-dir", str(run_dir)]) == 0
    assert (run_dir / "plot_long.csv").exists()
    assert (run_dir / "plot_aggregate.csv").exists()

    capsys.readouterr()
    assert main(["evaluate", "--config", tiny_config, "--policy", str(run_dir / "policy_final.json")]) == 0
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert 0.0 <= result["violation_rate"] <= 1.0


def test_lint_exit_code_follows_the_report(tmp_path, tiny_config) -> None:
    clean = _two_path_dataset(tmp_path / "clean.jsonl", (0, 0))
    dirty = _two_path_dataset(tmp_path / "dirty.jsonl", (1, 0))
    assert main(["lint", "--config", tiny_config, "--dataset", clean]) == 0
    assert main(["lint", "--config", tiny_config, "--dataset", dirty]) == 4


def test_transfer_with_missing_features_exits_2(tmp_path, tiny_config) -> None:
    lap = make_env("lap_grid")
    net = init_constraint_net(lap, BackwardConfig(hidden_sizes=(4,)), np.random.default_rng(0))
    source = save_constraint_net(tmp_path / "lap.json", net, env_name="lap_grid")
    code = main(
        [
            "transfer",
            "--config",
            tiny_config,
            "--source",
            str(source),
            "--target-env",
            "point_mass",
            "--out-dir",
            str(tmp_path / "run"),
        ]
    )
    assert code == 2
