from types import SimpleNamespace
import json

import pytest

from icrl_lab import acceptance
from icrl_lab.cli import build_parser
from icrl_lab.envs import make_env
from icrl_lab.models import Trajectory


TINY = {
    "iterations": 1,
    "eval_episodes": 1,
    "forward.hidden_sizes": [8],
    "forward.rollout_steps": 50,
    "forward.batch_size": 50,
    "forward.ppo_epochs": 1,
    "forward.forward_epochs": 1,
    "backward.hidden_sizes": [4],
    "backward.iterations": 2,
    "backward.nominal_steps": 50,
}


def _upper_bridge_crossing() -> Trajectory:
    env = make_env("bridges")
    state = env.reset()
    transitions = []
    # up to the upper bridge row, across, then down to the goal
    for action in [0] * 5 + [1] * 6 + [2] * 5:
        tr = env.step(state, action)
        transitions.append(tr)
        state = tr.next_state
    assert transitions[-1].done and not transitions[-1].truncated
    return Trajectory(tuple(transitions))


def test_run_config_applies_env_defaults_then_overrides() -> None:
    config = acceptance.run_config("bridges", 3, {"forward.batch_size": 8}, method="gc")
    assert config.env.name == "bridges"
    assert config.seed == 3
    assert config.method == "gc"
    assert config.forward.batch_size == 8
    assert config.backward.features == ("state",)


def test_bridges_recovery_check_reports_and_writes_summary(tmp_path, monkeypatch) -> None:
    expert = (_upper_bridge_crossing(),)
    monkeypatch.setattr(acceptance.driver, "generate_expert", lambda config, out_path: SimpleNamespace(trajectories=expert))

    results = acceptance.run_checks(["bridges_recovery"], tmp_path, seeds=(0,), overrides=TINY)
    assert [r.name for r in results] == ["bridges_recovery"]
    assert set(results[0].measured) == {"precision", "recall"}
    assert results[0].passed == (not results[0].failures)

    summary = json.loads((tmp_path / "acceptance.json").read_text(encoding="utf-8"))
    assert summary[0]["name"] == "bridges_recovery"
    assert (tmp_path / "bridges_recovery" / "icrl" / "seed0" / "recovery.json").exists()


def test_acceptance_command_defaults_to_every_check() -> None:
    args = build_parser().parse_args(["acceptance", "--out-dir", "runs/acceptance"])
    assert args.checks == sorted(acceptance.CHECKS)
    assert args.seeds == [0, 1, 2, 3, 4]


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(acceptance.CHECKS))
def test_acceptance_thresholds_hold(tmp_path, name: str) -> None:
    (result,) = acceptance.run_checks([name], tmp_path)
    assert result.passed, "; ".join(result.failures)
