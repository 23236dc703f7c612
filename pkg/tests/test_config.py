from dataclasses import replace
import json
import textwrap

import pytest

from icrl_lab.config import (
    CONFIG_ENV_VAR,
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
)
from icrl_lab.errors import ConfigError


def test_load_config_defaults_when_missing(tmp_path) -> None:
    """Missing file gives lap_grid defaults."""
    cfg = load_config(tmp_path / "missing.yaml")
    assert cfg.env.name == "lap_grid"
    assert cfg.env.horizon == 200
    assert cfg.method == "icrl"
    assert cfg.expert_rollouts == 1
    assert cfg.backward.iterations == 10
    assert cfg.backward.regularizer == 0.5
    assert cfg.backward.max_forward_kl == 10.0
    assert cfg.backward.max_reverse_kl == 2.5
    assert cfg.forward.budget == 0.0


def test_load_config_reads_yaml(tmp_path) -> None:
    p = tmp_path / "config.yaml"
    p.write_text(
        textwrap.dedent(
            """
            run:
              method: gc
              iterations: 3
              seed: 7
            env:
              name: bridges
            backward:
              regularizer: 0.6
              hidden_sizes: [8, 8]
            """
        ),
        encoding="utf-8",
    )

    cfg = load_config(p)
    assert cfg.method == "gc"
    assert cfg.iterations == 3
    assert cfg.seed == 7
    assert cfg.env.name == "bridges"
    assert cfg.expert_rollouts == 10
    assert cfg.backward.features == ("state",)
    assert cfg.backward.regularizer == 0.6
    assert cfg.backward.hidden_sizes == (8, 8)


def test_env_defaults_apply_under_the_file(tmp_path) -> None:
    p = tmp_path / "config.yaml"
    p.write_text("env:\n  name: point_mass_broken\nforward:\n  batch_size: 256\n", encoding="utf-8")

    cfg = load_config(p)
    assert cfg.forward.batch_size == 256
    assert cfg.forward.learning_rate == pytest.approx(3e-5)
    assert cfg.forward.gae_lambda == pytest.approx(0.90)
    assert cfg.forward.lambda_init == pytest.approx(0.1)
    assert cfg.forward.lambda_lr == pytest.approx(1.0)


def test_load_config_finds_parent_config_yaml(tmp_path, monkeypatch) -> None:
    (tmp_path / "config.yaml").write_text("env:\n  name: point_circle\n", encoding="utf-8")
    subdir = tmp_path / "runs"
    subdir.mkdir()
    monkeypatch.chdir(subdir)

    cfg = load_config("config.yaml")
    assert cfg.env.name == "point_circle"
    assert cfg.env.horizon == 150


def test_load_config_uses_env_var(tmp_path, monkeypatch) -> None:
    p = tmp_path / "custom.yaml"
    p.write_text("run:\n  seed: 11\n", encoding="utf-8")
    monkeypatch.setenv(CONFIG_ENV_VAR, str(p))

    assert load_config().seed == 11


def test_overrides_beat_the_file_and_skip_none(tmp_path) -> None:
    p = tmp_path / "config.yaml"
    p.write_text("run:\n  seed: 1\nforward:\n  learning_rate: 0.01\n", encoding="utf-8")

    cfg = load_config(p, {"seed": 5, "forward.learning_rate": None, "env.name": "point_mass", "ablation.seeds": [3]})
    assert cfg.seed == 5
    assert cfg.forward.learning_rate == pytest.approx(0.01)
    assert cfg.env.name == "point_mass"
    assert cfg.ablation.seeds == (3,)


def test_apply_overrides_rejects_unknown_section() -> None:
    with pytest.raises(ConfigError, match="unknown config section"):
        apply_overrides({}, {"critic.learning_rate": 0.1})


@pytest.mark.parametrize(
    ("data", "match"),
    [
        ({"backward": {"regularizer": 1.0}}, "regularizer"),
        ({"run": {"method": "ppo"}}, "method"),
        ({"forward": {"gamma": 1.5}}, "forward.gamma"),
        ({"forward": {"batch_size": True}}, "forward.batch_size"),
        ({"env": {"name": "half_cheetah"}}, "unknown"),
        ({"env": {"dollar_spacing": 1}}, "dollar_spacing"),
        ({"forward": {"hidden_sizes": []}}, "hidden_sizes"),
        ({"transfer": {"target_env": "mars"}}, "target_env"),
        ({"backward": "fast"}, "mapping"),
    ],
)
def test_invalid_values_raise_config_error(data, match) -> None:
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_invalid_yaml_raises_config_error(tmp_path) -> None:
    p = tmp_path / "config.yaml"
    p.write_text("env: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(p)


def test_config_round_trips_through_dict() -> None:
    cfg = config_from_dict({"env": {"name": "point_mass"}, "run": {"seed": 4}})
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_config_hash_is_stable_and_sensitive() -> None:
    cfg = RunConfig()
    assert config_hash(cfg) == config_hash(RunConfig())
    assert len(config_hash(cfg)) == 12
    assert config_hash(replace(cfg, seed=1)) != config_hash(cfg)


def test_config_error_exit_code() -> None:
    assert ConfigError.exit_code == 2


def test_saved_run_config_reloads_the_same_run(tmp_path) -> None:
    from icrl_lab.config import EnvConfig
    from icrl_lab.driver import write_run_config

    cfg = RunConfig(env=EnvConfig(name="bridges"), method="gc", iterations=3, seed=9)
    path = write_run_config(tmp_path, cfg)

    reloaded = load_config(path)
    assert reloaded == cfg
    assert config_hash(reloaded) == config_hash(cfg)


def test_saved_run_config_overrides_still_apply(tmp_path) -> None:
    from icrl_lab.driver import write_run_config

    path = write_run_config(tmp_path, RunConfig(seed=2))
    assert load_config(path, {"seed": 8}).seed == 8


def test_saved_run_config_with_wrong_hash_is_refused(tmp_path) -> None:
    p = tmp_path / "run_config.json"
    p.write_text(json.dumps({"config": config_to_dict(RunConfig(seed=4)), "config_hash": "000000000000"}), encoding="utf-8")
    with pytest.raises(ConfigError, match="config_hash mismatch"):
        load_config(p)


@pytest.mark.parametrize(
    ("data", "match"),
    [
        ({"critic": {"learning_rate": 0.1}}, "critic"),
        ({"sed": 3}, "sed"),
        ({"config": {"run": {"seed": 1}}}, "config"),
    ],
)
def test_unknown_top_level_keys_raise_config_error(data, match) -> None:
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_top_level_run_fields_are_accepted() -> None:
    assert config_from_dict({"seed": 6, "method": "bc"}).seed == 6
