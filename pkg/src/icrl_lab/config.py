from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
import os
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
import yaml

from .errors import ConfigError


METHODS = ("icrl", "bc", "gc", "nominal")
SECTIONS = ("env", "forward", "backward", "ablation", "transfer")
CONFIG_ENV_VAR = "ICRL_LAB_CONFIG"


@dataclass(frozen=True, slots=True)
class EnvConfig:
    name: str = "lap_grid"
    # None keeps the environment's own horizon.
    horizon: int | None = None
    dollar_spacing: int = 4
    max_step: float = 1.0
    literal_reward: bool = False

    def options(self) -> dict[str, Any]:
        """Keyword options for :func:`icrl_lab.envs.make_env`."""
        return {
            "horizon": self.horizon,
            "dollar_spacing": self.dollar_spacing,
            "max_step": self.max_step,
            "literal_reward": self.literal_reward,
        }


@dataclass(frozen=True, slots=True)
class ForwardConfig:
    """PPO-Lagrangian settings for the forward step."""

    hidden_sizes: tuple[int, ...] = (64, 64)
    learning_rate: float = 3e-4
    value_learning_rate: float = 3e-4
    batch_size: int = 64
    rollout_steps: int = 2000
    ppo_epochs: int = 10
    # Rollout/update rounds per call to solve_forward.
    forward_epochs: int = 10
    clip_ratio: float = 0.2
    target_kl: float = 0.01
    gamma: float = 0.99
    gae_lambda: float = 0.95
    cost_gamma: float = 0.99
    cost_gae_lambda: float = 0.95
    entropy_coeff: float = 0.0
    lambda_init: float = 1.0
    lambda_lr: float = 0.1
    budget: float = 0.0
    cost_tolerance: float = 0.01
    init_log_std: float = -0.5


@dataclass(frozen=True, slots=True)
class BackwardConfig:
    """Constraint-function learner settings."""

    hidden_sizes: tuple[int, ...] = (20,)
    learning_rate: float = 0.01
    iterations: int = 10
    regularizer: float = 0.5
    max_forward_kl: float = 10.0
    max_reverse_kl: float = 2.5
    # None trains on every pooled pair each iteration.
    minibatch_size: int | None = None
    # Regularize |1 - zeta(tau)| per trajectory instead of per step.
    trajectory_regularizer: bool = False
    # Nominal steps sampled from the current policy for each backward phase.
    nominal_steps: int = 2000
    # Feature names or groups ("state", "action") fed to zeta; empty = all.
    features: tuple[str, ...] = ()


@dataclass(frozen=True, slots=True)
class AblationConfig:
    use_importance_sampling: bool = True
    use_early_stopping: bool = True
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


@dataclass(frozen=True, slots=True)
class TransferConfig:
    source_checkpoint: str | None = None
    target_env: str | None = None


@dataclass(frozen=True, slots=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    method: str = "icrl"
    # Outer ICRL iterations N.
    iterations: int = 10
    seed: int = 0
    expert_rollouts: int = 1
    expert_forward_epochs: int = 50
    expert_path: str | None = None
    eval_episodes: int = 5
    deterministic_eval: bool = False
    bc_epochs: int = 200
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    backward: BackwardConfig = field(default_factory=BackwardConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)


RUN_FIELDS = tuple(f.name for f in fields(RunConfig) if f.name not in SECTIONS)


# Hyperparameter columns per environment. Horizons of the point-mass family are
# scaled down to desk size.
ENV_DEFAULTS: dict[str, dict[str, dict[str, Any]]] = {
    "lap_grid": {
        "env": {"horizon": 200},
        "run": {"expert_rollouts": 1},
        "backward": {"features": []},
    },
    "bridges": {
        "run": {"expert_rollouts": 10},
        "backward": {"features": ["state"]},
    },
    "point_mass": {
        "env": {"horizon": 200},
        "run": {"expert_rollouts": 10},
        "backward": {"features": ["state"]},
    },
    "point_circle": {
        "env": {"horizon": 150},
        "backward": {"features": ["state"]},
    },
    "point_mass_broken": {
        "env": {"horizon": 200},
        "forward": {"batch_size": 128, "learning_rate": 3e-5, "gae_lambda": 0.90, "lambda_init": 0.1, "lambda_lr": 1.0},
        "backward": {"features": ["state"]},
    },
    "bandit": {},
    "two_path": {},
}


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read the YAML/JSON config, apply dotted-key ``overrides`` and validate.

    Without a path, ``$ICRL_LAB_CONFIG`` is used, then ``config.yaml``
    searched upwards from the working directory. A missing file gives the
    defaults.
    """

    load_dotenv(override=False)

    if path is None:
        path = os.getenv(CONFIG_ENV_VAR) or "config.yaml"
    resolved_path = _resolve_default_config_path(path)
    data = unwrap_saved_config(_load_yaml_dict(resolved_path))
    return config_from_dict(apply_overrides(data, overrides or {}))


def unwrap_saved_config(data: dict[str, Any]) -> dict[str, Any]:
    """Accept the ``{"config": ..., "config_hash": ...}`` layout of ``run_config.json``.

    The stored hash must match the config it sits next to; plain config
    mappings pass through untouched.
    """

    if "config" not in data:
        return data
    extra = sorted(set(data) - {"config", "config_hash"})
    if extra:
        raise ConfigError(f"saved run config has unexpected keys: {', '.join(extra)}")
    inner = data["config"]
    if not isinstance(inner, dict):
        raise ConfigError("Config key 'config' must be a mapping")
    stored = data.get("config_hash")
    if stored is not None:
        actual = config_hash(config_from_dict(inner))
        if str(stored) != actual:
            raise ConfigError(f"config_hash mismatch: file says {stored}, contents hash to {actual}")
    return inner


def apply_overrides(data: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Set dotted keys such as ``forward.learning_rate`` on a raw config mapping.

    Keys without a section address run-level fields. ``None`` values are
    skipped so unset CLI flags leave the file's value alone.
    """

    out: dict[str, Any] = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for key, value in overrides.items():
        if value is None:
            continue
        section, _, name = key.rpartition(".")
        if section not in ("", "run", *SECTIONS):
            raise ConfigError(f"unknown config section in '{key}'")
        target = out.setdefault(section or "run", {})
        if not isinstance(target, dict):
            raise ConfigError(f"Config key '{section or 'run'}' must be a mapping")
        target[name] = list(value) if isinstance(value, tuple) else value
    return out


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    """Build a validated RunConfig from a (possibly partial) nested mapping.

    Environment defaults are applied first, then ``data`` on top.
    """

    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(str(k) for k in data if k not in ("run", *SECTIONS, *RUN_FIELDS))
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {', '.join(unknown)}")
    env_raw = _section(data, "env")
    env_name = str(env_raw.get("name", EnvConfig().name))
    if env_name not in ENV_DEFAULTS:
        available = ", ".join(sorted(ENV_DEFAULTS))
        raise ConfigError(f"env.name '{env_name}' is unknown. Available: {available}")
    defaults = ENV_DEFAULTS[env_name]

    def merged(name: str) -> dict[str, Any]:
        return {**defaults.get(name, {}), **_section(data, name)}

    d = RunConfig()
    run_raw = {**defaults.get("run", {}), **{k: v for k, v in data.items() if not isinstance(v, dict)}}
    if isinstance(data.get("run"), dict):
        run_raw.update(data["run"])

    method = str(run_raw.get("method", d.method)).strip().lower()
    if method not in METHODS:
        raise ConfigError(f"method must be one of {', '.join(METHODS)}")

    expert_path = run_raw.get("expert_path")
    return RunConfig(
        env=_parse_env_config({**merged("env"), "name": env_name}),
        method=method,
        iterations=_ensure_nonnegative_int(run_raw.get("iterations", d.iterations), "iterations"),
        seed=_ensure_nonnegative_int(run_raw.get("seed", d.seed), "seed"),
        expert_rollouts=_ensure_positive_int(run_raw.get("expert_rollouts", d.expert_rollouts), "expert_rollouts"),
        expert_forward_epochs=_ensure_positive_int(
            run_raw.get("expert_forward_epochs", d.expert_forward_epochs), "expert_forward_epochs"
        ),
        expert_path=str(expert_path) if expert_path else None,
        eval_episodes=_ensure_positive_int(run_raw.get("eval_episodes", d.eval_episodes), "eval_episodes"),
        deterministic_eval=_parse_bool(run_raw.get("deterministic_eval", False), "deterministic_eval"),
        bc_epochs=_ensure_nonnegative_int(run_raw.get("bc_epochs", d.bc_epochs), "bc_epochs"),
        forward=_parse_forward_config(merged("forward")),
        backward=_parse_backward_config(merged("backward")),
        ablation=_parse_ablation_config(merged("ablation")),
        transfer=_parse_transfer_config(merged("transfer")),
    )


def _parse_env_config(raw: dict[str, Any]) -> EnvConfig:
    horizon_raw = raw.get("horizon")
    horizon = _ensure_positive_int(horizon_raw, "env.horizon") if horizon_raw is not None else None
    dollar_spacing = _ensure_positive_int(raw.get("dollar_spacing", 4), "env.dollar_spacing")
    if dollar_spacing < 2:
        raise ConfigError("env.dollar_spacing must be >= 2")
    return EnvConfig(
        name=str(raw["name"]),
        horizon=horizon,
        dollar_spacing=dollar_spacing,
        max_step=_ensure_positive_float(raw.get("max_step", 1.0), "env.max_step"),
        literal_reward=_parse_bool(raw.get("literal_reward", False), "env.literal_reward"),
    )


def _parse_forward_config(raw: dict[str, Any]) -> ForwardConfig:
    d = ForwardConfig()
    out = ForwardConfig(
        hidden_sizes=_parse_int_tuple(raw.get("hidden_sizes"), d.hidden_sizes, "forward.hidden_sizes"),
        learning_rate=_ensure_positive_float(raw.get("learning_rate", d.learning_rate), "forward.learning_rate"),
        value_learning_rate=_ensure_positive_float(
            raw.get("value_learning_rate", d.value_learning_rate), "forward.value_learning_rate"
        ),
        batch_size=_ensure_positive_int(raw.get("batch_size", d.batch_size), "forward.batch_size"),
        rollout_steps=_ensure_positive_int(raw.get("rollout_steps", d.rollout_steps), "forward.rollout_steps"),
        ppo_epochs=_ensure_positive_int(raw.get("ppo_epochs", d.ppo_epochs), "forward.ppo_epochs"),
        forward_epochs=_ensure_nonnegative_int(raw.get("forward_epochs", d.forward_epochs), "forward.forward_epochs"),
        clip_ratio=_ensure_positive_float(raw.get("clip_ratio", d.clip_ratio), "forward.clip_ratio"),
        target_kl=_ensure_positive_float(raw.get("target_kl", d.target_kl), "forward.target_kl"),
        gamma=_ensure_in_range(float(raw.get("gamma", d.gamma)), "forward.gamma", 0.0, 1.0),
        gae_lambda=_ensure_in_range(float(raw.get("gae_lambda", d.gae_lambda)), "forward.gae_lambda", 0.0, 1.0),
        cost_gamma=_ensure_in_range(float(raw.get("cost_gamma", d.cost_gamma)), "forward.cost_gamma", 0.0, 1.0),
        cost_gae_lambda=_ensure_in_range(
            float(raw.get("cost_gae_lambda", d.cost_gae_lambda)), "forward.cost_gae_lambda", 0.0, 1.0
        ),
        entropy_coeff=_ensure_nonnegative_float(raw.get("entropy_coeff", d.entropy_coeff), "forward.entropy_coeff"),
        lambda_init=_ensure_nonnegative_float(raw.get("lambda_init", d.lambda_init), "forward.lambda_init"),
        lambda_lr=_ensure_nonnegative_float(raw.get("lambda_lr", d.lambda_lr), "forward.lambda_lr"),
        budget=_ensure_nonnegative_float(raw.get("budget", d.budget), "forward.budget"),
        cost_tolerance=_ensure_nonnegative_float(raw.get("cost_tolerance", d.cost_tolerance), "forward.cost_tolerance"),
        init_log_std=float(raw.get("init_log_std", d.init_log_std)),
    )
    return out


def _parse_backward_config(raw: dict[str, Any]) -> BackwardConfig:
    d = BackwardConfig()
    regularizer = float(raw.get("regularizer", d.regularizer))
    if not 0.0 <= regularizer < 1.0:
        raise ConfigError("backward.regularizer must be in [0, 1)")
    minibatch_raw = raw.get("minibatch_size")
    features = raw.get("features", list(d.features))
    if not isinstance(features, (list, tuple)):
        raise ConfigError("backward.features must be a list of feature names")
    return BackwardConfig(
        hidden_sizes=_parse_int_tuple(raw.get("hidden_sizes"), d.hidden_sizes, "backward.hidden_sizes", allow_empty=True),
        learning_rate=_ensure_positive_float(raw.get("learning_rate", d.learning_rate), "backward.learning_rate"),
        iterations=_ensure_nonnegative_int(raw.get("iterations", d.iterations), "backward.iterations"),
        regularizer=regularizer,
        max_forward_kl=_ensure_nonnegative_float(raw.get("max_forward_kl", d.max_forward_kl), "backward.max_forward_kl"),
        max_reverse_kl=_ensure_nonnegative_float(raw.get("max_reverse_kl", d.max_reverse_kl), "backward.max_reverse_kl"),
        minibatch_size=_ensure_positive_int(minibatch_raw, "backward.minibatch_size") if minibatch_raw is not None else None,
        trajectory_regularizer=_parse_bool(raw.get("trajectory_regularizer", False), "backward.trajectory_regularizer"),
        nominal_steps=_ensure_positive_int(raw.get("nominal_steps", d.nominal_steps), "backward.nominal_steps"),
        features=tuple(str(f) for f in features),
    )


def _parse_ablation_config(raw: dict[str, Any]) -> AblationConfig:
    d = AblationConfig()
    seeds = _parse_int_tuple(raw.get("seeds"), d.seeds, "ablation.seeds")
    if any(s < 0 for s in seeds):
        raise ConfigError("ablation.seeds must be >= 0")
    return AblationConfig(
        use_importance_sampling=_parse_bool(raw.get("use_importance_sampling", True), "ablation.use_importance_sampling"),
        use_early_stopping=_parse_bool(raw.get("use_early_stopping", True), "ablation.use_early_stopping"),
        seeds=seeds,
    )


def _parse_transfer_config(raw: dict[str, Any]) -> TransferConfig:
    source = raw.get("source_checkpoint")
    target = raw.get("target_env")
    if target is not None and str(target) not in ENV_DEFAULTS:
        raise ConfigError(f"transfer.target_env '{target}' is unknown")
    return TransferConfig(
        source_checkpoint=str(source) if source else None,
        target_env=str(target) if target else None,
    )


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    """Nested, JSON-ready mapping that :func:`config_from_dict` reads back exactly."""
    raw = asdict(config)
    nested = {k: raw.pop(k) for k in SECTIONS}
    return json.loads(json.dumps({"run": raw, **nested}))


def config_hash(config: RunConfig) -> str:
    """Short stable digest of the full configuration."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _section(data: dict[str, Any], name: str) -> dict[str, Any]:
    raw = data.get(name) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"Config key '{name}' must be a mapping")
    return raw


def _ensure_positive_float(value: Any, key_name: str) -> float:
    parsed = _as_number(value, float, key_name)
    if parsed <= 0.0:
        raise ConfigError(f"{key_name} must be > 0")
    return parsed


def _ensure_nonnegative_float(value: Any, key_name: str) -> float:
    parsed = _as_number(value, float, key_name)
    if parsed < 0.0:
        raise ConfigError(f"{key_name} must be >= 0")
    return parsed


def _ensure_positive_int(value: Any, key_name: str) -> int:
    parsed = _as_number(value, int, key_name)
    if parsed <= 0:
        raise ConfigError(f"{key_name} must be > 0")
    return parsed


def _ensure_nonnegative_int(value: Any, key_name: str) -> int:
    parsed = _as_number(value, int, key_name)
    if parsed < 0:
        raise ConfigError(f"{key_name} must be >= 0")
    return parsed


def _ensure_in_range(value: float, key_name: str, min_value: float, max_value: float) -> float:
    if value < min_value or value > max_value:
        raise ConfigError(f"{key_name} must be between {min_value} and {max_value}")
    return value


def _as_number(value: Any, kind: type, key_name: str) -> Any:
    if isinstance(value, bool):
        raise ConfigError(f"{key_name} must be a number")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key_name} must be a number, got {value!r}") from None


def _parse_bool(value: Any, key_name: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in {"true", "false", "1", "0", "yes", "no"}:
        return value.strip().lower() in {"true", "1", "yes"}
    raise ConfigError(f"{key_name} must be a boolean")


def _parse_int_tuple(value: Any, default: tuple[int, ...], key_name: str, *, allow_empty: bool = False) -> tuple[int, ...]:
    if value is None:
        return default
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{key_name} must be a list of integers")
    parsed = tuple(_as_number(item, int, key_name) for item in value)
    if not parsed and not allow_empty:
        raise ConfigError(f"{key_name} must not be empty")
    if any(p <= 0 for p in parsed) and key_name.endswith("hidden_sizes"):
        raise ConfigError(f"{key_name} entries must be > 0")
    return parsed


def _load_yaml_dict(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if not p.exists():
        return {}

    content = p.read_text(encoding="utf-8")
    try:
        loaded = yaml.safe_load(content)
    except yaml.YAMLError as exc:
        raise ConfigError(f"Config file {p} is not valid YAML/JSON: {exc}") from exc
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"Config file {p} must contain a YAML mapping at top level")
    return loaded


def _resolve_default_config_path(path: str | Path) -> Path:
    """Resolve a config path, searching parent directories for a bare filename.

    Custom paths (absolute or nested relative) are used as given.
    """

    p = Path(path)

    if p.is_absolute() or p.exists():
        return p

    if p.parent != Path("."):
        return p

    for parent in [Path.cwd(), *Path.cwd().parents]:
        candidate = parent / p.name
        if candidate.exists():
            return candidate
    return p
