"""Versioned JSON checkpoints for constraint networks and policy bundles."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from . import nn
from .backward import ConstraintNet
from .config import ForwardConfig
from .errors import DatasetError
from .forward import PolicyBundle
from .policy import Policy

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


def _write_json(path: str | Path, payload: dict[str, Any]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(payload), encoding="utf-8")
    return p


def _read_json(path: str | Path, kind: str) -> dict[str, Any]:
    p = Path(path)
    if not p.exists():
        raise DatasetError(f"checkpoint {p} does not exist")
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"checkpoint {p} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("kind") != kind:
        raise DatasetError(f"checkpoint {p} is not a {kind} checkpoint")
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DatasetError(f"checkpoint {p} has unsupported format_version {payload.get('format_version')}")
    return payload


def save_constraint_net(path: str | Path, net: ConstraintNet, *, env_name: str, config_hash: str = "") -> Path:
    payload = {
        "kind": "constraint_net",
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "env": env_name,
        "config_hash": config_hash,
        "input_features": list(net.input_features),
        "feature_names": list(net.feature_names),
        "params": nn.params_to_dict(net.params),
    }
    return _write_json(path, payload)


def load_constraint_net(path: str | Path) -> tuple[ConstraintNet, dict[str, Any]]:
    payload = _read_json(path, "constraint_net")
    try:
        net = ConstraintNet(
            nn.params_from_dict(payload["params"]),
            tuple(payload["input_features"]),
            tuple(payload.get("feature_names", ())),
        )
    except (KeyError, ValueError) as exc:
        raise DatasetError(f"checkpoint {path} is malformed: {exc}") from exc
    meta = {"env": payload.get("env"), "config_hash": payload.get("config_hash", "")}
    return net, meta


def save_policy(path: str | Path, bundle: PolicyBundle, *, env_name: str, config_hash: str = "") -> Path:
    payload = {
        "kind": "policy_bundle",
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "env": env_name,
        "config_hash": config_hash,
        "discrete": bundle.policy.discrete,
        "action_high": bundle.policy.action_high,
        "policy": nn.params_to_dict(bundle.policy.net),
        "log_std": bundle.policy.log_std.tolist(),
        "reward_value": nn.params_to_dict(bundle.reward_value_net),
        "cost_value": nn.params_to_dict(bundle.cost_value_net),
        "lam": bundle.lam,
        "entropy_coeff": bundle.entropy_coeff,
        "budget": bundle.budget,
    }
    return _write_json(path, payload)


def load_policy(path: str | Path, config: ForwardConfig) -> tuple[PolicyBundle, dict[str, Any]]:
    """Rebuild a bundle; optimizer moments are not stored and restart at zero."""
    payload = _read_json(path, "policy_bundle")
    try:
        policy = Policy(
            nn.params_from_dict(payload["policy"]),
            np.asarray(payload["log_std"], dtype=np.float64),
            bool(payload["discrete"]),
            float(payload["action_high"]),
        )
        reward_value = nn.params_from_dict(payload["reward_value"])
        cost_value = nn.params_from_dict(payload["cost_value"])
        bundle = PolicyBundle(
            policy=policy,
            reward_value_net=reward_value,
            cost_value_net=cost_value,
            policy_opt=nn.adam_init(policy.size, config.learning_rate),
            reward_value_opt=nn.adam_init(reward_value.size, config.value_learning_rate),
            cost_value_opt=nn.adam_init(cost_value.size, config.value_learning_rate),
            lam=float(payload["lam"]),
            entropy_coeff=float(payload["entropy_coeff"]),
            budget=float(payload["budget"]),
        )
    except (KeyError, ValueError) as exc:
        raise DatasetError(f"checkpoint {path} is malformed: {exc}") from exc
    meta = {"env": payload.get("env"), "config_hash": payload.get("config_hash", "")}
    return bundle, meta
