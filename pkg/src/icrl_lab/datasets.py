"""JSON-lines trajectory datasets.

The first line is a header record; every following line is one trajectory::

    {"kind": "header", "env": "lap_grid", "horizon": 200, "format_version": 1, ...}
    {"states": [[0.0], [1.0], ...], "actions": [0, ...], "rewards": [0.0, ...], "dones": [...], "truncated": true}

``states`` holds one entry more than ``actions``: the final next state.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from .envs import Env
from .errors import DatasetError
from .models import Trajectory, Transition

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1


def _utc_timestamp_iso() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass(frozen=True, slots=True)
class Dataset:
    env_name: str
    horizon: int
    trajectories: tuple[Trajectory, ...]
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)


def build_header(env: Env, **meta: Any) -> dict[str, Any]:
    return {
        "kind": "header",
        "env": env.spec.name,
        "horizon": env.spec.horizon,
        "format_version": DATASET_FORMAT_VERSION,
        "created": _utc_timestamp_iso(),
        **meta,
    }


def trajectory_to_record(trajectory: Trajectory) -> dict[str, Any]:
    transitions = trajectory.transitions
    states = [np.asarray(t.state).tolist() for t in transitions] + [np.asarray(transitions[-1].next_state).tolist()]
    actions = [t.action if isinstance(t.action, int) else np.asarray(t.action).tolist() for t in transitions]
    return {
        "states": states,
        "actions": actions,
        "rewards": [t.reward for t in transitions],
        "dones": [t.done for t in transitions],
        "truncated": transitions[-1].truncated,
    }


def record_to_trajectory(record: dict[str, Any], line_no: int = 0) -> Trajectory:
    try:
        states = [np.asarray(s, dtype=np.float64) for s in record["states"]]
        actions = record["actions"]
        rewards = [float(r) for r in record["rewards"]]
        dones = record.get("dones") or [False] * (len(actions) - 1) + [True]
        truncated = bool(record.get("truncated", False))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"line {line_no}: malformed trajectory record ({exc})") from exc
    if not actions or len(states) != len(actions) + 1 or len(rewards) != len(actions) or len(dones) != len(actions):
        raise DatasetError(f"line {line_no}: states/actions/rewards lengths disagree")

    transitions = []
    for t, action in enumerate(actions):
        act = int(action) if isinstance(action, int) else np.asarray(action, dtype=np.float64)
        transitions.append(
            Transition(
                state=states[t],
                action=act,
                next_state=states[t + 1],
                reward=rewards[t],
                done=bool(dones[t]),
                truncated=truncated and t == len(actions) - 1,
            )
        )
    try:
        return Trajectory(tuple(transitions))
    except ValueError as exc:
        raise DatasetError(f"line {line_no}: {exc}") from exc


def write_dataset(path: str | Path, env: Env, trajectories: Iterable[Trajectory], **meta: Any) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(build_header(env, **meta))]
    lines.extend(json.dumps(trajectory_to_record(traj)) for traj in trajectories)
    if len(lines) == 1:
        raise DatasetError("refusing to write an empty dataset")
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"wrote {len(lines) - 1} trajectories to {p}")
    return p


def read_dataset(path: str | Path) -> Dataset:
    p = Path(path)
    if not p.exists():
        raise DatasetError(f"dataset {p} does not exist")
    raw_lines = [line for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not raw_lines:
        raise DatasetError(f"dataset {p} is empty")
    try:
        records = [json.loads(line) for line in raw_lines]
    except json.JSONDecodeError as exc:
        raise DatasetError(f"dataset {p} is not valid JSON-lines: {exc}") from exc

    header = records[0]
    if not isinstance(header, dict) or header.get("kind") != "header":
        raise DatasetError(f"dataset {p} has no header record")
    version = header.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise DatasetError(f"dataset {p} has unsupported format_version {version}")
    trajectories = tuple(record_to_trajectory(rec, i + 2) for i, rec in enumerate(records[1:]))
    if not trajectories:
        raise DatasetError(f"dataset {p} holds no trajectories")
    meta = {k: v for k, v in header.items() if k not in {"kind", "env", "horizon", "format_version"}}
    return Dataset(str(header.get("env")), int(header.get("horizon", 0)), trajectories, meta)


@dataclass(frozen=True, slots=True)
class LintReport:
    trajectories: int
    transitions: int
    violations: int
    stitching_errors: int
    too_long: int
    problems: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.problems


def lint_dataset(trajectories: Sequence[Trajectory], env: Env) -> LintReport:
    """Check stitching, horizon and that no transition truly violates a constraint."""
    problems: list[str] = []
    violations = stitching = too_long = transitions = 0
    for i, traj in enumerate(trajectories):
        transitions += len(traj)
        if len(traj) > env.spec.horizon:
            too_long += 1
            problems.append(f"trajectory {i}: length {len(traj)} exceeds horizon {env.spec.horizon}")
        steps = traj.transitions
        for t, tr in enumerate(steps):
            if t + 1 < len(steps) and not np.array_equal(tr.next_state, steps[t + 1].state):
                stitching += 1
                problems.append(f"trajectory {i}: not stitched at step {t}")
            if env.true_violation(tr.state, tr.action):
                violations += 1
                problems.append(f"trajectory {i}: true violation at step {t}")
    if not trajectories:
        problems.append("dataset is empty")
    return LintReport(len(trajectories), transitions, violations, stitching, too_long, tuple(problems))
