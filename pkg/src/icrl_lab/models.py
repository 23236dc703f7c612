from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class EnvMode(str, Enum):
    """Nominal environments never terminate on violations; constrained ones do."""

    NOMINAL = "nominal"
    CONSTRAINED = "constrained"


class ActionKind(str, Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


Action = int | np.ndarray


@dataclass(frozen=True, slots=True)
class Transition:
    """One environment step (s_t, a_t, s_{t+1}, r_t)."""

    state: np.ndarray
    action: Action
    next_state: np.ndarray
    reward: float
    done: bool
    # Episode ended because the horizon ran out, not because of a terminal state.
    truncated: bool = False

    def __post_init__(self) -> None:
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")

    def to_log_dict(self) -> dict[str, object]:
        action = self.action if isinstance(self.action, int) else np.round(self.action, 3).tolist()
        return {
            "state": np.round(self.state, 3).tolist(),
            "action": action,
            "reward": round(self.reward, 4),
            "done": self.done,
        }


@dataclass(frozen=True, slots=True)
class Trajectory:
    """Ordered, stitched sequence of transitions."""

    transitions: tuple[Transition, ...]

    def __post_init__(self) -> None:
        transitions = tuple(self.transitions)
        object.__setattr__(self, "transitions", transitions)
        if not transitions:
            raise ValueError("trajectory must contain at least one transition")
        for t in range(len(transitions) - 1):
            if not np.array_equal(transitions[t].next_state, transitions[t + 1].state):
                raise ValueError(f"trajectory is not stitched at step {t}")

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def states(self) -> np.ndarray:
        return np.stack([t.state for t in self.transitions])

    @property
    def actions(self) -> list[Action]:
        return [t.action for t in self.transitions]

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions])

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    def discounted_reward(self, gamma: float) -> float:
        return float(np.sum(self.rewards * gamma ** np.arange(len(self))))


@dataclass(frozen=True, slots=True)
class EnvSpec:
    """Static description of an environment (MDP tuple plus true constraint)."""

    name: str
    state_dim: int
    action_kind: ActionKind
    # Number of actions (discrete) or action dimension (continuous).
    action_dim: int
    horizon: int
    gamma: float = 0.99
    action_high: float = 1.0
    feature_names: tuple[str, ...] = ()
    true_constraint: Callable[[np.ndarray, Action], bool] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.horizon <= 0:
            raise ValueError("horizon must be > 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.state_dim <= 0 or self.action_dim <= 0:
            raise ValueError("state_dim and action_dim must be > 0")

    @property
    def discrete(self) -> bool:
        return self.action_kind is ActionKind.DISCRETE
