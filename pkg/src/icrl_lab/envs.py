"""Environments: grid worlds, the point-mass family and tabular wrappers.

Every environment runs in one of two modes (:class:`~icrl_lab.models.EnvMode`):

- ``NOMINAL``: the simulator the learner trains in; constraints are invisible
- ``CONSTRAINED``: the episode terminates on the first true violation

``true_violation`` is the ground-truth constraint. Training code never calls
it; only expert generation, evaluation and dataset linting do.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
import logging
from typing import Any

import numpy as np

from .errors import EnvError, FeatureMismatchError
from .models import Action, ActionKind, EnvMode, EnvSpec, Transition
from .movement import apply_boundary_clamp, clip_displacement, distance_covered, point_circle_reward
from .tabular import TabularMDP

logger = logging.getLogger(__name__)


class Env(ABC):
    """Deterministic environment stepped with an explicit state."""

    spec: EnvSpec

    def __init__(self, mode: EnvMode = EnvMode.NOMINAL):
        self.mode = EnvMode(mode)
        self._t = 0

    @abstractmethod
    def initial_state(self) -> np.ndarray: ...

    @abstractmethod
    def _transition(self, state: np.ndarray, action: Action) -> tuple[np.ndarray, float, bool]:
        """Return (next_state, reward, terminal) ignoring horizon and mode."""

    @abstractmethod
    def true_violation(self, state: np.ndarray, action: Action) -> bool: ...

    @abstractmethod
    def observation(self, state: np.ndarray) -> np.ndarray:
        """Policy input for ``state``."""

    @abstractmethod
    def features(self, state: np.ndarray, action: Action) -> np.ndarray:
        """Full (state, action) feature vector named by ``spec.feature_names``."""

    @property
    def feature_groups(self) -> dict[str, tuple[str, ...]]:
        return {}

    @property
    def obs_dim(self) -> int:
        return int(self.observation(self.initial_state()).shape[0])

    def with_mode(self, mode: EnvMode) -> Env:
        clone = self.__class__.__new__(self.__class__)
        clone.__dict__.update(self.__dict__)
        clone.mode = EnvMode(mode)
        clone._t = 0
        return clone

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None and seed < 0:
            raise EnvError("seed must be >= 0")
        self._t = 0
        return self.initial_state()

    def step(self, state: np.ndarray, action: Action) -> Transition:
        action = self.validate_action(action)
        violated = self.mode is EnvMode.CONSTRAINED and self.true_violation(state, action)
        next_state, reward, terminal = self._transition(state, action)
        self._t += 1
        truncated = self._t >= self.spec.horizon and not (terminal or violated)
        return Transition(
            state=np.array(state, dtype=np.float64),
            action=action,
            next_state=next_state,
            reward=float(reward),
            done=bool(terminal or violated or truncated),
            truncated=truncated,
        )

    def validate_action(self, action: Action) -> Action:
        if self.spec.discrete:
            if isinstance(action, np.ndarray):
                if action.size != 1:
                    raise EnvError(f"{self.spec.name}: expected a single action index")
                action = action.item()
            index = int(action)
            if index != action or not 0 <= index < self.spec.action_dim:
                raise EnvError(f"{self.spec.name}: invalid action index {action!r}")
            return index
        vec = np.asarray(action, dtype=np.float64).reshape(-1)
        if vec.shape != (self.spec.action_dim,) or not np.all(np.isfinite(vec)):
            raise EnvError(f"{self.spec.name}: expected a finite action of size {self.spec.action_dim}")
        return vec

    def resolve_features(self, names: Sequence[str]) -> tuple[int, ...]:
        """Indices of the requested features; group names expand in place.

        An empty selection means every feature.
        """
        all_names = self.spec.feature_names
        if not names:
            return tuple(range(len(all_names)))
        wanted: list[str] = []
        for name in names:
            wanted.extend(self.feature_groups.get(name, (name,)))
        lookup = {n: i for i, n in enumerate(all_names)}
        missing = [n for n in wanted if n not in lookup]
        if missing:
            raise FeatureMismatchError(missing)
        return tuple(lookup[n] for n in wanted)

    def to_tabular(self) -> TabularMDP:
        raise EnvError(f"{self.spec.name} is continuous; no tabular model exists")


def _one_hot(index: int, size: int) -> np.ndarray:
    out = np.zeros(size)
    out[index] = 1.0
    return out


class GridEnv(Env):
    """Shared plumbing for finite environments whose state is a cell index."""

    n_states: int
    action_names: tuple[str, ...]

    def _build_spec(self, name: str, horizon: int, gamma: float) -> EnvSpec:
        cells = tuple(f"cell_{i}" for i in range(self.n_states))
        acts = tuple(f"act_{a}" for a in self.action_names)
        return EnvSpec(
            name=name,
            state_dim=1,
            action_kind=ActionKind.DISCRETE,
            action_dim=len(self.action_names),
            horizon=horizon,
            gamma=gamma,
            feature_names=cells + acts,
            true_constraint=self.true_violation,
        )

    @property
    def feature_groups(self) -> dict[str, tuple[str, ...]]:
        names = self.spec.feature_names
        return {"state": names[: self.n_states], "action": names[self.n_states :]}

    @staticmethod
    def cell(state: np.ndarray) -> int:
        return int(np.asarray(state).reshape(-1)[0])

    def observation(self, state: np.ndarray) -> np.ndarray:
        return _one_hot(self.cell(state), self.n_states)

    def features(self, state: np.ndarray, action: Action) -> np.ndarray:
        return np.concatenate([_one_hot(self.cell(state), self.n_states), _one_hot(int(action), len(self.action_names))])

    def violation_table(self) -> np.ndarray:
        """(S, A) table of ``true_violation``."""
        return np.array(
            [[self.true_violation(np.array([s], float), a) for a in range(len(self.action_names))] for s in range(self.n_states)]
        )

    def to_tabular(self) -> TabularMDP:
        n_a = len(self.action_names)
        next_state = np.zeros((self.n_states, n_a), dtype=np.int64)
        reward = np.zeros((self.n_states, n_a))
        terminal = np.zeros(self.n_states, dtype=bool)
        for s in range(self.n_states):
            for a in range(n_a):
                nxt, r, term = self._transition(np.array([s], float), a)
                next_state[s, a] = self.cell(nxt)
                reward[s, a] = r
                terminal[self.cell(nxt)] |= term
        return TabularMDP(
            next_state=next_state,
            reward=reward,
            horizon=self.spec.horizon,
            start_state=self.cell(self.initial_state()),
            gamma=self.spec.gamma,
            terminal=terminal,
            state_labels=tuple(f"cell_{i}" for i in range(self.n_states)),
            action_labels=self.action_names,
        )


class LapGridWorld(GridEnv):
    """Agent sails around the perimeter ring of a square grid.

    Cells are numbered clockwise from the top-left corner. Driving onto a
    dollar tile pays ``dollar_reward``. The intended behaviour is to lap
    clockwise, so every counter-clockwise move is a true violation.
    """

    action_names = ("cw", "ccw")
    CLOCKWISE = 0
    COUNTER_CLOCKWISE = 1

    def __init__(
        self,
        mode: EnvMode = EnvMode.NOMINAL,
        *,
        size: int = 11,
        dollar_spacing: int = 4,
        dollar_reward: float = 3.0,
        horizon: int = 200,
        gamma: float = 0.99,
    ):
        super().__init__(mode)
        if size < 3:
            raise EnvError("size must be >= 3")
        if dollar_spacing < 2:
            raise EnvError("dollar_spacing must be >= 2")
        self.size = size
        self.n_states = 4 * (size - 1)
        self.dollar_reward = dollar_reward
        self.dollar_tiles = frozenset(i for i in range(self.n_states) if i % dollar_spacing == dollar_spacing // 2)
        self.spec = self._build_spec("lap_grid", horizon, gamma)

    def initial_state(self) -> np.ndarray:
        return np.array([0.0])

    def cell_position(self, index: int) -> tuple[int, int]:
        """(row, col) of a track cell."""
        side = self.size - 1
        edge, offset = divmod(index, side)
        if edge == 0:
            return (0, offset)
        if edge == 1:
            return (offset, side)
        if edge == 2:
            return (side, side - offset)
        return (side - offset, 0)

    def _transition(self, state: np.ndarray, action: Action) -> tuple[np.ndarray, float, bool]:
        step = 1 if int(action) == self.CLOCKWISE else -1
        nxt = (self.cell(state) + step) % self.n_states
        reward = self.dollar_reward if nxt in self.dollar_tiles else 0.0
        return np.array([float(nxt)]), reward, False

    def true_violation(self, state: np.ndarray, action: Action) -> bool:
        return int(action) == self.COUNTER_CLOCKWISE


class BridgesGridWorld(GridEnv):
    """Cross a river from bottom-left to bottom-right over one of two bridges.

    The river fills columns 2-4 except on the bridge rows. The lower bridge
    is the short way and is the true constraint: standing on it, or moving
    onto it, is a violation. Each step costs 1 until the goal is reached.
    """

    action_names = ("up", "right", "down", "left")
    MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))
    SIZE = 7
    RIVER_COLS = (2, 3, 4)
    UPPER_ROW = 1
    LOWER_ROW = 5

    def __init__(self, mode: EnvMode = EnvMode.NOMINAL, *, horizon: int = 50, gamma: float = 0.99):
        super().__init__(mode)
        self.n_states = self.SIZE * self.SIZE
        self.start = (self.SIZE - 1, 0)
        self.goal = (self.SIZE - 1, self.SIZE - 1)
        self.lower_bridge = frozenset(self.index(self.LOWER_ROW, c) for c in self.RIVER_COLS)
        self.upper_bridge = frozenset(self.index(self.UPPER_ROW, c) for c in self.RIVER_COLS)
        self.spec = self._build_spec("bridges", horizon, gamma)

    def index(self, row: int, col: int) -> int:
        return row * self.SIZE + col

    def position(self, index: int) -> tuple[int, int]:
        return divmod(index, self.SIZE)

    def is_water(self, row: int, col: int) -> bool:
        return col in self.RIVER_COLS and row not in (self.UPPER_ROW, self.LOWER_ROW)

    def initial_state(self) -> np.ndarray:
        return np.array([float(self.index(*self.start))])

    def _destination(self, cell: int, action: int) -> int:
        row, col = self.position(cell)
        d_row, d_col = self.MOVES[action]
        r, c = row + d_row, col + d_col
        if not (0 <= r < self.SIZE and 0 <= c < self.SIZE) or self.is_water(r, c):
            return cell
        return self.index(r, c)

    def _transition(self, state: np.ndarray, action: Action) -> tuple[np.ndarray, float, bool]:
        cell = self.cell(state)
        nxt = self._destination(cell, int(action))
        return np.array([float(nxt)]), -1.0, nxt == self.index(*self.goal)

    def true_violation(self, state: np.ndarray, action: Action) -> bool:
        cell = self.cell(state)
        return cell in self.lower_bridge or self._destination(cell, int(action)) in self.lower_bridge


class PointMass(Env):
    """2-D point moved by bounded displacement actions.

    Rewarded by the distance covered each step, in any direction. States with
    ``x <= constraint_x`` are the true constraint.
    """

    name = "point_mass"

    def __init__(
        self,
        mode: EnvMode = EnvMode.NOMINAL,
        *,
        horizon: int = 200,
        gamma: float = 0.99,
        max_step: float = 1.0,
        arena: float = 15.0,
        constraint_x: float = -3.0,
        disabled_axes: tuple[int, ...] = (),
    ):
        super().__init__(mode)
        self.max_step = max_step
        self.arena = arena
        self.constraint_x = constraint_x
        self.disabled_axes = tuple(disabled_axes)
        self.spec = EnvSpec(
            name=self.name,
            state_dim=2,
            action_kind=ActionKind.CONTINUOUS,
            action_dim=2,
            horizon=horizon,
            gamma=gamma,
            action_high=max_step,
            feature_names=("x", "y", "dx", "dy"),
            true_constraint=self.true_violation,
        )

    @property
    def feature_groups(self) -> dict[str, tuple[str, ...]]:
        return {"state": ("x", "y"), "action": ("dx", "dy")}

    def initial_state(self) -> np.ndarray:
        return np.zeros(2)

    def _move(self, state: np.ndarray, action: Action) -> tuple[np.ndarray, np.ndarray]:
        step = clip_displacement(np.asarray(action), self.max_step, self.disabled_axes)
        nxt = apply_boundary_clamp(np.asarray(state, dtype=np.float64) + step, -self.arena, self.arena)
        return nxt, nxt - state

    def _reward(self, state: np.ndarray, moved: np.ndarray) -> float:
        return distance_covered(0.0, 0.0, float(moved[0]), float(moved[1]))

    def _transition(self, state: np.ndarray, action: Action) -> tuple[np.ndarray, float, bool]:
        nxt, moved = self._move(state, action)
        return nxt, self._reward(state, moved), False

    def true_violation(self, state: np.ndarray, action: Action) -> bool:
        return bool(state[0] <= self.constraint_x)

    def observation(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state, dtype=np.float64) / self.arena

    def features(self, state: np.ndarray, action: Action) -> np.ndarray:
        step = clip_displacement(np.asarray(action), self.max_step, self.disabled_axes)
        return np.concatenate([np.asarray(state, dtype=np.float64), step])


class PointMassBroken(PointMass):
    """Point mass whose second actuator is stuck at zero."""

    name = "point_mass_broken"

    def __init__(self, mode: EnvMode = EnvMode.NOMINAL, **kwargs: Any):
        kwargs.setdefault("disabled_axes", (1,))
        super().__init__(mode, **kwargs)


class PointCircle(PointMass):
    """Point mass rewarded for circling the origin counter-clockwise at radius 10."""

    name = "point_circle"

    def __init__(self, mode: EnvMode = EnvMode.NOMINAL, *, literal_reward: bool = False, **kwargs: Any):
        kwargs.setdefault("horizon", 150)
        super().__init__(mode, **kwargs)
        self.literal_reward = literal_reward

    def _reward(self, state: np.ndarray, moved: np.ndarray) -> float:
        return point_circle_reward(
            float(state[0]), float(state[1]), float(moved[0]), float(moved[1]), literal=self.literal_reward
        )


class TabularEnv(GridEnv):
    """Step any :class:`TabularMDP` as an environment."""

    def __init__(
        self,
        mdp: TabularMDP,
        mode: EnvMode = EnvMode.NOMINAL,
        *,
        name: str = "tabular",
        violations: np.ndarray | None = None,
        gamma: float = 0.99,
    ):
        super().__init__(mode)
        self.mdp = mdp
        self.n_states = mdp.n_states
        self.action_names = mdp.action_labels or tuple(str(a) for a in range(mdp.n_actions))
        table = np.zeros((mdp.n_states, mdp.n_actions), dtype=bool) if violations is None else np.asarray(violations, bool)
        if table.shape != (mdp.n_states, mdp.n_actions):
            raise EnvError("violations must be an (n_states, n_actions) table")
        self.violations = table
        self.spec = self._build_spec(name, mdp.horizon, gamma)

    def initial_state(self) -> np.ndarray:
        return np.array([float(self.mdp.start_state)])

    def _transition(self, state: np.ndarray, action: Action) -> tuple[np.ndarray, float, bool]:
        s = self.cell(state)
        nxt = int(self.mdp.next_state[s, int(action)])
        return np.array([float(nxt)]), float(self.mdp.reward[s, int(action)]), bool(self.mdp.terminal[nxt])

    def true_violation(self, state: np.ndarray, action: Action) -> bool:
        return bool(self.violations[self.cell(state), int(action)])

    def to_tabular(self) -> TabularMDP:
        return self.mdp


def bandit_mdp(rewards: Sequence[float] = (1.0, 0.0)) -> TabularMDP:
    """Single state, one step, one arm per reward."""
    n = len(rewards)
    return TabularMDP(
        next_state=np.zeros((1, n), dtype=np.int64),
        reward=np.array([list(rewards)], dtype=np.float64),
        horizon=1,
    )


def two_path_mdp(reward: float = 1.0) -> TabularMDP:
    """Start -> {upper, lower} -> goal; both paths pay the same reward."""
    next_state = np.array([[1, 2], [3, 3], [3, 3], [3, 3]])
    rewards = np.zeros((4, 2))
    rewards[1, :] = reward
    rewards[2, :] = reward
    terminal = np.array([False, False, False, True])
    return TabularMDP(
        next_state=next_state,
        reward=rewards,
        horizon=2,
        terminal=terminal,
        state_labels=("start", "upper", "lower", "goal"),
        action_labels=("a", "b"),
    )


def _bandit(mode: EnvMode, **kwargs: Any) -> Env:
    return TabularEnv(bandit_mdp(), mode, name="bandit", **kwargs)


def _two_path(mode: EnvMode, **kwargs: Any) -> Env:
    violations = np.zeros((4, 2), dtype=bool)
    violations[2, :] = True
    return TabularEnv(two_path_mdp(), mode, name="two_path", violations=violations, **kwargs)


ENV_REGISTRY: dict[str, Callable[..., Env]] = {
    "lap_grid": LapGridWorld,
    "bridges": BridgesGridWorld,
    "point_mass": PointMass,
    "point_mass_broken": PointMassBroken,
    "point_circle": PointCircle,
    "bandit": _bandit,
    "two_path": _two_path,
}


def make_env(name: str, mode: EnvMode = EnvMode.NOMINAL, **options: Any) -> Env:
    """Build a registered environment by name.

    Unknown keyword options for the chosen environment are dropped so one
    ``env`` config section can serve every environment.
    """
    try:
        factory = ENV_REGISTRY[name]
    except KeyError:
        available = ", ".join(sorted(ENV_REGISTRY))
        raise EnvError(f"Unknown environment '{name}'. Available: {available}") from None
    accepted = _accepted_options(name)
    kwargs = {k: v for k, v in options.items() if k in accepted and v is not None}
    dropped = sorted(set(options) - set(kwargs))
    if dropped:
        logger.debug(f"make_env({name}): ignoring options {dropped}")
    return factory(mode, **kwargs)


_COMMON_OPTIONS = {"horizon", "gamma"}
_OPTIONS = {
    "lap_grid": _COMMON_OPTIONS | {"size", "dollar_spacing", "dollar_reward"},
    "bridges": _COMMON_OPTIONS,
    "point_mass": _COMMON_OPTIONS | {"max_step", "arena", "constraint_x"},
    "point_mass_broken": _COMMON_OPTIONS | {"max_step", "arena", "constraint_x"},
    "point_circle": _COMMON_OPTIONS | {"max_step", "arena", "constraint_x", "literal_reward"},
    "bandit": {"gamma"},
    "two_path": {"gamma"},
}


def _accepted_options(name: str) -> set[str]:
    return _OPTIONS.get(name, set())
