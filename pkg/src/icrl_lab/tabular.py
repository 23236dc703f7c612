"""Exact maximum-entropy machinery for small deterministic MDPs.

Under the MaxEnt model a trajectory's probability is
``exp(beta * r(tau)) * zeta(tau) / Z`` where ``zeta(tau)`` is the product of
per-pair feasibility scores (1/0 for hard constraints). :func:`soft_solve`
computes the matching time-indexed policy by a backward soft-value
recursion; :func:`maxent_distribution` computes the same distribution by
brute-force enumeration so each can check the other.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
import logging

import numpy as np
from scipy import special

from .errors import EnvError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class TabularMDP:
    """Finite deterministic MDP with a fixed start state.

    ``next_state[s, a]`` is the successor of taking ``a`` in ``s``. Entering a
    ``terminal`` state ends the trajectory; otherwise it ends at ``horizon``.
    """

    next_state: np.ndarray
    reward: np.ndarray
    horizon: int
    start_state: int = 0
    gamma: float = 1.0
    beta: float = 1.0
    terminal: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    state_labels: tuple[str, ...] = ()
    action_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        nxt = np.asarray(self.next_state, dtype=np.int64)
        rew = np.asarray(self.reward, dtype=np.float64)
        if nxt.ndim != 2 or rew.shape != nxt.shape:
            raise ValueError("next_state and reward must both be (n_states, n_actions) tables")
        n_states = nxt.shape[0]
        if np.any(nxt < 0) or np.any(nxt >= n_states):
            raise ValueError("transition targets must be valid state indices")
        terminal = np.asarray(self.terminal, dtype=bool)
        if terminal.size == 0:
            terminal = np.zeros(n_states, dtype=bool)
        if terminal.shape != (n_states,):
            raise ValueError("terminal must have one flag per state")
        if not 0 <= self.start_state < n_states:
            raise ValueError("start_state out of range")
        if terminal[self.start_state]:
            raise ValueError("start_state must not be terminal")
        if self.horizon <= 0:
            raise ValueError("horizon must be > 0")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        for name, value in (("next_state", nxt), ("reward", rew), ("terminal", terminal)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]

    def with_beta(self, beta: float) -> TabularMDP:
        return TabularMDP(
            self.next_state,
            self.reward,
            self.horizon,
            self.start_state,
            self.gamma,
            beta,
            self.terminal,
            self.state_labels,
            self.action_labels,
        )


@dataclass(frozen=True, slots=True)
class TabularTrajectory:
    states: tuple[int, ...]
    actions: tuple[int, ...]
    reward: float

    def log_score(self, log_table: np.ndarray) -> float:
        """Sum of a per-pair (S, A) log table along the trajectory."""
        return float(np.sum(log_table[list(self.states), list(self.actions)]))


def enumerate_trajectories(mdp: TabularMDP, limit: int = 100_000) -> list[TabularTrajectory]:
    """List every trajectory from the start state, depth first."""
    out: list[TabularTrajectory] = []
    stack: list[tuple[tuple[int, ...], tuple[int, ...], float]] = [((mdp.start_state,), (), 0.0)]
    while stack:
        states, actions, reward = stack.pop()
        s = states[-1]
        t = len(actions)
        for a in range(mdp.n_actions - 1, -1, -1):
            r = reward + (mdp.gamma**t) * float(mdp.reward[s, a])
            nxt = int(mdp.next_state[s, a])
            acts = (*actions, a)
            if t + 1 == mdp.horizon or mdp.terminal[nxt]:
                out.append(TabularTrajectory(states, acts, r))
                if len(out) > limit:
                    raise EnvError(f"more than {limit} trajectories; enumeration refused")
            else:
                stack.append(((*states, nxt), acts, r))
    return out


def _log_table(feasibility: np.ndarray, mdp: TabularMDP) -> np.ndarray:
    f = np.asarray(feasibility, dtype=np.float64)
    if f.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"feasibility must be a {(mdp.n_states, mdp.n_actions)} table")
    if np.any(f < 0.0) or np.any(f > 1.0):
        raise ValueError("feasibility scores must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        return np.log(f)


@dataclass(frozen=True, slots=True)
class SoftSolution:
    """Time-indexed MaxEnt policy ``policy[t, s, a]`` and its log partition."""

    mdp: TabularMDP
    policy: np.ndarray
    log_partition: float

    @property
    def partition(self) -> float:
        return float(np.exp(self.log_partition))

    def trajectory_probabilities(self, trajectories: Sequence[TabularTrajectory]) -> np.ndarray:
        probs = np.empty(len(trajectories))
        for i, traj in enumerate(trajectories):
            steps = np.arange(len(traj.actions))
            probs[i] = np.prod(self.policy[steps, list(traj.states), list(traj.actions)])
        return probs

    def sample(self, rng: np.random.Generator, n: int) -> list[TabularTrajectory]:
        """Draw ``n`` trajectories by rolling the policy forward (vectorised)."""
        mdp = self.mdp
        states = np.full(n, mdp.start_state, dtype=np.int64)
        alive = np.ones(n, dtype=bool)
        state_hist = [states.copy()]
        action_hist: list[np.ndarray] = []
        lengths = np.full(n, mdp.horizon, dtype=np.int64)
        for t in range(mdp.horizon):
            probs = self.policy[t, states]
            u = rng.random(n)[:, None]
            actions = np.minimum((u > np.cumsum(probs, axis=1)).sum(axis=1), mdp.n_actions - 1)
            action_hist.append(actions)
            states = mdp.next_state[states, actions]
            ended = alive & mdp.terminal[states]
            lengths[ended] = t + 1
            alive &= ~mdp.terminal[states]
            state_hist.append(states.copy())
            if not alive.any():
                break
        state_arr = np.stack(state_hist, axis=1)
        action_arr = np.stack(action_hist, axis=1)
        out: list[TabularTrajectory] = []
        for i in range(n):
            length = int(lengths[i])
            s = tuple(int(x) for x in state_arr[i, :length])
            a = tuple(int(x) for x in action_arr[i, :length])
            r = float(sum((mdp.gamma**t) * mdp.reward[s[t], a[t]] for t in range(length)))
            out.append(TabularTrajectory(s, a, r))
        return out


def soft_solve(mdp: TabularMDP, beta: float, feasibility: np.ndarray) -> SoftSolution:
    """Exact MaxEnt policy by backward soft-value recursion.

    ``feasibility`` is an (S, A) table of per-pair scores in [0, 1]; hard
    constraints use 0/1 indicators.
    """

    log_f = _log_table(feasibility, mdp)
    n_s, n_a, horizon = mdp.n_states, mdp.n_actions, mdp.horizon
    policy = np.empty((horizon, n_s, n_a))
    continuation = np.zeros(n_s)
    value = np.zeros(n_s)
    for t in range(horizon - 1, -1, -1):
        cont = np.where(mdp.terminal, 0.0, continuation)
        q = beta * (mdp.gamma**t) * mdp.reward + log_f + cont[mdp.next_state]
        value = special.logsumexp(q, axis=1)
        dead = ~np.isfinite(value)
        with np.errstate(invalid="ignore"):
            policy[t] = np.exp(q - value[:, None])
        policy[t, dead] = 1.0 / n_a
        continuation = value

    log_z = float(value[mdp.start_state])
    if not np.isfinite(log_z):
        raise EnvError("no feasible trajectory: the feasible set is empty")
    logger.debug(f"soft_solve: beta={beta} log Z={log_z:.6f}")
    return SoftSolution(mdp, policy, log_z)


def maxent_distribution(
    mdp: TabularMDP,
    beta: float,
    feasibility: np.ndarray,
    trajectories: Sequence[TabularTrajectory],
) -> tuple[np.ndarray, float]:
    """Brute-force ``exp(beta r) zeta / Z`` over enumerated trajectories.

    Returns the probabilities and ``log Z``.
    """

    log_f = _log_table(feasibility, mdp)
    log_w = np.array([beta * traj.reward + traj.log_score(log_f) for traj in trajectories])
    log_z = float(special.logsumexp(log_w))
    if not np.isfinite(log_z):
        raise EnvError("no feasible trajectory: the feasible set is empty")
    return np.exp(log_w - log_z), log_z


def log_likelihood(
    mdp: TabularMDP,
    beta: float,
    feasibility: np.ndarray,
    expert: Sequence[TabularTrajectory],
    trajectories: Sequence[TabularTrajectory],
) -> float:
    """Mean MaxEnt log-likelihood of ``expert`` given soft feasibility scores."""
    log_f = _log_table(feasibility, mdp)
    _, log_z = maxent_distribution(mdp, beta, feasibility, trajectories)
    data_term = np.mean([beta * traj.reward + traj.log_score(log_f) for traj in expert])
    return float(data_term - log_z)


def occupancy(solution: SoftSolution) -> np.ndarray:
    """Expected state visits per time step, shape (horizon, n_states)."""
    mdp = solution.mdp
    visits = np.zeros((mdp.horizon, mdp.n_states))
    dist = np.zeros(mdp.n_states)
    dist[mdp.start_state] = 1.0
    for t in range(mdp.horizon):
        visits[t] = dist
        flow = dist[:, None] * solution.policy[t]
        nxt = np.zeros(mdp.n_states)
        np.add.at(nxt, mdp.next_state.ravel(), flow.ravel())
        dist = np.where(mdp.terminal, 0.0, nxt)
    return visits


def exact_kl(dist_p: np.ndarray, dist_q: np.ndarray) -> tuple[float, float]:
    """Return ``(KL(p || q), KL(q || p))``; missing support gives ``inf``."""
    p = np.asarray(dist_p, dtype=np.float64)
    q = np.asarray(dist_q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must be over the same trajectory set")
    forward = float(np.sum(special.rel_entr(p, q)))
    reverse = float(np.sum(special.rel_entr(q, p)))
    return forward, reverse
