"""Constrained forward RL: PPO on reward and cost streams plus a Lagrange multiplier.

The policy ascends the clipped surrogate of the combined advantage
``(A_r - lam * A_c) / (1 + lam)``; ``lam`` follows projected gradient ascent
on the observed discounted cost ``J_c`` against the budget ``alpha``.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
import logging

import numpy as np

from . import nn
from .config import ForwardConfig
from .envs import Env
from .errors import NonFiniteError
from .models import Trajectory, Transition
from .policy import Policy, init_policy

logger = logging.getLogger(__name__)

# Per-step signal computed from an episode's transitions (cost or reward).
StepFn = Callable[[Sequence[Transition]], np.ndarray]


def zero_cost(transitions: Sequence[Transition]) -> np.ndarray:
    return np.zeros(len(transitions))


def true_cost(env: Env) -> StepFn:
    """Cost 1 on every truly violating pair, 0 elsewhere."""

    def cost(transitions: Sequence[Transition]) -> np.ndarray:
        return np.array([float(env.true_violation(t.state, t.action)) for t in transitions])

    return cost


@dataclass(frozen=True, slots=True)
class PolicyBundle:
    """Policy, both value networks, the multiplier and their optimizer states."""

    policy: Policy
    reward_value_net: nn.MlpParams
    cost_value_net: nn.MlpParams
    policy_opt: nn.AdamState
    reward_value_opt: nn.AdamState
    cost_value_opt: nn.AdamState
    lam: float = 1.0
    entropy_coeff: float = 0.0
    budget: float = 0.0

    def __post_init__(self) -> None:
        if not self.lam >= 0.0:
            raise ValueError("lam must be >= 0")
        if self.entropy_coeff < 0.0:
            raise ValueError("entropy_coeff must be >= 0")
        if self.budget < 0.0:
            raise ValueError("budget must be >= 0")

    def act(self, observation: np.ndarray, rng: np.random.Generator, *, deterministic: bool = False) -> int | np.ndarray:
        return self.policy.sample(observation, rng, deterministic=deterministic)


def init_bundle(env: Env, config: ForwardConfig, rng: np.random.Generator) -> PolicyBundle:
    spec = env.spec
    obs_dim = env.obs_dim
    policy = init_policy(
        obs_dim,
        spec.action_dim,
        config.hidden_sizes,
        rng,
        discrete=spec.discrete,
        action_high=spec.action_high,
        init_log_std=config.init_log_std,
    )
    value_dims = (obs_dim, *config.hidden_sizes, 1)
    reward_value = nn.init_mlp(value_dims, rng)
    cost_value = nn.init_mlp(value_dims, rng)
    return PolicyBundle(
        policy=policy,
        reward_value_net=reward_value,
        cost_value_net=cost_value,
        policy_opt=nn.adam_init(policy.size, config.learning_rate),
        reward_value_opt=nn.adam_init(reward_value.size, config.value_learning_rate),
        cost_value_opt=nn.adam_init(cost_value.size, config.value_learning_rate),
        lam=config.lambda_init,
        entropy_coeff=config.entropy_coeff,
        budget=config.budget,
    )


def gae(rewards: Sequence[float], values: Sequence[float], gamma: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates; ``values`` carries one bootstrap entry at the end."""
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (r.size + 1,):
        raise ValueError(f"values must have len(rewards) + 1 = {r.size + 1} entries, got {v.size}")
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lam must lie in [0, 1]")
    deltas = r + gamma * v[1:] - v[:-1]
    adv = np.zeros_like(r)
    running = 0.0
    for t in range(r.size - 1, -1, -1):
        running = deltas[t] + gamma * lam * running
        adv[t] = running
    return adv


@dataclass(frozen=True, slots=True)
class RolloutBatch:
    """Flattened on-policy samples with advantages and returns for both streams."""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    reward_values: np.ndarray
    cost_values: np.ndarray
    reward_advantages: np.ndarray
    cost_advantages: np.ndarray
    reward_returns: np.ndarray
    cost_returns: np.ndarray
    trajectories: tuple[Trajectory, ...] = ()
    # Undiscounted environment return and discounted cost of each episode.
    episode_returns: np.ndarray = field(default_factory=lambda: np.zeros(0))
    episode_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        n = self.observations.shape[0]
        for name in (
            "log_probs",
            "rewards",
            "costs",
            "reward_values",
            "cost_values",
            "reward_advantages",
            "cost_advantages",
            "reward_returns",
            "cost_returns",
        ):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per sample")
        if np.any(self.costs < 0.0) or np.any(self.costs > 1.0):
            raise ValueError("costs must lie in [0, 1]")

    @property
    def size(self) -> int:
        return int(self.observations.shape[0])

    @property
    def mean_cost(self) -> float:
        """Average discounted episode cost, the estimate of J_c."""
        return float(np.mean(self.episode_costs)) if self.episode_costs.size else 0.0


def _values(net: nn.MlpParams, observations: np.ndarray) -> np.ndarray:
    return nn.forward(net, observations)[:, 0]


def collect_rollouts(
    env: Env,
    bundle: PolicyBundle,
    rng: np.random.Generator,
    config: ForwardConfig,
    *,
    steps: int | None = None,
    cost_fn: StepFn = zero_cost,
    reward_fn: StepFn | None = None,
    deterministic: bool = False,
) -> RolloutBatch:
    """Run whole episodes until at least ``steps`` transitions are collected.

    Truncated episodes bootstrap both value streams from the final next
    state; terminal ones bootstrap with 0.
    """

    budget = config.rollout_steps if steps is None else steps
    obs_parts: list[np.ndarray] = []
    act_parts: list[np.ndarray] = []
    logp_parts: list[np.ndarray] = []
    columns: dict[str, list[np.ndarray]] = {k: [] for k in ("r", "c", "vr", "vc", "ar", "ac", "rr", "rc")}
    trajectories: list[Trajectory] = []
    episode_returns: list[float] = []
    episode_costs: list[float] = []

    collected = 0
    while collected < budget:
        state = env.reset()
        transitions: list[Transition] = []
        observations: list[np.ndarray] = []
        actions: list[int | np.ndarray] = []
        while True:
            obs = env.observation(state)
            action = bundle.act(obs, rng, deterministic=deterministic)
            transition = env.step(state, action)
            transitions.append(transition)
            observations.append(obs)
            actions.append(transition.action)
            state = transition.next_state
            if transition.done:
                break

        obs_arr = np.stack(observations)
        act_arr = np.array(actions) if env.spec.discrete else np.stack(actions)
        costs = np.asarray(cost_fn(transitions), dtype=np.float64)
        env_rewards = np.array([t.reward for t in transitions])
        rewards = env_rewards if reward_fn is None else np.asarray(reward_fn(transitions), dtype=np.float64)

        last = transitions[-1]
        bootstrap_obs = env.observation(last.next_state)[None, :]
        v_r = _values(bundle.reward_value_net, obs_arr)
        v_c = _values(bundle.cost_value_net, obs_arr)
        boot_r = float(_values(bundle.reward_value_net, bootstrap_obs)[0]) if last.truncated else 0.0
        boot_c = float(_values(bundle.cost_value_net, bootstrap_obs)[0]) if last.truncated else 0.0
        adv_r = gae(rewards, np.append(v_r, boot_r), config.gamma, config.gae_lambda)
        adv_c = gae(costs, np.append(v_c, boot_c), config.cost_gamma, config.cost_gae_lambda)

        obs_parts.append(obs_arr)
        act_parts.append(act_arr)
        logp_parts.append(bundle.policy.log_prob(obs_arr, act_arr))
        for key, value in zip(
            ("r", "c", "vr", "vc", "ar", "ac", "rr", "rc"),
            (rewards, costs, v_r, v_c, adv_r, adv_c, adv_r + v_r, adv_c + v_c),
            strict=True,
        ):
            columns[key].append(value)
        trajectories.append(Trajectory(tuple(transitions)))
        episode_returns.append(float(env_rewards.sum()))
        episode_costs.append(float(np.sum(costs * config.cost_gamma ** np.arange(costs.size))))
        collected += len(transitions)

    cat = {k: np.concatenate(v) for k, v in columns.items()}
    return RolloutBatch(
        observations=np.concatenate(obs_parts),
        actions=np.concatenate(act_parts),
        log_probs=np.concatenate(logp_parts),
        rewards=cat["r"],
        costs=cat["c"],
        reward_values=cat["vr"],
        cost_values=cat["vc"],
        reward_advantages=cat["ar"],
        cost_advantages=cat["ac"],
        reward_returns=cat["rr"],
        cost_returns=cat["rc"],
        trajectories=tuple(trajectories),
        episode_returns=np.array(episode_returns),
        episode_costs=np.array(episode_costs),
    )


def normalize(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return (values - values.mean()) / (values.std() + 1e-8)


def combine_advantages(reward_adv: np.ndarray, cost_adv: np.ndarray, lam: float) -> np.ndarray:
    """Normalize each stream, then ``(A_r - lam * A_c) / (1 + lam)``."""
    return (normalize(reward_adv) - lam * normalize(cost_adv)) / (1.0 + lam)


def surrogate_gradient(
    policy: Policy,
    observations: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    clip_ratio: float,
    entropy_coeff: float = 0.0,
) -> tuple[np.ndarray, float]:
    """Gradient and value of the mean clipped surrogate plus entropy bonus."""
    m = observations.shape[0]
    log_probs = policy.log_prob(observations, actions)
    ratio = np.exp(log_probs - old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    objective = float(np.mean(np.minimum(ratio * advantages, clipped * advantages)))
    if entropy_coeff:
        objective += entropy_coeff * float(np.mean(policy.entropy(observations)))
    active = ((advantages >= 0.0) & (ratio < 1.0 + clip_ratio)) | ((advantages < 0.0) & (ratio > 1.0 - clip_ratio))
    weights = np.where(active, ratio * advantages, 0.0) / m
    grad = policy.gradient(observations, actions, weights, entropy_coeff / m)
    if not np.isfinite(objective):
        raise NonFiniteError("PPO surrogate is not finite")
    return grad, objective


def _value_step(
    net: nn.MlpParams, state: nn.AdamState, observations: np.ndarray, targets: np.ndarray
) -> tuple[nn.MlpParams, nn.AdamState, float]:
    predictions = _values(net, observations)
    residual = predictions - targets
    loss = 0.5 * float(np.mean(residual**2))
    if not np.isfinite(loss):
        raise NonFiniteError("value loss is not finite")
    grads = nn.backward(net, observations, (residual / residual.size)[:, None])
    net, state = nn.adam_step(net, grads, state)
    return net, state, loss


@dataclass(frozen=True, slots=True)
class PpoStats:
    epochs_run: int
    approx_kl: float
    surrogate: float
    reward_value_loss: float
    cost_value_loss: float
    stopped_early: bool


def ppo_update(
    bundle: PolicyBundle,
    batch: RolloutBatch,
    config: ForwardConfig,
    rng: np.random.Generator,
) -> tuple[PolicyBundle, PpoStats]:
    """Several epochs of minibatch PPO on ``batch``.

    Stops after the first epoch whose approximate KL to the sampling policy
    exceeds ``config.target_kl``. Any non-finite loss or gradient raises
    :class:`NonFiniteError` and no new bundle is produced.
    """

    policy, policy_opt = bundle.policy, bundle.policy_opt
    v_r, opt_r = bundle.reward_value_net, bundle.reward_value_opt
    v_c, opt_c = bundle.cost_value_net, bundle.cost_value_opt
    n = batch.size
    surrogate = loss_r = loss_c = 0.0
    approx_kl = 0.0
    epochs_run = 0
    stopped = False

    for _ in range(config.ppo_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            obs = batch.observations[idx]
            acts = batch.actions[idx]
            advantages = combine_advantages(batch.reward_advantages[idx], batch.cost_advantages[idx], bundle.lam)
            grad, surrogate = surrogate_gradient(
                policy, obs, acts, batch.log_probs[idx], advantages, config.clip_ratio, bundle.entropy_coeff
            )
            # A zero gradient must not move the policy through stale Adam moments.
            if np.any(grad):
                vector, policy_opt = nn.adam_update(policy.flat(), grad, policy_opt, maximize=True)
                policy = policy.with_flat(vector)
            v_r, opt_r, loss_r = _value_step(v_r, opt_r, obs, batch.reward_returns[idx])
            v_c, opt_c, loss_c = _value_step(v_c, opt_c, obs, batch.cost_returns[idx])
        epochs_run += 1
        approx_kl = float(np.mean(batch.log_probs - policy.log_prob(batch.observations, batch.actions)))
        logger.debug(f"ppo epoch {epochs_run}: surrogate={surrogate:.4f} kl={approx_kl:.5f}")
        if approx_kl > config.target_kl:
            stopped = True
            break

    updated = replace(
        bundle,
        policy=policy,
        policy_opt=policy_opt,
        reward_value_net=v_r,
        reward_value_opt=opt_r,
        cost_value_net=v_c,
        cost_value_opt=opt_c,
    )
    return updated, PpoStats(epochs_run, approx_kl, surrogate, loss_r, loss_c, stopped)


def lagrangian_step(lam: float, observed_cost: float, budget: float, learning_rate: float) -> float:
    """Projected ascent on the multiplier: ``max(0, lam + lr * (J_c - alpha))``."""
    if lam < 0.0:
        raise ValueError("lam must be >= 0")
    return max(0.0, lam + learning_rate * (observed_cost - budget))


@dataclass(frozen=True, slots=True)
class ForwardEpoch:
    epoch: int
    steps: int
    mean_return: float
    mean_cost: float
    lam: float
    approx_kl: float


@dataclass(frozen=True, slots=True)
class ForwardResult:
    bundle: PolicyBundle
    converged: bool
    history: tuple[ForwardEpoch, ...]

    @property
    def timesteps(self) -> int:
        return sum(h.steps for h in self.history)


def solve_forward(
    env: Env,
    config: ForwardConfig,
    rng: np.random.Generator,
    *,
    cost_fn: StepFn = zero_cost,
    reward_fn: StepFn | None = None,
    bundle: PolicyBundle | None = None,
    epochs: int | None = None,
    update_lambda: bool = True,
) -> ForwardResult:
    """Alternate rollouts, PPO and multiplier updates; warm-starts from ``bundle``.

    Converged means the last observed ``J_c`` is within ``cost_tolerance`` of
    the budget. A non-converged result is returned with ``converged=False``
    and a warning is logged.
    """

    if bundle is None:
        bundle = init_bundle(env, config, rng)
    n_epochs = config.forward_epochs if epochs is None else epochs
    history: list[ForwardEpoch] = []
    for epoch in range(n_epochs):
        batch = collect_rollouts(env, bundle, rng, config, cost_fn=cost_fn, reward_fn=reward_fn)
        bundle, stats = ppo_update(bundle, batch, config, rng)
        observed = batch.mean_cost
        if update_lambda:
            bundle = replace(bundle, lam=lagrangian_step(bundle.lam, observed, bundle.budget, config.lambda_lr))
        record = ForwardEpoch(epoch, batch.size, float(np.mean(batch.episode_returns)), observed, bundle.lam, stats.approx_kl)
        history.append(record)
        logger.info(
            f"forward epoch {epoch}: steps={record.steps} return={record.mean_return:.3f} "
            f"J_c={observed:.4f} lam={bundle.lam:.4f} kl={stats.approx_kl:.5f}"
        )

    converged = bool(history) and history[-1].mean_cost <= bundle.budget + config.cost_tolerance
    if history and not converged:
        logger.warning(
            f"forward step did not converge: J_c={history[-1].mean_cost:.4f} "
            f"> budget {bundle.budget} + tolerance {config.cost_tolerance}"
        )
    return ForwardResult(bundle, converged, tuple(history))
