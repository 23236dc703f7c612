"""Comparison methods: a plain binary classifier (BC) and GAIL-Constraint (GC).

Both produce a sigmoid network with the same layout as
:class:`~icrl_lab.backward.ConstraintNet`, so it drops into the forward step
and the checkpoint format unchanged.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace
import logging

import numpy as np

from . import nn
from .backward import ConstraintNet, PairBatch, init_constraint_net, transition_features
from .config import RunConfig
from .envs import Env
from .errors import DatasetError
from .forward import PolicyBundle, StepFn, collect_rollouts, init_bundle, ppo_update
from .models import Trajectory, Transition

logger = logging.getLogger(__name__)

# A discriminator is structurally a constraint network.
DiscriminatorNet = ConstraintNet


@dataclass(frozen=True, slots=True)
class BcResult:
    net: DiscriminatorNet
    optimizer: nn.AdamState
    losses: tuple[float, ...]


def bc_loss(net: DiscriminatorNet, expert: PairBatch, nominal: PairBatch) -> float:
    """Class-balanced cross-entropy: expert pairs labelled 1, nominal pairs 0."""
    e = net.scores(expert.features)
    n = net.scores(nominal.features)
    return float(-0.5 * (np.mean(np.log(e)) + np.mean(np.log1p(-n))))


def bc_train(
    net: DiscriminatorNet,
    expert: PairBatch,
    nominal: PairBatch,
    epochs: int,
    learning_rate: float,
    optimizer: nn.AdamState | None = None,
) -> BcResult:
    """Full-batch Adam on :func:`bc_loss`; ``losses`` holds the loss before each epoch."""
    if expert.n_pairs == 0 or nominal.n_pairs == 0:
        raise DatasetError("bc_train needs both expert and nominal pairs")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")

    if optimizer is None:
        optimizer = nn.adam_init(net.params.size, learning_rate)
    inputs = np.concatenate([net.select(expert.features), net.select(nominal.features)])
    labels = np.concatenate([np.ones(expert.n_pairs), np.zeros(nominal.n_pairs)])
    # Each class contributes half of the loss.
    balance = np.concatenate([np.full(expert.n_pairs, 0.5 / expert.n_pairs), np.full(nominal.n_pairs, 0.5 / nominal.n_pairs)])

    losses: list[float] = []
    for epoch in range(epochs):
        losses.append(bc_loss(net, expert, nominal))
        predictions = nn.forward(net.params, inputs)[:, 0]
        # d(cross-entropy)/d(logit) = prediction - label
        grad_logits = (balance * (predictions - labels))[:, None]
        grads = nn.backward(net.params, inputs, grad_logits, wrt_logits=True)
        params, optimizer = nn.adam_step(net.params, grads, optimizer)
        net = net.with_params(params)
        logger.debug(f"bc epoch {epoch}: loss={losses[-1]:.5f}")
    return BcResult(net, optimizer, tuple(losses))


def gc_reward(reward: float | np.ndarray, zeta: float | np.ndarray) -> float | np.ndarray:
    """``r + log zeta`` with ``zeta`` clamped into (0, 1)."""
    clamped = np.clip(zeta, nn.SIGMOID_EPS, 1.0 - nn.SIGMOID_EPS)
    out = np.asarray(reward, dtype=np.float64) + np.log(clamped)
    return float(out) if np.ndim(out) == 0 else out


def gc_reward_fn(env: Env, net: DiscriminatorNet) -> StepFn:
    def reward(transitions: Sequence[Transition]) -> np.ndarray:
        env_rewards = np.array([t.reward for t in transitions])
        return gc_reward(env_rewards, net.scores(transition_features(env, transitions)))

    return reward


@dataclass(frozen=True, slots=True)
class GcResult:
    discriminator: DiscriminatorNet
    bundle: PolicyBundle
    timesteps: int
    history: tuple[dict[str, float], ...]
    # Discriminator Adam state; None until the discriminator has trained.
    optimizer: nn.AdamState | None = None


def gc_train(
    env: Env,
    expert: Sequence[Trajectory],
    config: RunConfig,
    rng: np.random.Generator,
    *,
    iterations: int | None = None,
    discriminator: DiscriminatorNet | None = None,
    bundle: PolicyBundle | None = None,
    train_discriminator: bool = True,
    optimizer: nn.AdamState | None = None,
) -> GcResult:
    """Alternate PPO on ``r + log zeta`` with one discriminator epoch per rollout round.

    The multiplier is pinned at 0: the constraint only enters through the
    shaped reward. Pass the previous result's ``optimizer`` to continue the
    discriminator's Adam moments across calls.
    """

    if discriminator is None:
        discriminator = init_constraint_net(env, config.backward, rng)
    if bundle is None:
        bundle = init_bundle(env, config.forward, rng)
    bundle = replace(bundle, lam=0.0)
    expert_pairs = PairBatch.from_trajectories(env, expert)
    rounds = config.iterations * config.forward.forward_epochs if iterations is None else iterations
    history: list[dict[str, float]] = []
    timesteps = 0

    for i in range(rounds):
        batch = collect_rollouts(env, bundle, rng, config.forward, reward_fn=gc_reward_fn(env, discriminator))
        bundle, stats = ppo_update(bundle, batch, config.forward, rng)
        timesteps += batch.size
        loss = float("nan")
        if train_discriminator:
            nominal_pairs = PairBatch.from_trajectories(env, batch.trajectories)
            result = bc_train(discriminator, expert_pairs, nominal_pairs, 1, config.backward.learning_rate, optimizer)
            discriminator, optimizer = result.net, result.optimizer
            loss = result.losses[0]
        row = {"round": float(i), "return": float(np.mean(batch.episode_returns)), "disc_loss": loss, "kl": stats.approx_kl}
        history.append(row)
        logger.info(f"gc round {i}: return={row['return']:.3f} disc_loss={loss:.4f}")

    return GcResult(discriminator, bundle, timesteps, tuple(history), optimizer)
