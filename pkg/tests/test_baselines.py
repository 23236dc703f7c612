import math

import numpy as np
import pytest

from icrl_lab import nn
from icrl_lab.backward import ConstraintNet, PairBatch, permissive_constraint_net
from icrl_lab.baselines import bc_loss, bc_train, gc_reward, gc_train
from icrl_lab.config import BackwardConfig, ForwardConfig, RunConfig
from icrl_lab.envs import make_env
from icrl_lab.errors import DatasetError
from icrl_lab.models import Trajectory


def _one_d_net(seed: int = 0) -> ConstraintNet:
    params = nn.init_mlp((1, 1), np.random.default_rng(seed), output_activation="sigmoid", scheme="uniform")
    return ConstraintNet(params, (0,))


def _batch(values: list[float]) -> PairBatch:
    feats = np.array(values)[:, None]
    return PairBatch(feats, np.zeros(len(values), dtype=np.int64), np.ones(1))


def test_bc_separates_linearly_separable_classes() -> None:
    expert = _batch([1.0] * 5)
    nominal = _batch([-1.0] * 5)
    result = bc_train(_one_d_net(), expert, nominal, epochs=500, learning_rate=0.1)
    assert result.net.scores(np.array([[1.0]]))[0] > 0.9
    assert result.net.scores(np.array([[-1.0]]))[0] < 0.1


def test_bc_on_identical_classes_stays_near_half() -> None:
    data = _batch([0.5, -0.3, 1.2])
    result = bc_train(_one_d_net(1), data, data, epochs=300, learning_rate=0.05)
    assert result.net.scores(data.features) == pytest.approx(np.full(3, 0.5), abs=0.05)


def test_bc_zero_epochs_returns_initial_net() -> None:
    net = _one_d_net()
    result = bc_train(net, _batch([1.0]), _batch([-1.0]), epochs=0, learning_rate=0.1)
    assert np.array_equal(result.net.params.flat(), net.params.flat())
    assert result.losses == ()


def test_bc_loss_is_non_increasing_full_batch() -> None:
    result = bc_train(_one_d_net(2), _batch([1.0, 0.8]), _batch([-1.0, -0.5]), epochs=50, learning_rate=0.01)
    assert all(b <= a + 1e-12 for a, b in zip(result.losses, result.losses[1:]))
    assert result.losses[0] == pytest.approx(bc_loss(_one_d_net(2), _batch([1.0, 0.8]), _batch([-1.0, -0.5])))


def test_bc_needs_both_classes() -> None:
    empty = PairBatch(np.zeros((0, 1)), np.zeros(0, dtype=np.int64), np.ones(1))
    with pytest.raises(DatasetError, match="both"):
        bc_train(_one_d_net(), _batch([1.0]), empty, epochs=1, learning_rate=0.1)


def test_gc_reward_values() -> None:
    assert gc_reward(3.0, 0.5) == pytest.approx(3.0 + math.log(0.5))
    assert gc_reward(3.0, 0.5) == pytest.approx(2.307, abs=1e-3)
    assert gc_reward(0.0, 1e-6) == pytest.approx(-13.8155, abs=1e-3)
    assert gc_reward(2.0, 1.0) == pytest.approx(2.0, abs=1e-5)


def test_gc_reward_is_monotone_in_score() -> None:
    scores = np.linspace(0.01, 0.99, 25)
    shaped = gc_reward(np.zeros(25), scores)
    assert np.all(np.diff(shaped) > 0.0)


def _gc_config() -> RunConfig:
    return RunConfig(
        forward=ForwardConfig(hidden_sizes=(8,), batch_size=32, rollout_steps=32, ppo_epochs=2, forward_epochs=2),
        backward=BackwardConfig(hidden_sizes=(4,)),
        iterations=1,
    )


def _expert_trajectories(env):
    state = env.reset()
    transitions = []
    for action in (0, 0):
        tr = env.step(state, action)
        transitions.append(tr)
        state = tr.next_state
    return [Trajectory(tuple(transitions))]


def test_gc_zero_rounds_returns_initial_nets() -> None:
    env = make_env("two_path")
    rng = np.random.default_rng(0)
    disc = permissive_constraint_net(env)
    result = gc_train(env, _expert_trajectories(env), _gc_config(), rng, iterations=0, discriminator=disc)
    assert result.discriminator is disc
    assert result.timesteps == 0
    assert result.bundle.lam == 0.0


def test_gc_frozen_discriminator_leaves_it_untouched() -> None:
    env = make_env("two_path")
    rng = np.random.default_rng(1)
    disc = permissive_constraint_net(env)
    result = gc_train(env, _expert_trajectories(env), _gc_config(), rng, iterations=2, discriminator=disc, train_discriminator=False)
    assert np.array_equal(result.discriminator.params.flat(), disc.params.flat())
    assert len(result.history) == 2
    assert result.timesteps >= 64


def test_gc_trains_discriminator_each_round() -> None:
    env = make_env("two_path")
    rng = np.random.default_rng(2)
    result = gc_train(env, _expert_trajectories(env), _gc_config(), rng)
    # default rounds: iterations * forward_epochs
    assert len(result.history) == 2
    assert all(np.isfinite(row["disc_loss"]) for row in result.history)


def test_gc_discriminator_optimizer_carries_across_calls() -> None:
    env = make_env("two_path")
    rng = np.random.default_rng(3)
    config = _gc_config()
    first = gc_train(env, _expert_trajectories(env), config, rng, iterations=2)
    assert first.optimizer is not None
    assert first.optimizer.step == 2

    second = gc_train(
        env,
        _expert_trajectories(env),
        config,
        rng,
        iterations=3,
        discriminator=first.discriminator,
        bundle=first.bundle,
        optimizer=first.optimizer,
    )
    assert second.optimizer.step == 5
    assert not np.array_equal(second.optimizer.m, np.zeros_like(second.optimizer.m))


def test_gc_frozen_discriminator_has_no_optimizer() -> None:
    env = make_env("two_path")
    result = gc_train(
        env, _expert_trajectories(env), _gc_config(), np.random.default_rng(4), iterations=1, train_discriminator=False
    )
    assert result.optimizer is None
