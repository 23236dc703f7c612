"""Action distributions on top of :mod:`icrl_lab.nn` networks.

Discrete policies are a softmax over actions. Continuous policies are a
diagonal Gaussian whose mean is ``action_high * tanh(net(obs))`` and whose
log standard deviation is a learned, state-independent vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import nn
from .errors import NetworkShapeError

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, slots=True)
class Policy:
    """Policy network plus, for continuous actions, its log-std vector."""

    net: nn.MlpParams
    log_std: np.ndarray
    discrete: bool
    action_high: float = 1.0

    def __post_init__(self) -> None:
        log_std = np.array(self.log_std, dtype=np.float64).reshape(-1)
        log_std.setflags(write=False)
        object.__setattr__(self, "log_std", log_std)
        if self.discrete:
            if self.net.output_activation != "softmax":
                raise ValueError("discrete policies need a softmax output")
            if log_std.size:
                raise NetworkShapeError("log_std", 0, log_std.size)
        elif log_std.shape != (self.net.output_dim,):
            raise NetworkShapeError("log_std", (self.net.output_dim,), log_std.shape)

    @property
    def size(self) -> int:
        return self.net.size + self.log_std.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.net.flat(), self.log_std])

    def with_flat(self, vector: np.ndarray) -> Policy:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise NetworkShapeError("flat policy vector", (self.size,), vector.shape)
        return Policy(self.net.with_flat(vector[: self.net.size]), vector[self.net.size :], self.discrete, self.action_high)

    def probabilities(self, observations: np.ndarray) -> np.ndarray:
        """Action probabilities, shape (n, n_actions). Discrete only."""
        return nn.forward(self.net, np.atleast_2d(observations))

    def mean(self, observations: np.ndarray) -> np.ndarray:
        """Gaussian mean, shape (n, action_dim). Continuous only."""
        return self.action_high * np.tanh(nn.logits(self.net, np.atleast_2d(observations)))

    def sample(self, observation: np.ndarray, rng: np.random.Generator, *, deterministic: bool = False) -> int | np.ndarray:
        if self.discrete:
            probs = self.probabilities(observation)[0]
            if deterministic:
                return int(np.argmax(probs))
            return int(rng.choice(probs.size, p=probs))
        mean = self.mean(observation)[0]
        if deterministic:
            return mean
        return mean + np.exp(self.log_std) * rng.standard_normal(mean.size)

    def log_prob(self, observations: np.ndarray, actions: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(observations)
        if self.discrete:
            idx = np.asarray(actions, dtype=np.int64).reshape(-1)
            log_p = special.log_softmax(nn.logits(self.net, obs), axis=-1)
            return log_p[np.arange(idx.size), idx]
        acts = np.asarray(actions, dtype=np.float64).reshape(obs.shape[0], -1)
        z = (acts - self.mean(obs)) / np.exp(self.log_std)
        return np.sum(-0.5 * z**2 - self.log_std - 0.5 * _LOG_2PI, axis=1)

    def entropy(self, observations: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(observations)
        if self.discrete:
            log_p = special.log_softmax(nn.logits(self.net, obs), axis=-1)
            return -np.sum(np.exp(log_p) * log_p, axis=1)
        per_dim = self.log_std + 0.5 * (_LOG_2PI + 1.0)
        return np.full(obs.shape[0], float(np.sum(per_dim)))

    def gradient(
        self,
        observations: np.ndarray,
        actions: np.ndarray,
        log_prob_weights: np.ndarray,
        entropy_weight: float = 0.0,
    ) -> np.ndarray:
        """Flat gradient of ``sum_i w_i log pi(a_i|s_i) + entropy_weight * sum_i H(s_i)``."""
        obs = np.atleast_2d(observations)
        w = np.asarray(log_prob_weights, dtype=np.float64).reshape(-1)
        n = obs.shape[0]
        if w.shape != (n,):
            raise NetworkShapeError("log_prob_weights", (n,), w.shape)

        z = nn.logits(self.net, obs)
        if self.discrete:
            idx = np.asarray(actions, dtype=np.int64).reshape(-1)
            log_p = special.log_softmax(z, axis=-1)
            p = np.exp(log_p)
            one_hot = np.zeros_like(p)
            one_hot[np.arange(n), idx] = 1.0
            dz = w[:, None] * (one_hot - p)
            if entropy_weight:
                h = -np.sum(p * log_p, axis=1, keepdims=True)
                dz -= entropy_weight * p * (log_p + h)
            net_grad = nn.backward(self.net, obs, dz, wrt_logits=True)
            return net_grad.flat()

        acts = np.asarray(actions, dtype=np.float64).reshape(n, -1)
        squash = np.tanh(z)
        std = np.exp(self.log_std)
        diff = acts - self.action_high * squash
        d_mean = w[:, None] * diff / std**2
        dz = d_mean * self.action_high * (1.0 - squash**2)
        d_log_std = np.sum(w[:, None] * (diff**2 / std**2 - 1.0), axis=0)
        if entropy_weight:
            d_log_std = d_log_std + entropy_weight * n
        net_grad = nn.backward(self.net, obs, dz, wrt_logits=True)
        return np.concatenate([net_grad.flat(), d_log_std])


def init_policy(
    obs_dim: int,
    action_dim: int,
    hidden: tuple[int, ...],
    rng: np.random.Generator,
    *,
    discrete: bool,
    action_high: float = 1.0,
    init_log_std: float = -0.5,
) -> Policy:
    net = nn.init_mlp(
        (obs_dim, *hidden, action_dim),
        rng,
        output_activation="softmax" if discrete else "identity",
        output_gain=0.01,
    )
    log_std = np.zeros(0) if discrete else np.full(action_dim, init_log_std)
    return Policy(net, log_std, discrete, action_high)
