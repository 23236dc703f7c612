"""The constraint learner.

``zeta(s, a)`` is a sigmoid network scoring how feasible a pair is; its cost
is ``1 - zeta``. A backward phase raises the MaxEnt likelihood of the expert
data: expert pairs push ``log zeta`` up, pairs sampled from the current
policy push it down (reweighted by ``zeta / zeta_old`` once ``zeta`` has
moved away from the network the samples came from), and a sparsity term
pulls every visited pair towards 1. The phase stops when the importance
weights imply the induced policy has drifted too far.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
import logging

import numpy as np
from scipy import special

from . import nn
from .config import BackwardConfig
from .envs import Env
from .errors import FeatureMismatchError, NetworkShapeError, NonFiniteError
from .forward import StepFn
from .models import Trajectory, Transition

logger = logging.getLogger(__name__)

WEIGHT_CLIP = (1e-3, 1e3)


@dataclass(frozen=True, slots=True)
class ConstraintNet:
    """Sigmoid network over a fixed subset of an environment's features."""

    params: nn.MlpParams
    input_features: tuple[int, ...]
    feature_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_features", tuple(int(i) for i in self.input_features))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.params.output_activation != "sigmoid" or self.params.output_dim != 1:
            raise ValueError("constraint networks need a single sigmoid output")
        if self.params.input_dim != len(self.input_features):
            raise NetworkShapeError("constraint input features", self.params.input_dim, len(self.input_features))
        if self.feature_names and len(self.feature_names) != len(self.input_features):
            raise ValueError("feature_names must name every input feature")

    def with_params(self, params: nn.MlpParams) -> ConstraintNet:
        return ConstraintNet(params, self.input_features, self.feature_names)

    def select(self, features: np.ndarray) -> np.ndarray:
        return np.atleast_2d(features)[:, list(self.input_features)]

    def scores(self, features: np.ndarray) -> np.ndarray:
        """``zeta`` for each row of full feature vectors."""
        return nn.forward(self.params, self.select(features))[:, 0]

    def log_scores(self, features: np.ndarray) -> np.ndarray:
        return np.log(self.scores(features))

    def costs(self, features: np.ndarray) -> np.ndarray:
        return 1.0 - self.scores(features)

    def cost_fn(self, env: Env) -> StepFn:
        def cost(transitions: Sequence[Transition]) -> np.ndarray:
            return self.costs(transition_features(env, transitions))

        return cost

    def bind(self, env: Env) -> ConstraintNet:
        """Re-index this net onto ``env``'s feature layout by feature name."""
        if not self.feature_names:
            n_features = len(env.spec.feature_names)
            missing = [f"feature #{i}" for i in self.input_features if i >= n_features]
            if missing:
                raise FeatureMismatchError(missing)
            return self
        return ConstraintNet(self.params, env.resolve_features(self.feature_names), self.feature_names)


def init_constraint_net(env: Env, config: BackwardConfig, rng: np.random.Generator) -> ConstraintNet:
    indices = env.resolve_features(config.features)
    names = tuple(env.spec.feature_names[i] for i in indices)
    params = nn.init_mlp((len(indices), *config.hidden_sizes, 1), rng, output_activation="sigmoid", scheme="uniform")
    return ConstraintNet(params, indices, names)


def permissive_constraint_net(env: Env, features: Sequence[str] = (), bias: float = 20.0) -> ConstraintNet:
    """``zeta`` at the clamp ceiling everywhere: no constraint at all."""
    indices = env.resolve_features(features)
    names = tuple(env.spec.feature_names[i] for i in indices)
    params = nn.MlpParams((np.zeros((1, len(indices))),), (np.array([bias]),), "tanh", "sigmoid")
    return ConstraintNet(params, indices, names)


def transition_features(env: Env, transitions: Sequence[Transition]) -> np.ndarray:
    return np.stack([env.features(t.state, t.action) for t in transitions])


@dataclass(frozen=True, slots=True)
class PairBatch:
    """State-action pairs pooled from trajectories.

    ``trajectory_scale`` is the weight of each trajectory in the estimator:
    ``1/N`` for N sampled trajectories, or exact probabilities when the
    trajectories are enumerated.
    """

    features: np.ndarray
    trajectory_ids: np.ndarray
    trajectory_scale: np.ndarray

    def __post_init__(self) -> None:
        feats = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        ids = np.asarray(self.trajectory_ids, dtype=np.int64)
        scale = np.asarray(self.trajectory_scale, dtype=np.float64)
        if ids.shape != (feats.shape[0],):
            raise ValueError("one trajectory id per pair required")
        if ids.size and (ids.min() < 0 or ids.max() >= scale.size):
            raise ValueError("trajectory ids out of range")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "trajectory_ids", ids)
        object.__setattr__(self, "trajectory_scale", scale)

    @classmethod
    def from_trajectories(cls, env: Env, trajectories: Sequence[Trajectory]) -> PairBatch:
        if not trajectories:
            raise ValueError("at least one trajectory is required")
        feats = [transition_features(env, traj.transitions) for traj in trajectories]
        ids = np.concatenate([np.full(len(f), i) for i, f in enumerate(feats)])
        n = len(trajectories)
        return cls(np.concatenate(feats), ids, np.full(n, 1.0 / n))

    @property
    def n_pairs(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_trajectories(self) -> int:
        return int(self.trajectory_scale.size)

    @property
    def pair_scale(self) -> np.ndarray:
        return self.trajectory_scale[self.trajectory_ids]

    def per_trajectory(self, values: np.ndarray) -> np.ndarray:
        """Sum per-pair ``values`` within each trajectory."""
        return np.bincount(self.trajectory_ids, weights=values, minlength=self.n_trajectories)


def log_traj_score(net: ConstraintNet, features: np.ndarray) -> float:
    return float(np.sum(net.log_scores(features)))


def traj_score(net: ConstraintNet, features: np.ndarray) -> float:
    """``zeta(tau)``: product of per-step scores, accumulated in log space."""
    return float(np.exp(log_traj_score(net, features)))


def importance_weights(net: ConstraintNet, old_net: ConstraintNet, batch: PairBatch) -> tuple[np.ndarray, np.ndarray]:
    """Per-step ``zeta / zeta_old`` and the per-trajectory product."""
    if net.input_features != old_net.input_features:
        raise FeatureMismatchError([f"input features {net.input_features} vs {old_net.input_features}"])
    log_ratio = net.log_scores(batch.features) - old_net.log_scores(batch.features)
    return np.exp(log_ratio), np.exp(batch.per_trajectory(log_ratio))


def kl_bounds_from_log(log_weights: np.ndarray, probabilities: np.ndarray | None = None) -> tuple[float, float]:
    """Bounds on the divergences between the old and new induced policies.

    Forward: ``2 log mean(w)``. Reverse: ``mean((w - mean(w)) log w) / mean(w)``.
    Expectations use ``probabilities`` when given (exact) or the sample mean.
    """

    log_w = np.asarray(log_weights, dtype=np.float64).reshape(-1)
    if log_w.size == 0:
        raise ValueError("kl_bounds needs at least one weight")
    if not np.all(np.isfinite(log_w)):
        raise NonFiniteError("non-finite importance weight")
    p = np.full(log_w.size, 1.0 / log_w.size) if probabilities is None else np.asarray(probabilities, dtype=np.float64)
    if p.shape != log_w.shape or np.any(p < 0.0) or not np.isclose(p.sum(), 1.0):
        raise ValueError("probabilities must be a distribution over the weights")
    log_mean = float(special.logsumexp(log_w, b=p))
    if not np.isfinite(log_mean):
        raise NonFiniteError("mean importance weight is not positive")
    forward = 2.0 * log_mean
    reverse = float(np.sum(p * np.expm1(log_w - log_mean) * log_w))
    return forward, reverse


def kl_bounds(trajectory_weights: np.ndarray, probabilities: np.ndarray | None = None) -> tuple[float, float]:
    w = np.asarray(trajectory_weights, dtype=np.float64)
    if np.any(w <= 0.0):
        raise ValueError("importance weights must be > 0")
    return kl_bounds_from_log(np.log(w), probabilities)


def grad_step(
    net: ConstraintNet,
    expert: PairBatch,
    nominal: PairBatch,
    weights: np.ndarray | None = None,
    *,
    regularizer: float = 0.0,
    trajectory_regularizer: bool = False,
    nominal_index: np.ndarray | None = None,
) -> tuple[nn.MlpParams, float]:
    """Ascent direction and value of the regularized likelihood objective.

    ``sum_e c_e log zeta - sum_n c_n w log zeta - delta * sum |1 - zeta|``
    with ``c`` the per-trajectory scale of each pair. ``nominal_index``
    restricts the nominal sum to a pair minibatch (rescaled to stay unbiased).
    """

    if trajectory_regularizer and nominal_index is not None:
        raise ValueError("the trajectory-level regularizer needs whole trajectories, not a pair minibatch")
    n_weights = np.ones(nominal.n_pairs) if weights is None else np.asarray(weights, dtype=np.float64)
    if n_weights.shape != (nominal.n_pairs,):
        raise ValueError("one importance weight per nominal pair required")
    if not np.all(np.isfinite(n_weights)):
        raise NonFiniteError("importance weights are not finite; step rejected")

    n_scale = nominal.pair_scale * n_weights
    n_feats = nominal.features
    if nominal_index is not None:
        idx = np.asarray(nominal_index, dtype=np.int64)
        n_scale = n_scale[idx] * (nominal.n_pairs / idx.size)
        n_feats = n_feats[idx]

    e_scale = expert.pair_scale
    e_zeta = net.scores(expert.features)
    n_zeta = net.scores(n_feats)
    objective = float(np.sum(e_scale * np.log(e_zeta)) - np.sum(n_scale * np.log(n_zeta)))
    e_grad = e_scale / e_zeta
    n_grad = -n_scale / n_zeta

    if regularizer:
        if trajectory_regularizer:
            e_grad = e_grad + _trajectory_regularizer_grad(expert, e_zeta, regularizer)
            n_grad = n_grad + _trajectory_regularizer_grad(nominal, n_zeta, regularizer)
            objective -= regularizer * float(
                np.sum(expert.trajectory_scale * -np.expm1(expert.per_trajectory(np.log(e_zeta))))
                + np.sum(nominal.trajectory_scale * -np.expm1(nominal.per_trajectory(np.log(n_zeta))))
            )
        else:
            n_reg_scale = nominal.pair_scale if nominal_index is None else nominal.pair_scale[nominal_index] * (
                nominal.n_pairs / len(nominal_index)
            )
            e_grad = e_grad + regularizer * e_scale
            n_grad = n_grad + regularizer * n_reg_scale
            objective -= regularizer * float(np.sum(e_scale * (1.0 - e_zeta)) + np.sum(n_reg_scale * (1.0 - n_zeta)))

    inputs = np.concatenate([net.select(expert.features), net.select(n_feats)])
    out_grad = np.concatenate([e_grad, n_grad])[:, None]
    if not np.all(np.isfinite(out_grad)):
        raise NonFiniteError("constraint gradient is not finite")
    return nn.backward(net.params, inputs, out_grad), objective


def _trajectory_regularizer_grad(batch: PairBatch, zeta: np.ndarray, regularizer: float) -> np.ndarray:
    # d/dzeta_t of delta * c * zeta(tau) = delta * c * zeta(tau) / zeta_t
    traj_zeta = np.exp(batch.per_trajectory(np.log(zeta)))
    return regularizer * batch.pair_scale * traj_zeta[batch.trajectory_ids] / zeta


@dataclass(frozen=True, slots=True)
class PhaseReport:
    iterations: int
    forward_bound: float
    reverse_bound: float
    objective: float
    stopped_early: bool


def backward_phase(
    net: ConstraintNet,
    expert: PairBatch,
    nominal: PairBatch,
    config: BackwardConfig,
    rng: np.random.Generator,
    *,
    use_importance_sampling: bool = True,
    use_early_stopping: bool = True,
) -> tuple[ConstraintNet, PhaseReport]:
    """Up to ``config.iterations`` Adam ascent steps on the constraint network.

    ``nominal`` must come from the policy solved against ``net``; ``net`` is
    kept as the sampling network for the importance weights and the KL
    bounds. Each step is followed by the bound check; with early stopping
    on, the phase ends once either bound reaches its threshold.
    """

    old = net
    optimizer = nn.adam_init(net.params.size, config.learning_rate)
    forward_bound = reverse_bound = 0.0
    objective = 0.0
    stopped = False
    iterations = 0
    minibatch = config.minibatch_size if not config.trajectory_regularizer else None

    for _ in range(config.iterations):
        if use_importance_sampling:
            step_w, _ = importance_weights(net, old, nominal)
            weights = np.clip(step_w, *WEIGHT_CLIP)
        else:
            weights = np.ones(nominal.n_pairs)
        index = None
        if minibatch is not None and minibatch < nominal.n_pairs:
            index = rng.permutation(nominal.n_pairs)[:minibatch]
        direction, objective = grad_step(
            net,
            expert,
            nominal,
            weights,
            regularizer=config.regularizer,
            trajectory_regularizer=config.trajectory_regularizer,
            nominal_index=index,
        )
        params, optimizer = nn.adam_step(net.params, direction, optimizer, maximize=True)
        net = net.with_params(params)
        iterations += 1

        log_ratio = net.log_scores(nominal.features) - old.log_scores(nominal.features)
        forward_bound, reverse_bound = kl_bounds_from_log(nominal.per_trajectory(log_ratio))
        logger.debug(
            f"backward iteration {iterations}: objective={objective:.5f} "
            f"forward_bound={forward_bound:.4f} reverse_bound={reverse_bound:.4f}"
        )
        if use_early_stopping and (forward_bound >= config.max_forward_kl or reverse_bound >= config.max_reverse_kl):
            stopped = True
            break

    report = PhaseReport(iterations, forward_bound, reverse_bound, objective, stopped)
    logger.info(
        f"backward phase: iterations={report.iterations} forward_bound={forward_bound:.4f} "
        f"reverse_bound={reverse_bound:.4f} stopped_early={stopped}"
    )
    return net, report


def score_table(net: ConstraintNet, env: Env) -> np.ndarray:
    """(n_states, n_actions) table of ``zeta`` for a finite environment."""
    tabular = env.to_tabular()
    rows = [
        env.features(np.array([float(s)]), a) for s in range(tabular.n_states) for a in range(tabular.n_actions)
    ]
    return net.scores(np.stack(rows)).reshape(tabular.n_states, tabular.n_actions)
