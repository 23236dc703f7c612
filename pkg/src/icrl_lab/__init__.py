"""icrl_lab

A desk-scale laboratory for inverse constrained reinforcement learning:
learn which state-action pairs an expert avoids, as a sigmoid constraint
network, by alternating a Lagrangian PPO forward step with a
maximum-likelihood backward step.
"""

from .backward import ConstraintNet, PairBatch, backward_phase, grad_step, kl_bounds
from .config import RunConfig, load_config
from .driver import evaluate, generate_expert, train, transfer
from .envs import make_env
from .errors import (
    ConfigError,
    DatasetError,
    EnvError,
    FeatureMismatchError,
    IcrlLabError,
    NetworkShapeError,
    NonConvergenceError,
    NonFiniteError,
)
from .forward import solve_forward
from .models import EnvMode

__all__ = [
    "ConstraintNet",
    "PairBatch",
    "backward_phase",
    "grad_step",
    "kl_bounds",
    "RunConfig",
    "load_config",
    "evaluate",
    "generate_expert",
    "train",
    "transfer",
    "make_env",
    "EnvMode",
    "solve_forward",
    "IcrlLabError",
    "ConfigError",
    "DatasetError",
    "EnvError",
    "FeatureMismatchError",
    "NetworkShapeError",
    "NonConvergenceError",
    "NonFiniteError",
]
