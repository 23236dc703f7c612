"""Small feedforward networks with hand-written backprop and Adam.

Everything the constraint classifier and the policy/value networks need:

- :class:`MlpParams`: immutable container of per-layer weights and biases
- :func:`forward` / :func:`backward`: batched evaluation and exact gradients
- :class:`AdamState` / :func:`adam_step`: adaptive-moment updates

Parameters are read-only numpy arrays; every update returns a new value.
All math is float64.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import special

from .errors import NetworkShapeError, NonFiniteError


FORMAT_VERSION = 1

# Sigmoid outputs are clamped here so log() and ratios stay finite.
SIGMOID_EPS = 1e-6

HIDDEN_ACTIVATIONS = {"tanh"}
OUTPUT_ACTIVATIONS = {"sigmoid", "identity", "softmax"}


def _frozen(array: Any) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, slots=True)
class MlpParams:
    """Weights are stored ``(out, in)``; biases ``(out,)``."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self) -> None:
        weights = tuple(_frozen(w) for w in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

        if not weights:
            raise NetworkShapeError("layer count", ">= 1", 0)
        if len(weights) != len(biases):
            raise NetworkShapeError("bias count", len(weights), len(biases))
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {sorted(HIDDEN_ACTIVATIONS)}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {sorted(OUTPUT_ACTIVATIONS)}")

        for i, (w, b) in enumerate(zip(weights, biases, strict=True)):
            if w.ndim != 2:
                raise NetworkShapeError(f"layer {i} weight rank", 2, w.ndim)
            if b.shape != (w.shape[0],):
                raise NetworkShapeError(f"layer {i} bias shape", (w.shape[0],), b.shape)
            if i > 0 and w.shape[1] != weights[i - 1].shape[0]:
                raise NetworkShapeError(f"layer {i} input size", weights[i - 1].shape[0], w.shape[1])
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteError(f"layer {i} holds non-finite parameters")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1], *(w.shape[0] for w in self.weights))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases, strict=True))

    def flat(self) -> np.ndarray:
        """Concatenate all parameters (row-major, layer by layer, W then b)."""
        parts: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases, strict=True):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def with_flat(self, vector: np.ndarray) -> MlpParams:
        """Return a copy with the same shapes holding ``vector``'s values."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.size,):
            raise NetworkShapeError("flat parameter vector", (self.size,), vector.shape)
        weights: list[np.ndarray] = []
        biases: list[np.ndarray] = []
        offset = 0
        for w, b in zip(self.weights, self.biases, strict=True):
            weights.append(vector[offset : offset + w.size].reshape(w.shape))
            offset += w.size
            biases.append(vector[offset : offset + b.size])
            offset += b.size
        return MlpParams(tuple(weights), tuple(biases), self.hidden_activation, self.output_activation)

    def zeros_like(self) -> MlpParams:
        return self.with_flat(np.zeros(self.size))


def init_mlp(
    layer_dims: Sequence[int],
    rng: np.random.Generator,
    *,
    output_activation: str = "identity",
    scheme: str = "orthogonal",
    output_gain: float = 1.0,
) -> MlpParams:
    """Build a seeded network.

    ``scheme="orthogonal"`` uses orthogonal matrices (gain sqrt(2) on hidden
    layers, ``output_gain`` on the last one); ``"uniform"`` draws from
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)). Biases start at zero.
    """

    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ValueError("layer_dims must list at least two positive sizes")

    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    n_layers = len(dims) - 1
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        if scheme == "orthogonal":
            gain = output_gain if i == n_layers - 1 else np.sqrt(2.0)
            weights.append(gain * _orthogonal(fan_out, fan_in, rng))
        elif scheme == "uniform":
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        else:
            raise ValueError("scheme must be 'orthogonal' or 'uniform'")
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases), "tanh", output_activation)


def _orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def _as_batch(params: MlpParams, inputs: Any) -> tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        actual = x.shape[-1] if x.ndim >= 1 else 0
        raise NetworkShapeError("input size", params.input_dim, actual)
    return x, single


def _forward_cache(params: MlpParams, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
    """Return hidden activations (input first), output logits and outputs."""
    activations = [x]
    a = x
    last = len(params.weights) - 1
    z = a
    for i, (w, b) in enumerate(zip(params.weights, params.biases, strict=True)):
        z = a @ w.T + b
        if i < last:
            a = np.tanh(z)
            activations.append(a)
    return activations, z, _output(params.output_activation, z)


def _output(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "sigmoid":
        return np.clip(special.expit(z), SIGMOID_EPS, 1.0 - SIGMOID_EPS)
    if kind == "softmax":
        return special.softmax(z, axis=-1)
    return z


def forward(params: MlpParams, inputs: Any) -> np.ndarray:
    """Evaluate the network on a vector ``(in,)`` or a batch ``(n, in)``."""
    x, single = _as_batch(params, inputs)
    _, _, y = _forward_cache(params, x)
    return y[0] if single else y


def logits(params: MlpParams, inputs: Any) -> np.ndarray:
    """Pre-activation output of the last layer."""
    x, single = _as_batch(params, inputs)
    _, z, _ = _forward_cache(params, x)
    return z[0] if single else z


def backward(
    params: MlpParams,
    inputs: Any,
    output_grad: Any,
    *,
    wrt_logits: bool = False,
) -> MlpParams:
    """Gradient of ``sum(output_grad * output)`` w.r.t. every parameter.

    Batched inputs sum their per-row gradients. With ``wrt_logits=True`` the
    given gradient is taken to be w.r.t. the last pre-activation, skipping
    the output nonlinearity. Sigmoid outputs pinned at the clamp get zero
    gradient, matching the clamped forward pass.
    """

    x, single = _as_batch(params, inputs)
    g = np.asarray(output_grad, dtype=np.float64)
    if single and g.ndim == 1:
        g = g[None, :]
    if g.shape != (x.shape[0], params.output_dim):
        raise NetworkShapeError("output_grad shape", (x.shape[0], params.output_dim), g.shape)

    activations, z, _ = _forward_cache(params, x)
    if wrt_logits or params.output_activation == "identity":
        delta = g
    elif params.output_activation == "sigmoid":
        s = special.expit(z)
        pinned = (s < SIGMOID_EPS) | (s > 1.0 - SIGMOID_EPS)
        delta = np.where(pinned, 0.0, g * s * (1.0 - s))
    else:
        y = special.softmax(z, axis=-1)
        delta = y * (g - np.sum(g * y, axis=-1, keepdims=True))

    n_layers = len(params.weights)
    grad_w: list[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: list[np.ndarray] = [np.empty(0)] * n_layers
    for i in range(n_layers - 1, -1, -1):
        a_prev = activations[i]
        grad_w[i] = delta.T @ a_prev
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * (1.0 - a_prev**2)
    return MlpParams(tuple(grad_w), tuple(grad_b), params.hidden_activation, params.output_activation)


def finite_difference_gradient(fn: Callable[[np.ndarray], float], vector: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat vector."""
    vector = np.asarray(vector, dtype=np.float64)
    grad = np.zeros_like(vector)
    for i in range(vector.size):
        up = vector.copy()
        down = vector.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2.0 * h)
    return grad


@dataclass(frozen=True, slots=True)
class AdamState:
    """First/second moment accumulators for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", _frozen(self.m))
        object.__setattr__(self, "v", _frozen(self.v))
        if self.m.shape != self.v.shape:
            raise NetworkShapeError("adam moments", self.m.shape, self.v.shape)
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if self.step < 0:
            raise ValueError("step must be >= 0")


def adam_init(size: int, learning_rate: float, **kwargs: float) -> AdamState:
    return AdamState(np.zeros(size), np.zeros(size), 0, learning_rate, **kwargs)


def adam_update(
    vector: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    *,
    maximize: bool = False,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam step on a flat vector."""
    vector = np.asarray(vector, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape or vector.shape != state.m.shape:
        raise NetworkShapeError("adam gradient", state.m.shape, grad.shape)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("refusing Adam step on non-finite gradient")
    if maximize:
        grad = -grad

    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    updated = vector - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated, AdamState(m, v, step, state.learning_rate, state.beta1, state.beta2, state.eps)


def adam_step(
    params: MlpParams,
    grads: MlpParams,
    state: AdamState,
    *,
    maximize: bool = False,
) -> tuple[MlpParams, AdamState]:
    """Adam on a network; ``maximize=True`` turns it into gradient ascent."""
    if grads.layer_dims != params.layer_dims:
        raise NetworkShapeError("gradient layer dims", params.layer_dims, grads.layer_dims)
    vector, state = adam_update(params.flat(), grads.flat(), state, maximize=maximize)
    return params.with_flat(vector), state


def params_to_dict(params: MlpParams) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "layer_dims": list(params.layer_dims),
        "hidden_activation": params.hidden_activation,
        "output_activation": params.output_activation,
        "weights": [w.ravel().tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(data: dict[str, Any]) -> MlpParams:
    version = int(data.get("format_version", -1))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported network format_version {version}")
    dims = [int(d) for d in data["layer_dims"]]
    weights = tuple(
        np.asarray(w, dtype=np.float64).reshape(dims[i + 1], dims[i]) for i, w in enumerate(data["weights"])
    )
    biases = tuple(np.asarray(b, dtype=np.float64) for b in data["biases"])
    return MlpParams(weights, biases, str(data["hidden_activation"]), str(data["output_activation"]))
