import math

import numpy as np
import pytest

from icrl_lab import nn
from icrl_lab.errors import NetworkShapeError, NonFiniteError


def _net(output_activation: str = "identity", dims: tuple[int, ...] = (3, 5, 2), seed: int = 0) -> nn.MlpParams:
    return nn.init_mlp(dims, np.random.default_rng(seed), output_activation=output_activation)


def test_forward_shapes_for_vector_and_batch() -> None:
    params = _net()
    assert nn.forward(params, np.zeros(3)).shape == (2,)
    assert nn.forward(params, np.zeros((4, 3))).shape == (4, 2)


def test_forward_rejects_wrong_input_size() -> None:
    with pytest.raises(NetworkShapeError, match="input size"):
        nn.forward(_net(), np.zeros(4))


def test_sigmoid_output_is_clamped() -> None:
    params = nn.MlpParams((np.array([[1000.0]]),), (np.zeros(1),), output_activation="sigmoid")
    assert nn.forward(params, np.array([1.0]))[0] == pytest.approx(1.0 - nn.SIGMOID_EPS)
    assert nn.forward(params, np.array([-1.0]))[0] == pytest.approx(nn.SIGMOID_EPS)


@pytest.mark.parametrize("activation", ["identity", "sigmoid", "softmax"])
def test_backward_matches_finite_differences(activation: str) -> None:
    rng = np.random.default_rng(3)
    params = _net(activation, dims=(3, 4, 2))
    x = rng.normal(size=(5, 3))
    g = rng.normal(size=(5, 2))

    def objective(vector: np.ndarray) -> float:
        return float(np.sum(g * nn.forward(params.with_flat(vector), x)))

    analytic = nn.backward(params, x, g).flat()
    numeric = nn.finite_difference_gradient(objective, params.flat())
    assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_flat_round_trip_preserves_values() -> None:
    params = _net()
    again = params.with_flat(params.flat())
    assert again.layer_dims == params.layer_dims
    assert np.array_equal(again.flat(), params.flat())


def test_with_flat_rejects_wrong_length() -> None:
    with pytest.raises(NetworkShapeError):
        _net().with_flat(np.zeros(3))


def test_parameters_are_read_only() -> None:
    params = _net()
    with pytest.raises(ValueError):
        params.weights[0][0, 0] = 1.0


def test_non_finite_parameters_are_rejected() -> None:
    with pytest.raises(NonFiniteError):
        nn.MlpParams((np.array([[np.nan]]),), (np.zeros(1),))


def test_adam_first_step_moves_by_learning_rate() -> None:
    state = nn.adam_init(2, 0.1)
    vector, state = nn.adam_update(np.zeros(2), np.array([2.0, -3.0]), state)
    assert vector == pytest.approx([-0.1, 0.1], rel=1e-6)
    assert state.step == 1


def test_adam_maximize_ascends() -> None:
    state = nn.adam_init(1, 0.1)
    vector, _ = nn.adam_update(np.zeros(1), np.array([1.0]), state, maximize=True)
    assert vector[0] > 0.0


def test_adam_refuses_non_finite_gradient() -> None:
    with pytest.raises(NonFiniteError):
        nn.adam_update(np.zeros(1), np.array([np.inf]), nn.adam_init(1, 0.1))


def test_params_dict_round_trip() -> None:
    params = _net("sigmoid")
    restored = nn.params_from_dict(nn.params_to_dict(params))
    assert restored.output_activation == "sigmoid"
    assert np.array_equal(restored.flat(), params.flat())


def test_params_from_dict_rejects_unknown_version() -> None:
    data = nn.params_to_dict(_net())
    data["format_version"] = 99
    with pytest.raises(ValueError, match="format_version"):
        nn.params_from_dict(data)


def _random_case(rng: np.random.Generator) -> tuple[nn.MlpParams, np.ndarray, np.ndarray]:
    activation = str(rng.choice(["identity", "sigmoid", "softmax"]))
    depth = int(rng.integers(1, 4))
    dims = tuple(int(d) for d in rng.integers(1, 6, size=depth + 1))
    if activation == "softmax":
        dims = (*dims[:-1], max(2, dims[-1]))
    params = nn.init_mlp(dims, rng, output_activation=activation)
    params = params.with_flat(params.flat() + rng.normal(scale=0.3, size=params.size))
    x = rng.normal(size=(int(rng.integers(1, 5)), dims[0]))
    g = rng.normal(size=(x.shape[0], dims[-1]))
    return params, x, g


def test_backward_matches_finite_differences_on_random_networks() -> None:
    rng = np.random.default_rng(100)
    for _ in range(100):
        params, x, g = _random_case(rng)

        def objective(vector: np.ndarray) -> float:
            return float(np.sum(g * nn.forward(params.with_flat(vector), x)))

        analytic = nn.backward(params, x, g).flat()
        numeric = nn.finite_difference_gradient(objective, params.flat())
        assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def _zero_net(dims: tuple[int, ...], activation: str) -> nn.MlpParams:
    weights = tuple(np.zeros((dims[i + 1], dims[i])) for i in range(len(dims) - 1))
    biases = tuple(np.zeros(d) for d in dims[1:])
    return nn.MlpParams(weights, biases, output_activation=activation)


def test_zero_sigmoid_network_outputs_one_half() -> None:
    params = _zero_net((3, 4, 2), "sigmoid")
    out = nn.forward(params, np.random.default_rng(0).normal(size=(6, 3)))
    assert out == pytest.approx(np.full((6, 2), 0.5))


@pytest.mark.parametrize("k", [2, 3, 7])
def test_zero_softmax_network_is_uniform(k: int) -> None:
    params = _zero_net((2, 3, k), "softmax")
    out = nn.forward(params, np.array([[1.5, -4.0], [0.0, 9.0]]))
    assert out == pytest.approx(np.full((2, k), 1.0 / k))


def test_one_two_one_network_by_hand() -> None:
    params = nn.MlpParams(
        (np.array([[1.0], [-2.0]]), np.array([[1.5, -1.0]])),
        (np.array([0.0, 0.5]), np.array([0.25])),
        output_activation="sigmoid",
    )
    # hidden = (tanh(0.5), tanh(-0.5)); logit = 1.5 h1 - h2 + 0.25 = 2.5 tanh(0.5) + 0.25
    logit = 2.5 * math.tanh(0.5) + 0.25
    assert nn.logits(params, np.array([0.5]))[0] == pytest.approx(logit)
    assert nn.forward(params, np.array([0.5]))[0] == pytest.approx(1.0 / (1.0 + math.exp(-logit)))
    assert nn.forward(params, np.array([0.5]))[0] == pytest.approx(0.80302, abs=1e-4)


def test_adam_two_identical_steps_by_hand() -> None:
    state = nn.adam_init(1, 0.1)
    vector, state = nn.adam_update(np.zeros(1), np.array([2.0]), state)
    assert state.m == pytest.approx([0.2])
    assert state.v == pytest.approx([0.004])
    assert vector == pytest.approx([-0.1], rel=1e-6)

    vector, state = nn.adam_update(vector, np.array([2.0]), state)
    # m = 0.9 * 0.2 + 0.1 * 2 = 0.38, v = 0.999 * 0.004 + 0.001 * 4 = 0.007996
    assert state.m == pytest.approx([0.38])
    assert state.v == pytest.approx([0.007996])
    # bias-corrected: m_hat = 0.38 / 0.19 = 2, v_hat = 0.007996 / 0.001999 = 4
    assert vector == pytest.approx([-0.2], rel=1e-6)
    assert state.step == 2


def test_adam_zero_gradient_leaves_fresh_parameters_unchanged() -> None:
    start = np.array([0.3, -1.2, 4.0])
    vector, state = nn.adam_update(start, np.zeros(3), nn.adam_init(3, 0.1))
    assert np.array_equal(vector, start)
    assert state.step == 1


def test_adam_zero_gradient_only_decays_moments() -> None:
    warm = nn.AdamState(np.array([0.5]), np.array([0.25]), 3, 0.1)
    _, state = nn.adam_update(np.zeros(1), np.zeros(1), warm)
    assert state.m == pytest.approx([0.45])
    assert state.v == pytest.approx([0.24975])


def test_sigmoid_gradient_is_zero_where_the_output_is_clamped() -> None:
    params = nn.MlpParams((np.array([[40.0]]),), (np.zeros(1),), output_activation="sigmoid")
    x = np.array([[1.0], [-1.0], [0.01]])
    grads = nn.backward(params, x, np.ones((3, 1)))

    def objective(vector: np.ndarray) -> float:
        return float(np.sum(nn.forward(params.with_flat(vector), x[:2])))

    pinned = nn.backward(params, x[:2], np.ones((2, 1))).flat()
    assert np.array_equal(pinned, np.zeros_like(pinned))
    assert pinned == pytest.approx(nn.finite_difference_gradient(objective, params.flat()), abs=1e-9)
    assert grads.flat()[0] != 0.0
