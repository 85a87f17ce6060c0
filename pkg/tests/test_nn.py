import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bosc import nn
from oracles import gradient_check


def dense_model(W, b):
    layers = [{"type": "flatten"}, {"type": "dense", "out": W.shape[1]}]
    return nn.Model(layers, [{}, {"W": np.asarray(W, float), "b": np.asarray(b, float)}],
                    (1, W.shape[0], 1), W.shape[1])


def test_zero_weights_give_zero_logits():
    model = nn.init_model(6, (8, 8, 3), seed=1)
    for p in model.params:
        for k in p:
            p[k][...] = 0
    x = np.random.default_rng(0).random((4, 8, 8, 3))
    assert np.all(nn.forward(model, x) == 0)


def test_single_dense_layer_by_hand():
    W = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]])
    b = np.array([0.5, 0.0, 1.0])
    out = nn.forward(dense_model(W, b), np.array([[[[1.0], [2.0]]]]))
    np.testing.assert_allclose(out[0], [1.5, 2.0, 1.0])


def test_identical_inputs_identical_rows():
    model = nn.init_model(4, (8, 8, 3), seed=2)
    x = np.random.default_rng(1).random((1, 8, 8, 3))
    out = nn.forward(model, np.concatenate([x, x]))
    assert np.array_equal(out[0], out[1])


def test_wrong_input_shape():
    model = nn.init_model(4, (8, 8, 3))
    with pytest.raises(nn.ShapeError):
        nn.forward(model, np.zeros((2, 8, 8, 1)))


def test_final_layer_width_and_param_shapes():
    model = nn.init_model(6, (32, 32, 3))
    assert model.num_outputs == 6
    assert model.layers[-1]["out"] == 6
    shapes = nn.layer_output_shapes(model.layers, model.input_shape)
    assert shapes[-1] == (6,)
    assert model.params[0]["W"].shape == (16, 3, 3, 3)
    assert model.params[-1]["W"].shape == (32 * 8 * 8, 6)


def test_softmax_examples():
    np.testing.assert_allclose(nn.softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    np.testing.assert_allclose(nn.softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])
    np.testing.assert_allclose(nn.softmax(np.array([np.log(1), np.log(3)])), [0.25, 0.75])
    with pytest.raises(FloatingPointError):
        nn.softmax(np.array([np.nan, 1.0]))


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_is_a_distribution(values):
    p = nn.softmax(np.array(values))
    assert abs(p.sum() - 1) < 1e-9
    assert np.all(p >= 0)


def test_weighted_ce_edge_cases():
    logits = np.random.default_rng(0).normal(size=(3, 4))
    loss, grad = nn.weighted_ce(logits, [0, 1, 2], [0.0, 0.0, 0.0])
    assert loss == 0 and np.all(grad == 0)
    loss, _ = nn.weighted_ce(np.array([[0.0, -1e4]]), [0], [1.0])
    assert loss == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(nn.LabelError):
        nn.weighted_ce(logits, [0, 1, 4], [1, 1, 1])


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    worst, _ = gradient_check(seed)
    assert worst < 1e-4


def test_adam_first_step_is_lr_against_gradient():
    model = dense_model(np.array([[0.3]]), np.array([0.0]))
    state = nn.AdamState.for_model(model, lr=1e-4)
    grads = [{}, {"W": np.array([[0.5]]), "b": np.array([0.0])}]
    nn.adam_step(model, grads, state)
    assert model.params[1]["W"][0, 0] - 0.3 == pytest.approx(-1e-4, rel=1e-6)
    assert model.params[1]["b"][0] == 0.0
    assert state.step == 1


def test_adam_zero_gradient_only_decays_moments():
    model = dense_model(np.array([[0.3]]), np.array([0.1]))
    state = nn.AdamState.for_model(model, lr=1e-3)
    zero = [{}, {"W": np.zeros((1, 1)), "b": np.zeros(1)}]
    nn.adam_step(model, zero, state)
    assert model.params[1]["W"][0, 0] == 0.3 and model.params[1]["b"][0] == 0.1


def test_adam_two_steps_monotone():
    model = dense_model(np.array([[0.0]]), np.array([0.0]))
    state = nn.AdamState.for_model(model, lr=1e-2)
    g = [{}, {"W": np.array([[-2.0]]), "b": np.array([0.0])}]
    seen = [0.0]
    for _ in range(2):
        nn.adam_step(model, g, state)
        seen.append(model.params[1]["W"][0, 0])
    assert seen[0] < seen[1] < seen[2]
    assert all(m.shape == p.shape for m, p in zip(state.m[1].values(), model.params[1].values()))


def test_lr_schedule():
    assert nn.lr_schedule(0, 1e-4) == 1e-4
    assert nn.lr_schedule(5, 1e-4) == pytest.approx(1e-5)
    assert nn.lr_schedule(14, 1e-4) == pytest.approx(1e-6)
    with pytest.raises(ValueError):
        nn.lr_schedule(-1, 1e-4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forward_is_deterministic(seed):
    model = nn.init_model(3, (8, 8, 2), seed=seed % 1000)
    x = np.random.default_rng(seed).random((2, 8, 8, 2))
    assert np.array_equal(nn.forward(model, x), nn.forward(model, x))
