import copy
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marketclear.classifier import (LabeledSample, TrainConfig, batch_loss, dual_loss_weights,
                                    format_cell, forward, gradients, init_mlp,
                                    logistic_loss, misidentification_count, model_from_json,
                                    model_to_json, predict_binding, stack_samples, train)
from marketclear.errors import DimensionError, DomainError
from marketclear.solution import BindingSet

from helpers import two_regime_samples


def random_net(n_bus, n_line, hidden, seed=0, activation="relu"):
    net = init_mlp(n_bus, n_line, hidden=hidden, seed=seed, hidden_activation=activation)
    rng = np.random.default_rng(seed + 1)
    net.weights[-1] = rng.standard_normal(net.weights[-1].shape)
    net.biases = [rng.standard_normal(b.shape) * 0.1 for b in net.biases]
    return net


def numeric_gradient(net, X, T, weights, h=1e-5):
    from marketclear.classifier import _loss_arrays
    grads = []
    for p in net.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + h
            up = _loss_arrays(net, X, T, weights)
            p[idx] = keep - h
            down = _loss_arrays(net, X, T, weights)
            p[idx] = keep
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


@pytest.mark.parametrize("hidden, activation, weighted", [
    ((1,), "relu", False),          # 1 -> 1 -> 2: six parameters
    ((6, 5), "relu", False),
    ((6, 5), "tanh", False),
    ((4,), "tanh", True),
])
def test_gradient_matches_central_differences(hidden, activation, weighted):
    n_bus, n_line = (1, 1) if hidden == (1,) else (4, 3)
    net = random_net(n_bus, n_line, hidden, seed=3, activation=activation)
    rng = np.random.default_rng(7)
    X = rng.standard_normal((5, n_bus))
    T = (rng.random((5, 2 * n_line)) < 0.4).astype(float)
    w = rng.uniform(0.5, 2.0, n_line) if weighted else None
    analytic = gradients(net, X, T, w)
    numeric = numeric_gradient(net, X, T, w)
    for a, n in zip(analytic, numeric):
        assert np.linalg.norm(a - n) <= 1e-4 * max(np.linalg.norm(n), 1e-8)


def test_zero_final_layer_gives_one_half():
    net = init_mlp(4, 3, hidden=(8, 8), seed=0)
    y_nu, y_mu = forward(net, np.ones(4))
    assert y_nu.shape == y_mu.shape == (3,)
    assert np.all(y_nu == 0.5) and np.all(y_mu == 0.5)
    assert predict_binding(net, np.ones(4)) == BindingSet()   # 0.5 is not > 0.5
    with pytest.raises(DimensionError):
        forward(net, np.ones(5))


def test_outputs_stay_open_interval():
    net = init_mlp(2, 1, hidden=(3,), seed=0)
    net.biases[-1][:] = [800.0, -800.0]
    y_nu, y_mu = forward(net, np.zeros(2))
    assert 0 < y_mu[0] < y_nu[0] < 1


def test_logistic_loss_values():
    np.testing.assert_allclose(logistic_loss([0.5, 0.5, 0.9], [1, 0, 1]),
                               [math.log(2), math.log(2), -math.log(0.9)])
    for bad in ([0.0], [1.0], [1.2], [np.nan]):
        with pytest.raises(DomainError):
            logistic_loss(bad, [1])
    with pytest.raises(DomainError):
        logistic_loss([0.5], [0.5])


def test_batch_loss_at_one_half():
    net = init_mlp(3, 4, hidden=(5,), seed=0)
    sample = LabeledSample(np.ones(3), np.zeros(4), np.zeros(4))
    assert batch_loss(net, [sample]) == pytest.approx(8 * math.log(2))


def test_confident_correct_predictions_cost_almost_nothing():
    net = init_mlp(2, 2, hidden=(3,), seed=0)
    net.biases[-1][:] = [-100.0, 100.0, -100.0, -100.0]
    sample = LabeledSample(np.zeros(2), [0, 1], [0, 0])
    assert batch_loss(net, [sample]) <= 4 * 1e-12


def test_weights_penalise_the_heavy_line_more():
    net = init_mlp(2, 2, hidden=(3,), seed=0)
    net.biases[-1][:] = [-3.0, -3.0, 0.0, 0.0]
    miss_heavy = LabeledSample(np.zeros(2), [1, 0], [0, 0])
    miss_light = LabeledSample(np.zeros(2), [0, 1], [0, 0])
    w = dual_loss_weights(mu=[[0.0, 0.0]], nu=[[9.0, 0.1]])
    assert batch_loss(net, [miss_heavy], w) > batch_loss(net, [miss_light], w)


@given(st.integers(1, 9), st.integers(0, 2**16))
@settings(max_examples=20, deadline=None)
def test_loss_adds_over_partitions(cut, seed):
    rng = np.random.default_rng(seed)
    net = random_net(3, 2, (4,), seed=seed % 7)
    samples = [LabeledSample(rng.standard_normal(3), *(rng.permutation([1, 0, 0, 0])
                                                       .reshape(2, 2)))
               for _ in range(10)]
    whole = batch_loss(net, samples)
    assert whole == pytest.approx(batch_loss(net, samples[:cut]) + batch_loss(net, samples[cut:]))


def test_labeled_sample_invariants():
    with pytest.raises(ValueError):
        LabeledSample(np.zeros(2), [0.5, 0], [0, 0])
    with pytest.raises(ValueError):
        LabeledSample(np.zeros(2), [1, 0], [1, 0])


def test_conflict_goes_to_larger_activation():
    net = init_mlp(1, 2, hidden=(2,), seed=0)
    logit = lambda y: math.log(y / (1 - y))
    net.biases[-1][:] = [logit(0.6), logit(0.7), logit(0.8), logit(0.7)]
    bset = predict_binding(net, np.zeros(1))
    # line 0: nu 0.6 vs mu 0.8 -> upper; line 1: a tie -> upper
    assert bset == BindingSet(upper={0, 1})
    net.biases[-1][:] = [logit(0.7), -5, -5, -5]
    assert predict_binding(net, np.zeros(1)) == BindingSet(lower={0})


def test_misidentification_counts():
    truth = BindingSet(upper={1, 2})
    assert misidentification_count(truth, truth) == (0, 0.0)
    assert misidentification_count(BindingSet(upper={1}), truth) == (1, 0.5)
    assert misidentification_count(BindingSet(lower={1}), BindingSet()) == (1, 0.0)
    assert format_cell(342, 0.2497) == "342(0.25)"
    assert format_cell(0, 0.0) == "0(0.00)"


def test_training_is_deterministic_and_descends():
    samples = two_regime_samples(64)
    net = init_mlp(3, 3, hidden=(16, 16), seed=4)
    cfg = TrainConfig(epochs=15, seed=4)
    a, hist_a = train(net, samples, cfg)
    b, hist_b = train(copy.deepcopy(net), samples, cfg)
    assert hist_a == hist_b
    assert hist_a[-1] < hist_a[0]
    assert model_to_json(a) == model_to_json(b)


def test_separable_toy_fits_training_labels():
    samples = two_regime_samples(100)
    net, hist = train(init_mlp(3, 3, hidden=(16, 16), seed=0), samples,
                      TrainConfig(epochs=200, seed=0))
    for s in samples:
        truth = BindingSet.from_masks(s.target_nu, s.target_mu)
        assert predict_binding(net, s.loads) == truth


def test_model_json_round_trip():
    net = random_net(3, 2, (4, 5), seed=1)
    net.input_offset = np.arange(3.0)
    net.input_scale = np.ones(3) * 2
    back = model_from_json(model_to_json(net))
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(np.hstack(forward(back, x)), np.hstack(forward(net, x)))
    with pytest.raises(ValueError):
        model_from_json('{"format": "other"}')


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
