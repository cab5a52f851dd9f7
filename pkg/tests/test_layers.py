import logging

import numpy as np
import pytest

from auxtabl import layers, linalg, test_utils
from auxtabl.errors import ConfigException, ShapeException, StateException

logger = logging.getLogger(__name__)


def test_tabl_matches_literal_equations():
    rng = np.random.default_rng(1)
    for activation in layers.ACTIVATIONS:
        layer = test_utils.random_tabl(rng, activation=activation)
        X = rng.standard_normal((3, 6, 5))
        Y, cache = layer.forward(X)
        assert cache is None
        assert np.allclose(Y, test_utils.layer_oracle(layer, X), rtol=1e-10, atol=1e-12)


def test_bl_matches_literal_equations():
    rng = np.random.default_rng(2)
    layer = test_utils.random_bl(rng, activation=layers.RELU)
    X = rng.standard_normal((2, 4, 6, 5))
    Y, _ = layer.forward(X)
    assert Y.shape == (2, 4, 4, 3)
    assert np.allclose(Y, test_utils.layer_oracle(layer, X), rtol=1e-10, atol=1e-12)


def test_tabl_with_lambda_zero_ignores_attention():
    rng = np.random.default_rng(3)
    tabl = test_utils.random_tabl(rng, lam=0.0)
    bl = layers.BlLayerParams(tabl.W1, tabl.W2, tabl.B, tabl.activation)
    X = rng.standard_normal((6, 5))
    assert np.allclose(tabl.forward(X)[0], bl.forward(X)[0])


def _loss(layer, X, G):
    Y, _ = layer.forward(X)
    return float(np.sum(Y * G))


@pytest.mark.parametrize('seed', range(5))
@pytest.mark.parametrize('make', [test_utils.random_tabl, test_utils.random_bl])
def test_gradients_match_finite_differences(make, seed):
    rng = np.random.default_rng(4 + 100 * seed)
    layer = make(rng)
    X = rng.standard_normal((2, 6, 5))
    G = rng.standard_normal((2, 4, 3))
    _, cache = layer.forward(X, layers.TRAIN)
    grads, dX = layer.backward(cache, G)
    masks = layer.trainable_masks()
    for name, param in layer.arrays().items():
        numeric = test_utils.numeric_gradient(lambda: _loss(layer, X, G), param)
        numeric = np.where(masks[name], numeric, 0.0)
        assert np.allclose(grads[name], numeric, rtol=1e-5, atol=1e-7), name
    numeric_dX = test_utils.numeric_gradient(lambda: _loss(layer, X, G), X)
    assert np.allclose(dX, numeric_dX, rtol=1e-5, atol=1e-7)


def test_attention_diagonal_gets_no_gradient():
    rng = np.random.default_rng(5)
    layer = test_utils.random_tabl(rng)
    X = rng.standard_normal((6, 5))
    _, cache = layer.forward(X, layers.TRAIN)
    grads, _ = layer.backward(cache, np.ones((4, 3)))
    assert np.all(np.diag(grads['W']) == 0)
    assert not np.any(np.diag(layer.trainable_masks()['W']))


def test_attention_diagonal_starts_at_one_over_t():
    layer = layers.TablLayerParams.initialize((40, 10), (3, 1), np.random.default_rng(0))
    assert np.allclose(np.diag(layer.W), 0.1)
    assert float(layer.lam) == 0.5


def test_forward_mac_count_matches_closed_form():
    rng = np.random.default_rng(6)
    for N, D, d_out, T, t_out in [(1, 40, 60, 10, 10), (3, 7, 5, 4, 2), (2, 3, 3, 1, 1)]:
        tabl = layers.TablLayerParams.initialize((D, T), (d_out, t_out), rng)
        counter = linalg.OpCounter()
        tabl.forward(rng.standard_normal((N, D, T)), layers.INFER, counter)
        assert counter.mac_count == layers.tabl_forward_macs(N, D, d_out, T, t_out)
        bl = layers.BlLayerParams.initialize((D, T), (d_out, t_out), rng)
        counter = linalg.OpCounter()
        bl.forward(rng.standard_normal((N, D, T)), layers.INFER, counter)
        assert counter.mac_count == layers.bl_forward_macs(N, D, d_out, T, t_out)


def test_param_count_with_and_without_fixed_diagonal():
    layer = layers.TablLayerParams.initialize((40, 10), (120, 5), np.random.default_rng(0))
    full = 120 * 40 + 10 * 10 + 10 * 5 + 120 * 5 + 1
    assert layer.param_count() == full
    assert layer.param_count(count_fixed_diagonal=False) == full - 10


def test_wrong_input_shape_is_rejected():
    layer = test_utils.random_tabl(np.random.default_rng(7))
    with pytest.raises(ShapeException):
        layer.forward(np.zeros((5, 6)))


def test_backward_needs_training_cache():
    layer = test_utils.random_bl(np.random.default_rng(8))
    with pytest.raises(StateException):
        layer.backward(None, np.zeros((4, 3)))


def test_unknown_mode_and_activation():
    rng = np.random.default_rng(9)
    layer = test_utils.random_bl(rng)
    with pytest.raises(ConfigException):
        layer.forward(np.zeros((6, 5)), mode='eval')
    with pytest.raises(ConfigException):
        layers.BlLayerParams.initialize((6, 5), (4, 3), rng, activation='tanh')


def test_mismatched_bias_shape():
    with pytest.raises(ShapeException):
        layers.BlLayerParams(np.zeros((4, 6)), np.zeros((5, 3)), np.zeros((3, 4)))
