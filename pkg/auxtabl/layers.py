'''
Bilinear Layer (BL) and Temporal-Attention-augmented Bilinear Layer (TABL).

A TABL maps X (D x T) to Y (D' x T'):

    Xbar = W1 X
    E = Xbar W
    A = row_softmax(E)
    Xtilde = lam (Xbar * A) + (1 - lam) Xbar
    Y = phi(Xtilde W2 + B)

A BL is the same layer without the attention branch.  Every input may carry
leading batch axes; parameter gradients are summed over them.
'''

import logging
from collections import OrderedDict

import numpy as np

from auxtabl import linalg
from auxtabl.errors import ShapeException, StateException, ConfigException

logger = logging.getLogger(__name__)

RELU = 'relu'
SOFTMAX_COLUMNS = 'softmax_columns'
IDENTITY = 'identity'
ACTIVATIONS = (RELU, SOFTMAX_COLUMNS, IDENTITY)

TRAIN = 'train'
INFER = 'infer'
MODES = (TRAIN, INFER)

# Tags used when counting operations, one per equation of the layer.
FEATURE_TAG = 'feature_transform'
ATTENTION_TAG = 'attention_scores'
OUTPUT_TAG = 'output_transform'


def glorot_uniform(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def attention_weights(rng, T):
    '''
    A T x T attention matrix with the diagonal fixed at 1/T.
    '''
    W = glorot_uniform(rng, T, T)
    np.fill_diagonal(W, 1.0 / T)
    return W


def off_diagonal_mask(T):
    mask = np.ones((T, T), dtype=bool)
    np.fill_diagonal(mask, False)
    return mask


def check_activation(activation):
    if activation not in ACTIVATIONS:
        raise ConfigException('Unknown activation "{}". Expected one of {}'.format(
            activation, ACTIVATIONS))


def check_mode(mode):
    if mode not in MODES:
        raise ConfigException('Unknown mode "{}". Expected one of {}'.format(mode, MODES))


class LayerCache:
    '''
    Intermediates of one training-mode forward pass.
    '''

    def __init__(self, X, Xbar, Z, Y, E=None, A=None, Xtilde=None, extra=None):
        self.X = X
        self.Xbar = Xbar
        self.E = E
        self.A = A
        self.Xtilde = Xbar if Xtilde is None else Xtilde
        self.Z = Z
        self.Y = Y
        self.extra = {} if extra is None else extra


class BlLayerParams:
    '''
    Weights of a Bilinear Layer: `W1` (D' x D), `W2` (T x T'), `B` (D' x T').
    '''

    kind = 'BL'

    def __init__(self, W1, W2, B, activation=RELU):
        check_activation(activation)
        self.W1 = np.asarray(W1, dtype=linalg.DTYPE)
        self.W2 = np.asarray(W2, dtype=linalg.DTYPE)
        self.B = np.asarray(B, dtype=linalg.DTYPE)
        self.activation = activation
        self._check_shapes()

    def _check_shapes(self):
        d_out, _ = self.W1.shape
        _, t_out = self.W2.shape
        if self.B.shape != (d_out, t_out):
            raise ShapeException('Bias shape {} does not match output shape {}'.format(
                self.B.shape, (d_out, t_out)))

    @classmethod
    def initialize(cls, input_shape, output_shape, rng, activation=RELU):
        D, T = input_shape
        d_out, t_out = output_shape
        return cls(
            W1=glorot_uniform(rng, d_out, D),
            W2=glorot_uniform(rng, T, t_out),
            B=np.zeros((d_out, t_out)),
            activation=activation,
        )

    @property
    def input_shape(self):
        return (self.W1.shape[1], self.W2.shape[0])

    @property
    def output_shape(self):
        return (self.W1.shape[0], self.W2.shape[1])

    def arrays(self):
        return OrderedDict([('W1', self.W1), ('W2', self.W2), ('B', self.B)])

    def trainable_masks(self):
        return OrderedDict((name, True) for name in self.arrays())

    def copy(self):
        return BlLayerParams(self.W1.copy(), self.W2.copy(), self.B.copy(), self.activation)

    def param_count(self, count_fixed_diagonal=True):
        return sum(a.size for a in self.arrays().values())

    def forward(self, X, mode=INFER, counter=None):
        return bl_forward(self, X, mode, counter)

    def backward(self, cache, dY):
        return bl_backward(self, cache, dY)


class TablLayerParams(BlLayerParams):
    '''
    Weights of a TABL: those of a BL plus the attention matrix `W` (T x T),
    whose diagonal is fixed, and the blend scalar `lam` in [0, 1].
    '''

    kind = 'TABL'

    def __init__(self, W1, W, W2, B, lam, activation=RELU):
        self.W = np.asarray(W, dtype=linalg.DTYPE)
        self.lam = np.array(lam, dtype=linalg.DTYPE).reshape(())
        super().__init__(W1, W2, B, activation)

    def _check_shapes(self):
        super()._check_shapes()
        T = self.W2.shape[0]
        if self.W.shape != (T, T):
            raise ShapeException('Attention matrix shape {} should be {}'.format(
                self.W.shape, (T, T)))

    @classmethod
    def initialize(cls, input_shape, output_shape, rng, activation=RELU, lam=0.5):
        D, T = input_shape
        d_out, t_out = output_shape
        return cls(
            W1=glorot_uniform(rng, d_out, D),
            W=attention_weights(rng, T),
            W2=glorot_uniform(rng, T, t_out),
            B=np.zeros((d_out, t_out)),
            lam=lam,
            activation=activation,
        )

    def arrays(self):
        return OrderedDict([
            ('W1', self.W1), ('W', self.W), ('W2', self.W2), ('B', self.B), ('lam', self.lam)])

    def trainable_masks(self):
        masks = super().trainable_masks()
        masks['W'] = off_diagonal_mask(self.W.shape[0])
        return masks

    def copy(self):
        return TablLayerParams(
            self.W1.copy(), self.W.copy(), self.W2.copy(), self.B.copy(),
            self.lam.copy(), self.activation)

    def param_count(self, count_fixed_diagonal=True):
        count = super().param_count()
        if not count_fixed_diagonal:
            count -= self.W.shape[0]
        return count

    def forward(self, X, mode=INFER, counter=None):
        return tabl_forward(self, X, mode, counter)

    def backward(self, cache, dY):
        return tabl_backward(self, cache, dY)


def check_input(input_shape, X):
    if X.ndim < 2 or tuple(X.shape[-2:]) != tuple(input_shape):
        raise ShapeException('Layer expects input of shape {}, got {}'.format(
            input_shape, X.shape))


def activate(Z, activation, counter=None, tag=None):
    if activation == RELU:
        Y = np.maximum(Z, 0.0)
    elif activation == SOFTMAX_COLUMNS:
        Y = linalg.column_softmax(Z)
    else:
        Y = Z
    if counter is not None:
        counter.add(Z.size, tag=tag)
    return Y


def activation_backward(Z, Y, dY, activation):
    if activation == RELU:
        return dY * (Z > 0)
    elif activation == SOFTMAX_COLUMNS:
        return Y * (dY - np.sum(dY * Y, axis=-2, keepdims=True))
    return dY


def sum_batch(m, shape):
    '''
    Sums `m` over its leading batch axes down to `shape`.
    '''
    return m.reshape((-1,) + tuple(shape)).sum(axis=0)


def output_stage(Xtilde, W2, B, activation, counter=None):
    '''
    Y = phi(Xtilde W2 + B). Returns the pre-activation and the output.
    '''
    Z = linalg.matmul(Xtilde, W2, counter, OUTPUT_TAG)
    Z = linalg.add(Z, B, counter, OUTPUT_TAG)
    return Z, activate(Z, activation, counter, OUTPUT_TAG)


def output_stage_backward(cache, W2, B, activation, dY):
    '''
    Returns (dZ, dB, dW2, dXtilde) for the output stage.
    '''
    dZ = activation_backward(cache.Z, cache.Y, dY, activation)
    dB = sum_batch(dZ, B.shape)
    dW2 = sum_batch(linalg.matmul(linalg.transpose(cache.Xtilde), dZ), W2.shape)
    dXtilde = linalg.matmul(dZ, W2.T)
    return dZ, dB, dW2, dXtilde


def blend(Xbar, A, lam):
    attended = linalg.hadamard(Xbar, A)
    return linalg.add(linalg.scale(attended, lam), linalg.scale(Xbar, 1.0 - lam))


def attention_backward(Xbar, A, lam, dXtilde):
    '''
    Backward of the blend and the row softmax.
    Returns (dlam, dXbar through the blend, dE).
    '''
    dlam = np.sum(dXtilde * (Xbar * A - Xbar))
    dXbar = dXtilde * (lam * A + (1.0 - lam))
    dA = lam * dXtilde * Xbar
    dE = A * (dA - np.sum(dA * A, axis=-1, keepdims=True))
    return np.array(dlam), dXbar, dE


def tabl_core_forward(W1, W, W2, B, lam, activation, X, mode, counter):
    '''
    The TABL equations on explicit weights. Shared by plain and folded layers.
    '''
    check_mode(mode)
    Xbar = linalg.matmul(W1, X, counter, FEATURE_TAG)
    E = linalg.matmul(Xbar, W, counter, ATTENTION_TAG)
    A = linalg.row_softmax(E)
    Xtilde = blend(Xbar, A, float(lam))
    Z, Y = output_stage(Xtilde, W2, B, activation, counter)
    cache = None
    if mode == TRAIN:
        cache = LayerCache(X=X, Xbar=Xbar, E=E, A=A, Xtilde=Xtilde, Z=Z, Y=Y)
    return Y, cache


def tabl_core_backward(W1, W, W2, B, lam, activation, cache, dY):
    '''
    Gradients with respect to the explicit weights. The diagonal of `W` is
    not masked here.
    '''
    if cache is None:
        raise StateException('Backward pass needs the cache of a training-mode forward pass')
    _, dB, dW2, dXtilde = output_stage_backward(cache, W2, B, activation, dY)
    dlam, dXbar, dE = attention_backward(cache.Xbar, cache.A, float(lam), dXtilde)
    dW = sum_batch(linalg.matmul(linalg.transpose(cache.Xbar), dE), W.shape)
    dXbar = dXbar + linalg.matmul(dE, W.T)
    dW1 = sum_batch(linalg.matmul(dXbar, linalg.transpose(cache.X)), W1.shape)
    dX = linalg.matmul(W1.T, dXbar)
    grads = OrderedDict([('W1', dW1), ('W', dW), ('W2', dW2), ('B', dB), ('lam', dlam)])
    return grads, dX


def tabl_forward(p, X, mode=INFER, counter=None):
    '''
    Forward pass of a TABL. Returns (Y, cache); the cache is None unless
    `mode` is 'train'.
    '''
    check_input(p.input_shape, X)
    return tabl_core_forward(p.W1, p.W, p.W2, p.B, p.lam, p.activation, X, mode, counter)


def tabl_backward(p, cache, dY):
    '''
    Returns (grads, dX). `grads` holds W1, W, W2, B and lam; the diagonal of
    the W gradient is zero because those entries are fixed.
    '''
    grads, dX = tabl_core_backward(p.W1, p.W, p.W2, p.B, p.lam, p.activation, cache, dY)
    np.fill_diagonal(grads['W'], 0.0)
    return grads, dX


def bl_core_forward(W1, W2, B, activation, X, mode, counter):
    check_mode(mode)
    Xbar = linalg.matmul(W1, X, counter, FEATURE_TAG)
    Z, Y = output_stage(Xbar, W2, B, activation, counter)
    cache = None
    if mode == TRAIN:
        cache = LayerCache(X=X, Xbar=Xbar, Z=Z, Y=Y)
    return Y, cache


def bl_core_backward(W1, W2, B, activation, cache, dY):
    if cache is None:
        raise StateException('Backward pass needs the cache of a training-mode forward pass')
    _, dB, dW2, dXbar = output_stage_backward(cache, W2, B, activation, dY)
    dW1 = sum_batch(linalg.matmul(dXbar, linalg.transpose(cache.X)), W1.shape)
    dX = linalg.matmul(W1.T, dXbar)
    return OrderedDict([('W1', dW1), ('W2', dW2), ('B', dB)]), dX


def bl_forward(p, X, mode=INFER, counter=None):
    check_input(p.input_shape, X)
    return bl_core_forward(p.W1, p.W2, p.B, p.activation, X, mode, counter)


def bl_backward(p, cache, dY):
    return bl_core_backward(p.W1, p.W2, p.B, p.activation, cache, dY)


def tabl_forward_macs(N, D, d_out, T, t_out):
    '''
    Closed-form forward operation count of a TABL.
    '''
    return N * D * d_out * T + N * d_out * T * T + N * d_out * T * t_out + 2 * N * d_out * t_out


def bl_forward_macs(N, D, d_out, T, t_out):
    return N * D * d_out * T + N * d_out * T * t_out + 2 * N * d_out * t_out
