'''
1D convolution over time-series, the CNN classifier built from it, and the
CP-factored auxiliary filters used to adapt a frozen convolution.

An input has shape (..., D, T): D channels (features) by T time steps.
Convolution is cross-correlation (the kernel is not flipped).  The auxiliary
filter tensor has CP form

    W_aux = sum_k w1(k) (x) w2(k) (x) w3(k)

with w1(k) over filters, w2(k) over input channels and w3(k) over the kernel.
'''

import logging
from collections import OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from auxtabl import linalg, layers
from auxtabl.adapters import IS1, IS2, MATERIALIZE_TAG, check_strategy
from auxtabl.errors import ShapeException, StateException, ConfigException

logger = logging.getLogger(__name__)

SAME = 'same'
VALID = 'valid'
PADDINGS = (SAME, VALID)

CONV_TAG = 'convolution'
CONV_OUTPUT_TAG = 'convolution_output'
DENSE_TAG = 'dense'

# Scale of the uniform initialization of the channel and kernel CP factors.
CP_FACTOR_SCALE = 1e-1
# Scale of the uniform initialization of the left factor of the head.
LEFT_HEAD_SCALE = 1e-2


def pad_amounts(kernel, padding):
    if padding == SAME:
        left = (kernel - 1) // 2
        return left, kernel - 1 - left
    return 0, 0


def output_length(length, kernel, stride, padding):
    left, right = pad_amounts(kernel, padding)
    padded = length + left + right
    if padded < kernel:
        raise ShapeException('Kernel of size {} is larger than the padded input of length {}'.format(
            kernel, padded))
    return (padded - kernel) // stride + 1


def _pad(X, left, right):
    return np.pad(X, ((0, 0),) * (X.ndim - 1) + ((left, right),))


def _windows(Xp, kernel, stride):
    '''
    Sliding windows of shape (..., channels, T_out, kernel).
    '''
    return sliding_window_view(Xp, kernel, axis=-1)[..., ::stride, :]


def _scatter_windows(dcols, padded_length, stride):
    '''
    Transpose of `_windows`: accumulates window gradients back onto the
    padded time axis.
    '''
    t_out, kernel = dcols.shape[-2:]
    dXp = np.zeros(dcols.shape[:-2] + (padded_length,))
    stop = stride * (t_out - 1) + 1
    for k in range(kernel):
        dXp[..., k:k + stop:stride] += dcols[..., k]
    return dXp


def _batch(shape):
    return int(np.prod(shape[:-2], dtype=np.int64)) if len(shape) > 2 else 1


def conv_linear(filters, X, stride, padding, counter=None):
    '''
    X (..., D, T) convolved with filters (F, D, t), no bias.
    Returns (Z, windows, (left, right)).
    '''
    n_filters, channels, kernel = filters.shape
    if X.ndim < 2 or X.shape[-2] != channels:
        raise ShapeException('Convolution with {} input channels got input of shape {}'.format(
            channels, X.shape))
    left, right = pad_amounts(kernel, padding)
    output_length(X.shape[-1], kernel, stride, padding)
    cols = _windows(_pad(X, left, right), kernel, stride)
    Z = np.einsum('...dot,fdt->...fo', cols, filters)
    if counter is not None:
        counter.add(_batch(Z.shape) * n_filters * channels * kernel * Z.shape[-1], tag=CONV_TAG)
    return linalg.check_finite(Z, 'convolution'), cols, (left, right)


def conv_linear_backward_input(filters, dZ, input_length, pads, stride):
    dcols = np.einsum('...fo,fdt->...dot', dZ, filters)
    left, right = pads
    dXp = _scatter_windows(dcols, input_length + left + right, stride)
    return dXp[..., left:left + input_length]


class Conv1dParams:
    '''
    `filters` (N x D x t), `bias` (N,), `stride`, `padding` ('same' or 'valid')
    and the input length the layer was built for.
    '''

    kind = 'Conv'

    def __init__(self, filters, bias, input_length, stride=1, padding=SAME, activation=layers.RELU):
        if padding not in PADDINGS:
            raise ConfigException('Unknown padding "{}". Expected one of {}'.format(padding, PADDINGS))
        if stride < 1:
            raise ConfigException('Stride must be positive, got {}'.format(stride))
        layers.check_activation(activation)
        self.filters = np.asarray(filters, dtype=linalg.DTYPE)
        self.bias = np.asarray(bias, dtype=linalg.DTYPE)
        if self.filters.ndim != 3 or self.bias.shape != (self.filters.shape[0],):
            raise ShapeException('Filters {} and bias {} are inconsistent'.format(
                self.filters.shape, self.bias.shape))
        self.input_length = input_length
        self.stride = stride
        self.padding = padding
        self.activation = activation
        output_length(input_length, self.kernel, stride, padding)

    @classmethod
    def initialize(cls, input_shape, n_filters, kernel, rng, stride=1, padding=SAME,
                   activation=layers.RELU):
        channels, length = input_shape
        limit = np.sqrt(6.0 / (channels * kernel + n_filters * kernel))
        return cls(
            filters=rng.uniform(-limit, limit, size=(n_filters, channels, kernel)),
            bias=np.zeros(n_filters),
            input_length=length, stride=stride, padding=padding, activation=activation,
        )

    @property
    def kernel(self):
        return self.filters.shape[2]

    @property
    def input_shape(self):
        return (self.filters.shape[1], self.input_length)

    @property
    def output_shape(self):
        return (self.filters.shape[0],
                output_length(self.input_length, self.kernel, self.stride, self.padding))

    def arrays(self):
        return OrderedDict([('filters', self.filters), ('bias', self.bias)])

    def trainable_masks(self):
        return OrderedDict((name, True) for name in self.arrays())

    def copy(self):
        return Conv1dParams(self.filters.copy(), self.bias.copy(), self.input_length,
                            self.stride, self.padding, self.activation)

    def param_count(self, count_fixed_diagonal=True):
        return self.filters.size + self.bias.size

    def forward(self, X, mode=layers.INFER, counter=None):
        return conv1d_forward(self, X, mode, counter)

    def backward(self, cache, dY):
        return conv1d_backward(self, cache, dY)


def _conv_output(Z, bias, activation, counter):
    Z = Z + bias[:, None]
    if counter is not None:
        counter.add(Z.size, tag=CONV_OUTPUT_TAG)
    return Z, layers.activate(Z, activation, counter, CONV_OUTPUT_TAG)


def conv_core_forward(filters, bias, stride, padding, activation, X, mode, counter):
    layers.check_mode(mode)
    Zlin, cols, pads = conv_linear(filters, X, stride, padding, counter)
    Z, Y = _conv_output(Zlin, bias, activation, counter)
    cache = None
    if mode == layers.TRAIN:
        cache = layers.LayerCache(X=X, Xbar=None, Z=Z, Y=Y, extra=dict(cols=cols, pads=pads))
    return Y, cache


def conv_core_backward(filters, stride, activation, cache, dY):
    if cache is None:
        raise StateException('Backward pass needs the cache of a training-mode forward pass')
    dZ = layers.activation_backward(cache.Z, cache.Y, dY, activation)
    dfilters = np.einsum('...fo,...dot->fdt', dZ, cache.extra['cols'])
    dbias = dZ.reshape((-1,) + dZ.shape[-2:]).sum(axis=(0, 2))
    dX = conv_linear_backward_input(filters, dZ, cache.X.shape[-1], cache.extra['pads'], stride)
    return OrderedDict([('filters', dfilters), ('bias', dbias)]), dX, dZ


def conv1d_forward(p, X, mode=layers.INFER, counter=None):
    '''
    Returns (Y, cache) with Y of shape (..., N, T_out).
    '''
    layers.check_input(p.input_shape, X)
    return conv_core_forward(p.filters, p.bias, p.stride, p.padding, p.activation, X, mode, counter)


def conv1d_backward(p, cache, dY):
    grads, dX, _ = conv_core_backward(p.filters, p.stride, p.activation, cache, dY)
    return grads, dX


def conv_forward_macs(N, channels, length, n_filters, kernel, stride=1, padding=SAME):
    t_out = output_length(length, kernel, stride, padding)
    return N * n_filters * channels * kernel * t_out + 2 * N * n_filters * t_out


class CpAuxFilters:
    '''
    CP factors `w1` (N x K), `w2` (D x K), `w3` (t x K); column k holds
    w1(k), w2(k), w3(k).
    '''

    def __init__(self, w1, w2, w3):
        self.w1 = np.asarray(w1, dtype=linalg.DTYPE)
        self.w2 = np.asarray(w2, dtype=linalg.DTYPE)
        self.w3 = np.asarray(w3, dtype=linalg.DTYPE)
        ranks = {self.w1.shape[1], self.w2.shape[1], self.w3.shape[1]}
        if len(ranks) != 1 or self.rank < 1:
            raise ShapeException('CP factors disagree on the rank: {}, {}, {}'.format(
                self.w1.shape, self.w2.shape, self.w3.shape))

    @property
    def rank(self):
        return self.w1.shape[1]

    @classmethod
    def initialize(cls, params, rank, rng):
        '''
        Filter factors zero, channel and kernel factors small uniform, so the
        auxiliary tensor starts at zero.
        '''
        if rank < 1:
            raise ConfigException('CP rank must be at least 1, got {}'.format(rank))
        n_filters, channels, kernel = params.filters.shape
        return cls(
            w1=np.zeros((n_filters, rank)),
            w2=rng.uniform(-CP_FACTOR_SCALE, CP_FACTOR_SCALE, size=(channels, rank)),
            w3=rng.uniform(-CP_FACTOR_SCALE, CP_FACTOR_SCALE, size=(kernel, rank)),
        )

    def tensor(self, counter=None):
        W = np.einsum('fk,dk,tk->fdt', self.w1, self.w2, self.w3)
        if counter is not None:
            counter.add(W.size * self.rank, tag=MATERIALIZE_TAG)
        return W

    def arrays(self):
        return OrderedDict([('w1', self.w1), ('w2', self.w2), ('w3', self.w3)])

    def copy(self):
        return CpAuxFilters(self.w1.copy(), self.w2.copy(), self.w3.copy())

    def padded(self, rank):
        extra = rank - self.rank
        if extra < 0:
            raise ConfigException('Cannot pad rank {} down to {}'.format(self.rank, rank))
        return CpAuxFilters(*[np.hstack([a, np.zeros((a.shape[0], extra))])
                              for a in self.arrays().values()])

    def param_count(self):
        return self.w1.size + self.w2.size + self.w3.size


class AugmentedConv1dLayer:
    '''
    A frozen convolution plus trainable CP auxiliary filters.
    '''

    def __init__(self, base, aux, strategy=IS2):
        check_strategy(strategy)
        n_filters, channels, kernel = base.filters.shape
        if (aux.w1.shape[0], aux.w2.shape[0], aux.w3.shape[0]) != (n_filters, channels, kernel):
            raise ShapeException('CP factors {}, {}, {} do not fit filters {}'.format(
                aux.w1.shape, aux.w2.shape, aux.w3.shape, base.filters.shape))
        self.base = base
        self.aux = aux
        self.strategy = strategy

    kind = 'aConv'

    @property
    def activation(self):
        return self.base.activation

    @property
    def input_shape(self):
        return self.base.input_shape

    @property
    def output_shape(self):
        return self.base.output_shape

    def arrays(self):
        named = OrderedDict(self.base.arrays())
        named.update(self.aux.arrays())
        return named

    def trainable_masks(self):
        masks = OrderedDict((name, False) for name in self.base.arrays())
        masks.update((name, True) for name in self.aux.arrays())
        return masks

    def base_hash(self):
        return linalg.array_hash(self.base.arrays())

    def copy(self):
        return AugmentedConv1dLayer(self.base.copy(), self.aux.copy(), self.strategy)

    def param_count(self, count_fixed_diagonal=True):
        return self.base.param_count() + self.aux.param_count()

    def forward(self, X, mode=layers.INFER, counter=None):
        return aug_conv_forward(self, X, mode, counter)

    def backward(self, cache, dY):
        return aug_conv_backward(self, cache, dY)

    def fold(self):
        return fold_conv(self.base, self.aux)


def aug_conv_forward(layer, X, mode=layers.INFER, counter=None):
    '''
    IS1 convolves with the folded filters W + W_aux. IS2 adds a factored
    path to the base convolution: project channels with w2, convolve each
    rank component over time with w3, expand to filters with w1.
    '''
    layers.check_input(layer.input_shape, X)
    layers.check_mode(mode)
    base, aux = layer.base, layer.aux
    if layer.strategy == IS1:
        filters = base.filters + aux.tensor(counter)
        Y, cache = conv_core_forward(
            filters, base.bias, base.stride, base.padding, base.activation, X, mode, counter)
        if cache is not None:
            cache.extra.update(strategy=IS1, filters=filters)
        return Y, cache
    Zbase, cols, pads = conv_linear(base.filters, X, base.stride, base.padding, counter)
    U = np.einsum('dk,...dT->...kT', aux.w2, X)
    Ucols = _windows(_pad(U, *pads), base.kernel, base.stride)
    V = np.einsum('...kot,tk->...ko', Ucols, aux.w3)
    Zaux = np.einsum('fk,...ko->...fo', aux.w1, V)
    if counter is not None:
        batch, t_out = _batch(Zbase.shape), Zbase.shape[-1]
        n_filters, channels, kernel = base.filters.shape
        counter.add(batch * aux.rank * (channels * X.shape[-1] + kernel * t_out + n_filters * t_out),
                    tag=CONV_TAG)
    Z, Y = _conv_output(Zbase + Zaux, base.bias, base.activation, counter)
    linalg.check_finite(Y, 'augmented convolution')
    cache = None
    if mode == layers.TRAIN:
        cache = layers.LayerCache(X=X, Xbar=None, Z=Z, Y=Y, extra=dict(
            strategy=IS2, cols=cols, pads=pads, Ucols=Ucols, V=V))
    return Y, cache


def aug_conv_backward(layer, cache, dY):
    '''
    Gradients of the CP factors and dX. The base filters and bias are frozen.
    '''
    if cache is None or 'strategy' not in cache.extra:
        raise StateException('Backward pass needs the cache of a training-mode augmented forward pass')
    base, aux, extra = layer.base, layer.aux, cache.extra
    grads = OrderedDict()
    if extra['strategy'] == IS1:
        dbase, dX, _ = conv_core_backward(extra['filters'], base.stride, base.activation, cache, dY)
        dW = dbase['filters']
        grads['w1'] = np.einsum('fdt,dk,tk->fk', dW, aux.w2, aux.w3)
        grads['w2'] = np.einsum('fdt,fk,tk->dk', dW, aux.w1, aux.w3)
        grads['w3'] = np.einsum('fdt,fk,dk->tk', dW, aux.w1, aux.w2)
        return grads, dX
    dZ = layers.activation_backward(cache.Z, cache.Y, dY, base.activation)
    length = cache.X.shape[-1]
    grads['w1'] = np.einsum('...fo,...ko->fk', dZ, extra['V'])
    dV = np.einsum('fk,...fo->...ko', aux.w1, dZ)
    grads['w3'] = np.einsum('...ko,...kot->tk', dV, extra['Ucols'])
    dUcols = np.einsum('...ko,tk->...kot', dV, aux.w3)
    left, right = extra['pads']
    dU = _scatter_windows(dUcols, length + left + right, base.stride)[..., left:left + length]
    grads['w2'] = np.einsum('...kT,...dT->dk', dU, cache.X)
    dX = conv_linear_backward_input(base.filters, dZ, length, extra['pads'], base.stride)
    dX = dX + np.einsum('dk,...kT->...dT', aux.w2, dU)
    return grads, dX


def fold_conv(p, aux):
    '''
    A plain convolution with filters W + W_aux; same size as `p`.
    '''
    return Conv1dParams(p.filters + aux.tensor(), p.bias.copy(), p.input_length,
                        p.stride, p.padding, p.activation)


class DenseParams:
    '''
    Classifier head: flattens a (C, T) feature map and maps it to a
    (classes, 1) column of class probabilities.
    '''

    kind = 'Dense'

    def __init__(self, W, b, input_shape, activation=layers.SOFTMAX_COLUMNS):
        layers.check_activation(activation)
        self.W = np.asarray(W, dtype=linalg.DTYPE)
        self.b = np.asarray(b, dtype=linalg.DTYPE)
        self._input_shape = tuple(input_shape)
        if self.W.shape[1] != self._input_shape[0] * self._input_shape[1] \
                or self.b.shape != (self.W.shape[0], 1):
            raise ShapeException('Dense weights {} and bias {} do not fit input {}'.format(
                self.W.shape, self.b.shape, input_shape))
        self.activation = activation

    @classmethod
    def initialize(cls, input_shape, classes, rng, activation=layers.SOFTMAX_COLUMNS):
        flat = input_shape[0] * input_shape[1]
        return cls(layers.glorot_uniform(rng, classes, flat), np.zeros((classes, 1)),
                   input_shape, activation)

    @property
    def input_shape(self):
        return self._input_shape

    @property
    def output_shape(self):
        return (self.W.shape[0], 1)

    def arrays(self):
        return OrderedDict([('W', self.W), ('b', self.b)])

    def trainable_masks(self):
        return OrderedDict((name, True) for name in self.arrays())

    def copy(self):
        return DenseParams(self.W.copy(), self.b.copy(), self._input_shape, self.activation)

    def param_count(self, count_fixed_diagonal=True):
        return self.W.size + self.b.size

    def forward(self, X, mode=layers.INFER, counter=None):
        layers.check_input(self.input_shape, X)
        layers.check_mode(mode)
        flat = X.reshape(X.shape[:-2] + (self.W.shape[1], 1))
        Z = linalg.add(linalg.matmul(self.W, flat, counter, DENSE_TAG), self.b, counter, DENSE_TAG)
        Y = layers.activate(Z, self.activation, counter, DENSE_TAG)
        cache = None
        if mode == layers.TRAIN:
            cache = layers.LayerCache(X=X, Xbar=flat, Z=Z, Y=Y)
        return Y, cache

    def backward(self, cache, dY):
        if cache is None:
            raise StateException('Backward pass needs the cache of a training-mode forward pass')
        dZ = layers.activation_backward(cache.Z, cache.Y, dY, self.activation)
        dW = layers.sum_batch(linalg.matmul(dZ, linalg.transpose(cache.Xbar)), self.W.shape)
        db = layers.sum_batch(dZ, self.b.shape)
        dX = linalg.matmul(self.W.T, dZ).reshape(cache.X.shape)
        return OrderedDict([('W', dW), ('b', db)]), dX


def dense_forward_macs(N, flat, classes):
    return N * classes * flat + 2 * N * classes


class DenseAux:
    '''
    Two-factor auxiliary weight of the classifier head: W_aux = L R with
    `L` (classes x K) and `R` (K x flat).
    '''

    def __init__(self, L, R):
        self.L = np.asarray(L, dtype=linalg.DTYPE)
        self.R = np.asarray(R, dtype=linalg.DTYPE)
        if self.L.shape[1] != self.R.shape[0]:
            raise ShapeException('Head factors disagree on the rank: {} and {}'.format(
                self.L.shape, self.R.shape))

    @property
    def rank(self):
        return self.L.shape[1]

    @classmethod
    def initialize(cls, params, rank, rng):
        classes, flat = params.W.shape
        if rank < 1 or rank > min(classes, flat):
            raise ConfigException('Rank {} outside [1, {}] for the classifier head'.format(
                rank, min(classes, flat)))
        return cls(rng.uniform(-LEFT_HEAD_SCALE, LEFT_HEAD_SCALE, size=(classes, rank)),
                   np.zeros((rank, flat)))

    def arrays(self):
        return OrderedDict([('L', self.L), ('R', self.R)])

    def copy(self):
        return DenseAux(self.L.copy(), self.R.copy())

    def padded(self, rank):
        extra = rank - self.rank
        if extra < 0:
            raise ConfigException('Cannot pad rank {} down to {}'.format(self.rank, rank))
        return DenseAux(np.hstack([self.L, np.zeros((self.L.shape[0], extra))]),
                        np.vstack([self.R, np.zeros((extra, self.R.shape[1]))]))

    def param_count(self):
        return self.L.size + self.R.size


class AugmentedDenseLayer:
    '''
    Frozen classifier head with a low-rank auxiliary weight. IS1 adds L R to
    W before the product; IS2 computes W x + L (R x).
    '''

    kind = 'aDense'

    def __init__(self, base, aux, strategy=IS2):
        check_strategy(strategy)
        if aux.L.shape[0] != base.W.shape[0] or aux.R.shape[1] != base.W.shape[1]:
            raise ShapeException('Head factors {} and {} do not fit weights {}'.format(
                aux.L.shape, aux.R.shape, base.W.shape))
        self.base = base
        self.aux = aux
        self.strategy = strategy

    @property
    def activation(self):
        return self.base.activation

    @property
    def input_shape(self):
        return self.base.input_shape

    @property
    def output_shape(self):
        return self.base.output_shape

    def arrays(self):
        named = OrderedDict(self.base.arrays())
        named.update(self.aux.arrays())
        return named

    def trainable_masks(self):
        masks = OrderedDict((name, False) for name in self.base.arrays())
        masks.update((name, True) for name in self.aux.arrays())
        return masks

    def base_hash(self):
        return linalg.array_hash(self.base.arrays())

    def copy(self):
        return AugmentedDenseLayer(self.base.copy(), self.aux.copy(), self.strategy)

    def param_count(self, count_fixed_diagonal=True):
        return self.base.param_count() + self.aux.param_count()

    def forward(self, X, mode=layers.INFER, counter=None):
        layers.check_input(self.input_shape, X)
        layers.check_mode(mode)
        base, aux = self.base, self.aux
        flat = X.reshape(X.shape[:-2] + (base.W.shape[1], 1))
        Rx = None
        if self.strategy == IS1:
            W = base.W + linalg.matmul(aux.L, aux.R, counter, MATERIALIZE_TAG)
            Wx = linalg.matmul(W, flat, counter, DENSE_TAG)
        else:
            Rx = linalg.matmul(aux.R, flat, counter, DENSE_TAG)
            Wx = linalg.add(linalg.matmul(base.W, flat, counter, DENSE_TAG),
                            linalg.matmul(aux.L, Rx, counter, DENSE_TAG))
        Z = linalg.add(Wx, base.b, counter, DENSE_TAG)
        Y = layers.activate(Z, base.activation, counter, DENSE_TAG)
        cache = None
        if mode == layers.TRAIN:
            cache = layers.LayerCache(X=X, Xbar=flat, Z=Z, Y=Y, extra=dict(strategy=self.strategy))
        return Y, cache

    def backward(self, cache, dY):
        if cache is None or 'strategy' not in cache.extra:
            raise StateException('Backward pass needs the cache of a training-mode augmented forward pass')
        base, aux = self.base, self.aux
        dZ = layers.activation_backward(cache.Z, cache.Y, dY, base.activation)
        dW = layers.sum_batch(linalg.matmul(dZ, linalg.transpose(cache.Xbar)), base.W.shape)
        grads = OrderedDict([('L', linalg.matmul(dW, aux.R.T)), ('R', linalg.matmul(aux.L.T, dW))])
        W = base.W + linalg.matmul(aux.L, aux.R)
        dX = linalg.matmul(W.T, dZ).reshape(cache.X.shape)
        return grads, dX

    def fold(self):
        base = self.base
        return DenseParams(base.W + linalg.matmul(self.aux.L, self.aux.R), base.b.copy(),
                           base.input_shape, base.activation)


class CnnArchSpec:
    '''
    Convolution stack as a list of (filters, kernel) pairs, followed by a
    dense softmax head.
    '''

    def __init__(self, conv_layers, input_shape=(40, 10), classes=3, stride=1, padding=SAME):
        self.conv_layers = [tuple(int(v) for v in layer) for layer in conv_layers]
        self.input_shape = tuple(input_shape)
        self.classes = classes
        self.stride = stride
        self.padding = padding

    def to_dict(self):
        return {
            'conv_layers': [list(layer) for layer in self.conv_layers],
            'input_shape': list(self.input_shape),
            'classes': self.classes,
            'stride': self.stride,
            'padding': self.padding,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d['conv_layers'], tuple(d.get('input_shape', (40, 10))), d.get('classes', 3),
                   d.get('stride', 1), d.get('padding', SAME))


# Seven Conv1D(filters, kernel) layers. Only the layer count is fixed; the
# filter counts and kernel sizes are our own choice, overridable through the
# cnn.layers config key.
DEFAULT_CNN = CnnArchSpec([(32, 3), (32, 3), (32, 3), (16, 3), (16, 3), (16, 3), (16, 3)])


def cnn_layers(arch, rng):
    if not arch.conv_layers:
        raise ConfigException('A CNN needs at least one convolution layer')
    result = []
    shape = arch.input_shape
    for n_filters, kernel in arch.conv_layers:
        layer = Conv1dParams.initialize(shape, n_filters, kernel, rng, arch.stride, arch.padding)
        result.append(layer)
        shape = layer.output_shape
    result.append(DenseParams.initialize(shape, arch.classes, rng))
    return result


def build_cnn(arch=DEFAULT_CNN, seed=0):
    '''
    Builds the convolutional classifier described by `arch`.
    '''
    from auxtabl import models
    return models.build(models.Topology.from_cnn(arch), seed)
