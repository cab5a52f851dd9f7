'''
Low-rank auxiliary connections for pre-trained BL/TABL layers.

The base weights of an `AugmentedTablLayer` are frozen. Each weight matrix
of the base layer gets a parallel connection parameterized by two factors:

    W1_aux = L1 R1,    W_aux = L R,    W2_aux = L2 R2

Two forward strategies compute the same output:

  * IS1 materializes the auxiliary matrices, adds them to the base weights and
    evaluates the plain layer equations.
  * IS2 never materializes them and multiplies through the factors, left to
    right: W1 X + L1 (R1 X), Xbar W + (Xbar L) R, Xtilde W2 + (Xtilde L2) R2.

After training, `fold` adds the auxiliary matrices into the base weights,
giving a plain layer with the base layer's size and inference cost.
'''

import logging
from collections import OrderedDict

import numpy as np

from auxtabl import linalg, layers
from auxtabl.errors import ConfigException, ShapeException, StateException

logger = logging.getLogger(__name__)

IS1 = 'is1'
IS2 = 'is2'
STRATEGIES = (IS1, IS2)

MATERIALIZE_TAG = 'aux_materialize'

# Scale of the uniform initialization of the left factors.
LEFT_FACTOR_SCALE = 1e-2


def check_strategy(strategy):
    if strategy not in STRATEGIES:
        raise ConfigException('Unknown strategy "{}". Expected one of {}'.format(
            strategy, STRATEGIES))


def max_rank(input_shape, output_shape):
    D, T = input_shape
    d_out, t_out = output_shape
    return min(D, d_out, T, t_out)


class AuxFactors:
    '''
    Factors of the auxiliary connections of one layer.

    `L1` (D' x K), `R1` (K x D), `L` (T x K), `R` (K x T), `L2` (T x K),
    `R2` (K x T'). `L` and `R` are None for a BL, which has no attention
    matrix to augment.
    '''

    def __init__(self, L1, R1, L2, R2, L=None, R=None):
        self.L1 = np.asarray(L1, dtype=linalg.DTYPE)
        self.R1 = np.asarray(R1, dtype=linalg.DTYPE)
        self.L2 = np.asarray(L2, dtype=linalg.DTYPE)
        self.R2 = np.asarray(R2, dtype=linalg.DTYPE)
        self.L = None if L is None else np.asarray(L, dtype=linalg.DTYPE)
        self.R = None if R is None else np.asarray(R, dtype=linalg.DTYPE)
        if (self.L is None) != (self.R is None):
            raise ShapeException('L and R must both be present or both be absent')
        ranks = set(a.shape[1] for a in (self.L1, self.L2) + ((self.L,) if self.has_attention else ()))
        ranks |= set(a.shape[0] for a in (self.R1, self.R2) + ((self.R,) if self.has_attention else ()))
        if len(ranks) != 1:
            raise ShapeException('Auxiliary factors disagree on the rank: {}'.format(sorted(ranks)))

    @property
    def has_attention(self):
        return self.L is not None

    @property
    def rank(self):
        return self.L1.shape[1]

    @classmethod
    def initialize(cls, params, rank, rng, attention=None):
        '''
        Left factors small uniform, right factors zero, so that the auxiliary
        matrices start at zero.
        '''
        if attention is None:
            attention = params.kind == 'TABL'
        bound = max_rank(params.input_shape, params.output_shape)
        if rank < 1 or rank > bound:
            raise ConfigException('Rank {} outside [1, {}] for a layer {} -> {}'.format(
                rank, bound, params.input_shape, params.output_shape))
        D, T = params.input_shape
        d_out, t_out = params.output_shape

        def left(rows):
            return rng.uniform(-LEFT_FACTOR_SCALE, LEFT_FACTOR_SCALE, size=(rows, rank))

        kwargs = dict(
            L1=left(d_out), R1=np.zeros((rank, D)),
            L2=left(T), R2=np.zeros((rank, t_out)),
        )
        if attention:
            kwargs.update(L=left(T), R=np.zeros((rank, T)))
        return cls(**kwargs)

    def arrays(self):
        names = ('L1', 'R1', 'L', 'R', 'L2', 'R2') if self.has_attention else ('L1', 'R1', 'L2', 'R2')
        return OrderedDict((name, getattr(self, name)) for name in names)

    def copy(self):
        return AuxFactors(**{name: a.copy() for name, a in self.arrays().items()})

    def padded(self, rank):
        '''
        The same auxiliary connections expressed with a larger rank, by
        appending zero columns to the left factors and zero rows to the right.
        '''
        extra = rank - self.rank
        if extra < 0:
            raise ConfigException('Cannot pad rank {} down to {}'.format(self.rank, rank))
        kwargs = {}
        for name, a in self.arrays().items():
            if name.startswith('L'):
                kwargs[name] = np.hstack([a, np.zeros((a.shape[0], extra))])
            else:
                kwargs[name] = np.vstack([a, np.zeros((extra, a.shape[1]))])
        return AuxFactors(**kwargs)

    def materialize(self, counter=None):
        '''
        Returns (W1_aux, W_aux, W2_aux); W_aux is None without attention.
        '''
        W1_aux = linalg.matmul(self.L1, self.R1, counter, MATERIALIZE_TAG)
        W_aux = None
        if self.has_attention:
            W_aux = linalg.matmul(self.L, self.R, counter, MATERIALIZE_TAG)
        W2_aux = linalg.matmul(self.L2, self.R2, counter, MATERIALIZE_TAG)
        return W1_aux, W_aux, W2_aux

    def param_count(self):
        return sum(a.size for a in self.arrays().values())


class AugmentedTablLayer:
    '''
    A frozen BL or TABL together with trainable auxiliary factors.

    `train_lambda` lets the blend scalar of a TABL train with the factors;
    by default it stays frozen with the rest of the base layer.
    '''

    def __init__(self, base, aux, strategy=IS2, train_lambda=False):
        check_strategy(strategy)
        if aux.has_attention != (base.kind == 'TABL'):
            raise ShapeException('Auxiliary factors of a {} must {}include L and R'.format(
                base.kind, '' if base.kind == 'TABL' else 'not '))
        D, T = base.input_shape
        d_out, t_out = base.output_shape
        expected = {'L1': (d_out, None), 'R1': (None, D), 'L2': (T, None), 'R2': (None, t_out),
                    'L': (T, None), 'R': (None, T)}
        for name, a in aux.arrays().items():
            rows, cols = expected[name]
            if (rows is not None and a.shape[0] != rows) or (cols is not None and a.shape[1] != cols):
                raise ShapeException('Factor {} has shape {} which does not fit a layer {} -> {}'.format(
                    name, a.shape, base.input_shape, base.output_shape))
        self.base = base
        self.aux = aux
        self.strategy = strategy
        self.train_lambda = train_lambda

    @property
    def kind(self):
        return 'a' + self.base.kind

    @property
    def activation(self):
        return self.base.activation

    @property
    def input_shape(self):
        return self.base.input_shape

    @property
    def output_shape(self):
        return self.base.output_shape

    @property
    def has_attention(self):
        return self.base.kind == 'TABL'

    def arrays(self):
        named = OrderedDict(self.base.arrays())
        named.update(self.aux.arrays())
        return named

    def trainable_masks(self):
        masks = OrderedDict((name, False) for name in self.base.arrays())
        if self.train_lambda and self.has_attention:
            masks['lam'] = True
        masks.update((name, True) for name in self.aux.arrays())
        return masks

    def base_hash(self):
        return linalg.array_hash(self.base.arrays())

    def copy(self):
        return AugmentedTablLayer(self.base.copy(), self.aux.copy(), self.strategy, self.train_lambda)

    def param_count(self, count_fixed_diagonal=True):
        return self.base.param_count(count_fixed_diagonal) + self.aux.param_count()

    def forward(self, X, mode=layers.INFER, counter=None):
        if self.strategy == IS1:
            return aug_forward_is1(self, X, mode, counter)
        return aug_forward_is2(self, X, mode, counter)

    def backward(self, cache, dY):
        return aug_backward(self, cache, dY)

    def fold(self):
        return fold(self)


def aug_forward_is1(layer, X, mode=layers.INFER, counter=None):
    '''
    Materializes W_new = W + L R for each weight, then runs the plain layer.
    '''
    layers.check_input(layer.input_shape, X)
    base = layer.base
    W1_aux, W_aux, W2_aux = layer.aux.materialize(counter)
    W1 = base.W1 + W1_aux
    W2 = base.W2 + W2_aux
    if layer.has_attention:
        W = base.W + W_aux
        Y, cache = layers.tabl_core_forward(
            W1, W, W2, base.B, base.lam, base.activation, X, mode, counter)
    else:
        W = None
        Y, cache = layers.bl_core_forward(W1, W2, base.B, base.activation, X, mode, counter)
    if cache is not None:
        cache.extra.update(strategy=IS1, W1=W1, W=W, W2=W2)
    return Y, cache


def aug_forward_is2(layer, X, mode=layers.INFER, counter=None):
    '''
    Multiplies through the factors without materializing the auxiliary
    matrices.
    '''
    layers.check_input(layer.input_shape, X)
    layers.check_mode(mode)
    base, aux = layer.base, layer.aux
    R1X = linalg.matmul(aux.R1, X, counter, layers.FEATURE_TAG)
    Xbar = linalg.add(
        linalg.matmul(base.W1, X, counter, layers.FEATURE_TAG),
        linalg.matmul(aux.L1, R1X, counter, layers.FEATURE_TAG))
    E = A = XbarL = None
    if layer.has_attention:
        XbarL = linalg.matmul(Xbar, aux.L, counter, layers.ATTENTION_TAG)
        E = linalg.add(
            linalg.matmul(Xbar, base.W, counter, layers.ATTENTION_TAG),
            linalg.matmul(XbarL, aux.R, counter, layers.ATTENTION_TAG))
        A = linalg.row_softmax(E)
        Xtilde = layers.blend(Xbar, A, float(base.lam))
    else:
        Xtilde = Xbar
    XtildeL2 = linalg.matmul(Xtilde, aux.L2, counter, layers.OUTPUT_TAG)
    Z = linalg.add(
        linalg.matmul(Xtilde, base.W2, counter, layers.OUTPUT_TAG),
        linalg.matmul(XtildeL2, aux.R2, counter, layers.OUTPUT_TAG))
    Z = linalg.add(Z, base.B, counter, layers.OUTPUT_TAG)
    Y = layers.activate(Z, base.activation, counter, layers.OUTPUT_TAG)
    cache = None
    if mode == layers.TRAIN:
        cache = layers.LayerCache(
            X=X, Xbar=Xbar, E=E, A=A, Xtilde=Xtilde, Z=Z, Y=Y,
            extra=dict(strategy=IS2, R1X=R1X, XbarL=XbarL, XtildeL2=XtildeL2))
    return Y, cache


def _factor_grads(dW_new, L, R):
    '''
    Chain rule through W_aux = L R.
    '''
    return linalg.matmul(dW_new, R.T), linalg.matmul(L.T, dW_new)


def _aug_backward_is1(layer, cache, dY):
    base, aux, extra = layer.base, layer.aux, cache.extra
    if layer.has_attention:
        dnew, dX = layers.tabl_core_backward(
            extra['W1'], extra['W'], extra['W2'], base.B, base.lam, base.activation, cache, dY)
    else:
        dnew, dX = layers.bl_core_backward(
            extra['W1'], extra['W2'], base.B, base.activation, cache, dY)
    grads = OrderedDict()
    grads['L1'], grads['R1'] = _factor_grads(dnew['W1'], aux.L1, aux.R1)
    if layer.has_attention:
        grads['L'], grads['R'] = _factor_grads(dnew['W'], aux.L, aux.R)
    grads['L2'], grads['R2'] = _factor_grads(dnew['W2'], aux.L2, aux.R2)
    if layer.train_lambda and layer.has_attention:
        grads['lam'] = dnew['lam']
    return grads, dX


def _aug_backward_is2(layer, cache, dY):
    base, aux, extra = layer.base, layer.aux, cache.extra
    sum_batch = layers.sum_batch
    T = linalg.transpose
    grads = OrderedDict()
    dZ = layers.activation_backward(cache.Z, cache.Y, dY, base.activation)
    dZR2 = linalg.matmul(dZ, aux.R2.T)
    grads['R2'] = sum_batch(linalg.matmul(T(extra['XtildeL2']), dZ), aux.R2.shape)
    grads['L2'] = sum_batch(linalg.matmul(T(cache.Xtilde), dZR2), aux.L2.shape)
    dXtilde = linalg.matmul(dZ, base.W2.T) + linalg.matmul(dZR2, aux.L2.T)
    if layer.has_attention:
        dlam, dXbar, dE = layers.attention_backward(cache.Xbar, cache.A, float(base.lam), dXtilde)
        dER = linalg.matmul(dE, aux.R.T)
        grads['R'] = sum_batch(linalg.matmul(T(extra['XbarL']), dE), aux.R.shape)
        grads['L'] = sum_batch(linalg.matmul(T(cache.Xbar), dER), aux.L.shape)
        dXbar = dXbar + linalg.matmul(dE, base.W.T) + linalg.matmul(dER, aux.L.T)
        if layer.train_lambda:
            grads['lam'] = dlam
    else:
        dXbar = dXtilde
    L1T_dXbar = linalg.matmul(aux.L1.T, dXbar)
    grads['L1'] = sum_batch(linalg.matmul(dXbar, T(extra['R1X'])), aux.L1.shape)
    grads['R1'] = sum_batch(linalg.matmul(L1T_dXbar, T(cache.X)), aux.R1.shape)
    dX = linalg.matmul(base.W1.T, dXbar) + linalg.matmul(aux.R1.T, L1T_dXbar)
    return grads, dX


def aug_backward(layer, cache, dY):
    '''
    Gradients of the auxiliary factors (and of lam when it trains) plus dX.
    No gradients are produced for the frozen base weights.
    '''
    if cache is None or 'strategy' not in cache.extra:
        raise StateException('Backward pass needs the cache of a training-mode augmented forward pass')
    if cache.extra['strategy'] == IS1:
        grads, dX = _aug_backward_is1(layer, cache, dY)
    else:
        grads, dX = _aug_backward_is2(layer, cache, dY)
    order = [name for name in layer.trainable_masks() if name in grads]
    return OrderedDict((name, grads[name]) for name in order), dX


def fold(layer):
    '''
    Adds the auxiliary matrices into the base weights, returning a plain
    layer of the base layer's type and size.
    '''
    base = layer.base
    W1_aux, W_aux, W2_aux = layer.aux.materialize()
    if layer.has_attention:
        return layers.TablLayerParams(
            W1=base.W1 + W1_aux, W=base.W + W_aux, W2=base.W2 + W2_aux,
            B=base.B.copy(), lam=base.lam.copy(), activation=base.activation)
    return layers.BlLayerParams(
        W1=base.W1 + W1_aux, W2=base.W2 + W2_aux, B=base.B.copy(), activation=base.activation)


def base_param_count(dims, attention=True, count_fixed_diagonal=True):
    '''
    Parameters of a plain layer with `dims` = (D, D', T, T').
    '''
    D, d_out, T, t_out = dims
    count = d_out * D + T * t_out + d_out * t_out
    if attention:
        count += T * T + 1
        if not count_fixed_diagonal:
            count -= T
    return count


def aux_param_count(dims, rank, attention=True):
    '''
    Parameters of the auxiliary factors of rank `rank` for `dims` = (D, D', T, T').
    '''
    D, d_out, T, t_out = dims
    count = rank * (d_out + D) + rank * (T + t_out)
    if attention:
        count += rank * 2 * T
    return count


def is1_forward_macs(N, D, d_out, T, t_out, rank, attention=True):
    '''
    Closed-form operation counts of an IS1 forward pass, keyed by tag.
    '''
    K = rank
    counts = OrderedDict()
    counts[MATERIALIZE_TAG] = K * (d_out * D + T * t_out + (T * T if attention else 0))
    counts[layers.FEATURE_TAG] = N * D * d_out * T
    if attention:
        counts[layers.ATTENTION_TAG] = N * d_out * T * T
    counts[layers.OUTPUT_TAG] = N * d_out * T * t_out + 2 * N * d_out * t_out
    return counts


def is2_forward_macs(N, D, d_out, T, t_out, rank, attention=True):
    '''
    Closed-form operation counts of an IS2 forward pass, keyed by tag.
    '''
    K = rank
    counts = OrderedDict()
    counts[layers.FEATURE_TAG] = N * D * d_out * T + N * D * K * T + N * K * T * d_out
    if attention:
        counts[layers.ATTENTION_TAG] = N * d_out * T * T + N * d_out * T * K + N * d_out * K * T
    counts[layers.OUTPUT_TAG] = (N * d_out * T * t_out + N * d_out * T * K + N * d_out * K * t_out
                                 + 2 * N * d_out * t_out)
    return counts
