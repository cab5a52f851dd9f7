'''
Dense real-matrix kernel.

Matrices are float64 numpy arrays. Any number of leading batch axes is
allowed; the last two axes are rows and columns.  An `OpCounter` can be passed
to the operations that the complexity audit cares about, and accumulates
multiply-accumulate operations (MACs).
'''

import hashlib
import logging
from collections import defaultdict

import numpy as np

from auxtabl.errors import ShapeException, NumericException

logger = logging.getLogger(__name__)

DTYPE = np.float64


class OpCounter:
    '''
    Accumulates multiply-accumulate operations.

    `mac_count` is the running total. `by_tag` breaks the total down by the
    tag passed with each addition, so that individual equations of a layer
    can be audited separately.
    '''

    def __init__(self):
        self.mac_count = 0
        self.by_tag = defaultdict(int)

    def add(self, count, tag=None):
        count = int(count)
        if count < 0:
            raise ValueError('MAC counts are non-negative, got {}'.format(count))
        self.mac_count += count
        if tag is not None:
            self.by_tag[tag] += count

    def reset(self):
        self.mac_count = 0
        self.by_tag = defaultdict(int)

    def __repr__(self):
        return 'OpCounter(mac_count={})'.format(self.mac_count)


def matrix(values):
    '''
    Makes a float64 matrix (or batch of matrices) from `values`.
    '''
    m = np.array(values, dtype=DTYPE)
    if m.ndim < 2:
        raise ShapeException('A matrix needs at least 2 axes, got shape {}'.format(m.shape))
    check_finite(m, 'matrix')
    return m


def zeros(rows, cols):
    return np.zeros((rows, cols), dtype=DTYPE)


def identity(n):
    return np.eye(n, dtype=DTYPE)


def check_finite(m, operation):
    if not np.all(np.isfinite(m)):
        raise NumericException('Non-finite values produced by {}'.format(operation))
    return m


def _batch_size(shape):
    return int(np.prod(shape[:-2], dtype=np.int64)) if len(shape) > 2 else 1


def matmul(a, b, counter=None, tag=None):
    '''
    Matrix product `a @ b`, broadcasting over leading batch axes.

    If `counter` is given, adds batch * a.rows * a.cols * b.cols MACs.
    '''
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeException(
            'Cannot multiply matrices of shapes {} and {}'.format(a.shape, b.shape))
    try:
        result = np.matmul(a, b)
    except ValueError as e:
        raise ShapeException(
            'Cannot multiply matrices of shapes {} and {}: {}'.format(a.shape, b.shape, e))
    if counter is not None:
        batch = _batch_size(result.shape)
        counter.add(batch * result.shape[-2] * a.shape[-1] * result.shape[-1], tag=tag)
    return check_finite(result, 'matmul')


def _softmax(m, axis):
    shifted = m - np.max(m, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def row_softmax(m):
    '''
    Softmax along each row (the last axis), with per-row max subtraction.
    '''
    return check_finite(_softmax(m, axis=-1), 'row_softmax')


def column_softmax(m):
    '''
    Softmax down each column (the second to last axis).
    '''
    return check_finite(_softmax(m, axis=-2), 'column_softmax')


def _check_same_matrix_shape(a, b, operation):
    if a.shape[-2:] != b.shape[-2:]:
        raise ShapeException(
            'Shapes {} and {} do not match in {}'.format(a.shape, b.shape, operation))


def hadamard(a, b):
    _check_same_matrix_shape(a, b, 'hadamard')
    return check_finite(a * b, 'hadamard')


def add(a, b, counter=None, tag=None):
    '''
    Elementwise sum. `b` may lack the batch axes of `a` (e.g. a bias).
    If `counter` is given, one operation per output entry is added.
    '''
    _check_same_matrix_shape(a, b, 'add')
    result = a + b
    if counter is not None:
        counter.add(result.size, tag=tag)
    return check_finite(result, 'add')


def scale(a, s):
    return check_finite(a * float(s), 'scale')


def transpose(m):
    '''
    Transposes the last two axes.
    '''
    return np.swapaxes(m, -1, -2)


def array_hash(named_arrays):
    '''
    SHA-256 hex digest of named arrays (name, shape and little-endian bytes).
    '''
    h = hashlib.sha256()
    for name, array in named_arrays.items():
        a = np.ascontiguousarray(array, dtype='<f8')
        h.update(name.encode('utf-8'))
        h.update(repr(a.shape).encode('utf-8'))
        h.update(a.tobytes())
    return h.hexdigest()
