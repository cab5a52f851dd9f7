'''
Confusion matrices, macro-averaged classification metrics and win-rate.

Classes are 0 (stationary), 1 (up) and 2 (down).
'''

import logging
from collections import namedtuple

import numpy as np

from auxtabl.errors import ShapeException, DomainException

logger = logging.getLogger(__name__)

N_CLASSES = 3
CLASS_NAMES = ('stationary', 'up', 'down')

Metrics = namedtuple('Metrics', ['accuracy', 'precision', 'recall', 'f1'])


class ConfusionMatrix:
    '''
    3 x 3 counts; rows are the true class, columns the predicted class.
    '''

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (N_CLASSES, N_CLASSES):
            raise ShapeException('A confusion matrix is {0} x {0}, got shape {1}'.format(
                N_CLASSES, counts.shape))
        if np.any(counts < 0):
            raise DomainException('Confusion matrix counts must be non-negative')
        self.counts = counts

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def rows(self):
        return [[CLASS_NAMES[i]] + [int(c) for c in self.counts[i]] for i in range(N_CLASSES)]

    def __repr__(self):
        return 'ConfusionMatrix({})'.format(self.counts.tolist())


def confusion_matrix(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ShapeException('{} true labels but {} predictions'.format(y_true.shape, y_pred.shape))
    for labels in (y_true, y_pred):
        if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
            raise DomainException('Labels must lie in [0, {})'.format(N_CLASSES))
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts)


def _ratio(numerator, denominator):
    return np.divide(numerator, denominator, out=np.zeros(len(numerator)),
                     where=denominator > 0)


def metrics(cm):
    '''
    Accuracy and macro-averaged precision, recall and F1 (the mean of the
    per-class F1 scores). 0/0 counts as 0.
    '''
    counts = cm.counts.astype(float)
    tp = np.diag(counts)
    precision = _ratio(tp, counts.sum(axis=0))
    recall = _ratio(tp, counts.sum(axis=1))
    f1 = _ratio(2 * precision * recall, precision + recall)
    accuracy = tp.sum() / counts.sum() if cm.total else 0.0
    return Metrics(float(accuracy), float(precision.mean()), float(recall.mean()), float(f1.mean()))


def win_rate(cm):
    '''
    Percentage of the up/down predictions that were correct, or None when
    nothing but stationary was predicted.
    '''
    c = cm.counts
    signalled = int(c[:, 1].sum() + c[:, 2].sum())
    if signalled == 0:
        return None
    return 100.0 * (c[1, 1] + c[2, 2]) / signalled
