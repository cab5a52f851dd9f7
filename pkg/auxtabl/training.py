'''
Weighted entropy loss, Adam with a reduce-on-plateau schedule, parameter
freezing, the training loop and a finite-difference gradient check.

Models are trained in place. A model exposes `forward(X, mode)` returning
class probabilities of shape (N, 3, 1), `backward(caches, dY)` returning the
gradients of its trainable parameters keyed by qualified name, and
`named_arrays()` / `trainable_masks()` over the same names.
'''

import logging
from collections import OrderedDict, namedtuple

import numpy as np

from auxtabl import layers, linalg, metrics, reports
from auxtabl.errors import DomainException, ShapeException, StateException

logger = logging.getLogger(__name__)

N_CLASSES = 3
DEFAULT_BETA = 1e6
PROBABILITY_FLOOR = 1e-12

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


class WeightedEntropyLoss:
    '''
    -sum_c (beta / N_c) y_c log(p_c) with one-hot y.
    '''

    def __init__(self, class_counts, beta=DEFAULT_BETA):
        counts = np.asarray(class_counts, dtype=np.int64)
        if counts.shape != (N_CLASSES,) or np.any(counts <= 0):
            raise DomainException('Class counts must be {} positive integers, got {}'.format(
                N_CLASSES, list(class_counts)))
        if beta <= 0:
            raise DomainException('beta must be positive, got {}'.format(beta))
        self.class_counts = counts
        self.beta = float(beta)
        self.weights = self.beta / counts

    @classmethod
    def from_labels(cls, labels, beta=DEFAULT_BETA):
        '''
        Counts classes in `labels`. An absent class is counted once so its
        weight stays finite.
        '''
        counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=N_CLASSES)[:N_CLASSES]
        if np.any(counts == 0):
            logger.warning('Classes %s do not occur in the training labels.',
                           [c for c in range(N_CLASSES) if counts[c] == 0])
        return cls(np.maximum(counts, 1), beta)


def check_labels(labels):
    labels = np.asarray(labels)
    if labels.size and (not np.issubdtype(labels.dtype, np.integer)
                        or labels.min() < 0 or labels.max() >= N_CLASSES):
        raise DomainException('Labels must be class indices in [0, {}), got {}'.format(
            N_CLASSES, np.unique(labels).tolist()))
    return labels


def loss_and_grad(loss, probs, labels):
    '''
    Loss and gradient with respect to `probs`.

    `probs` is a 3-vector with a scalar label, or an (N, 3) batch with N
    labels; for a batch the loss is the mean over samples.
    '''
    probs = np.asarray(probs, dtype=linalg.DTYPE)
    batched = probs.ndim == 2
    P = probs if batched else probs[None, :]
    y = np.atleast_1d(check_labels(labels))
    if P.shape[1] != N_CLASSES or y.shape != (P.shape[0],):
        raise ShapeException('Probabilities of shape {} do not match labels of shape {}'.format(
            probs.shape, np.shape(labels)))
    rows = np.arange(P.shape[0])
    p = np.maximum(P[rows, y], PROBABILITY_FLOOR)
    w = loss.weights[y]
    grad = np.zeros_like(P)
    grad[rows, y] = -w / p
    values = -w * np.log(p)
    if batched:
        n = P.shape[0]
        return float(values.sum() / n), grad / n
    return float(values[0]), grad[0]


class FreezeMask:
    '''
    Trainable flags per parameter name: a bool, or a bool array with the
    parameter's shape for elementwise masks.
    '''

    def __init__(self, masks):
        self.masks = OrderedDict(masks)

    @classmethod
    def for_model(cls, model):
        return cls(model.trainable_masks())

    def is_trainable(self, name):
        mask = self.masks.get(name, False)
        return bool(np.any(mask))

    def trainable_names(self):
        return [name for name in self.masks if self.is_trainable(name)]

    def frozen_names(self):
        return [name for name in self.masks if not self.is_trainable(name)]


class AdamState:
    '''
    Moments of the trainable parameters, keyed by name.
    '''

    def __init__(self, lr=0.01, beta1=ADAM_BETA1, beta2=ADAM_BETA2, epsilon=ADAM_EPSILON):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {}
        self.v = {}


def is_lambda(name):
    return name == 'lam' or name.endswith('.lam')


def adam_step(state, params, grads, mask):
    '''
    One bias-corrected Adam update, in place, of the entries of `params`
    that `mask` marks trainable. Blend scalars are clamped to [0, 1].
    '''
    state.step_count += 1
    t = state.step_count
    for name, g in grads.items():
        if name not in params:
            raise StateException('Gradient for unknown parameter {}'.format(name))
        p = params[name]
        if np.shape(g) != p.shape:
            raise ShapeException('Gradient of {} has shape {} but the parameter has shape {}'.format(
                name, np.shape(g), p.shape))
        trainable = mask.masks.get(name, False)
        if not np.any(trainable):
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        if trainable is True:
            p -= update
        else:
            p -= np.where(trainable, update, 0.0)
        if is_lambda(name):
            np.clip(p, 0.0, 1.0, out=p)
    return params


class PlateauScheduler:
    '''
    Multiplies the learning rate by `factor` when the validation loss has
    not improved by more than `delta` for `patience` epochs.
    '''

    def __init__(self, lr, patience=5, factor=0.5, min_lr=1e-7, delta=1e-4):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.delta = delta
        self.best_val_loss = np.inf
        self.wait = 0

    def step(self, val_loss):
        if val_loss < self.best_val_loss - self.delta:
            self.best_val_loss = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                new_lr = max(self.lr * self.factor, self.min_lr)
                if new_lr < self.lr:
                    logger.debug('Reducing learning rate from %g to %g.', self.lr, new_lr)
                self.lr = new_lr
                self.wait = 0
        return self.lr


class TrainingConfig:

    def __init__(self, batch_size=256, epochs=200, lr=0.01, patience=5, factor=0.5,
                 min_lr=1e-7, plateau_delta=1e-4, early_stop_patience=20, stop_lr=1e-6,
                 beta=DEFAULT_BETA, seed=0):
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.plateau_delta = plateau_delta
        self.early_stop_patience = early_stop_patience
        self.stop_lr = stop_lr
        self.beta = beta
        self.seed = seed

    @classmethod
    def from_dict(cls, d, seed=0):
        known = cls().__dict__
        kwargs = {key: value for key, value in d.items() if key in known}
        kwargs.setdefault('seed', seed)
        return cls(**kwargs)

    def replace(self, **kwargs):
        d = dict(self.__dict__)
        d.update(kwargs)
        return TrainingConfig(**d)


EpochRecord = namedtuple('EpochRecord', ['epoch', 'train_loss', 'val_loss', 'lr', 'val_f1'])


class TrainingReport:

    HEADER = ['epoch', 'train_loss', 'val_loss', 'lr', 'f1']

    def __init__(self):
        self.epochs = []
        self.best_epoch = None
        self.best_val_loss = None
        self.final_lr = None

    @property
    def epochs_run(self):
        return len(self.epochs)

    def rows(self):
        return [[r.epoch] + [reports.number_text(v) for v in (r.train_loss, r.val_loss, r.lr, r.val_f1)]
                for r in self.epochs]


def predict_in_batches(model, X, batch_size=1024):
    '''
    Class probabilities of shape (N, 3).
    '''
    if len(X) == 0:
        return np.zeros((0, N_CLASSES))
    out = []
    for start in range(0, len(X), batch_size):
        probs, _ = model.forward(X[start:start + batch_size], layers.INFER)
        out.append(probs[..., 0])
    return np.concatenate(out)


def evaluate(model, samples, loss=None, batch_size=1024):
    '''
    Returns (mean loss or None, confusion matrix) over a sample set.
    '''
    probs = predict_in_batches(model, samples.X, batch_size)
    cm = metrics.confusion_matrix(samples.y, probs.argmax(axis=1))
    value = None
    if loss is not None and len(samples.y):
        value, _ = loss_and_grad(loss, probs, samples.y)
    return value, cm


def _snapshot(model):
    return OrderedDict((name, a.copy()) for name, a in model.named_arrays().items())


def _restore(model, snapshot):
    for name, a in model.named_arrays().items():
        a[...] = snapshot[name]


def train(model, split, config, loss=None):
    '''
    Trains `model` in place on `split.train`, scheduling on `split.val`.

    Parameters the model marks frozen are never written. The parameters of
    the epoch with the lowest validation loss are restored at the end.
    '''
    train_set, val_set = split.train, split.val
    if len(train_set.y) == 0:
        raise DomainException('Cannot train on an empty dataset')
    check_labels(train_set.y)
    if loss is None:
        loss = WeightedEntropyLoss.from_labels(train_set.y, config.beta)
    report = TrainingReport()
    report.final_lr = config.lr
    if config.epochs == 0:
        return report
    rng = np.random.default_rng(config.seed)
    mask = FreezeMask.for_model(model)
    state = AdamState(config.lr)
    scheduler = PlateauScheduler(config.lr, config.patience, config.factor, config.min_lr,
                                 config.plateau_delta)
    params = model.named_arrays()
    n = len(train_set.y)
    best = _snapshot(model)
    best_loss = np.inf
    since_best = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            probs, caches = model.forward(train_set.X[idx], layers.TRAIN)
            value, dprobs = loss_and_grad(loss, probs[..., 0], train_set.y[idx])
            grads = model.backward(caches, dprobs[..., None])
            adam_step(state, params, grads, mask)
            total += value * len(idx)
        train_loss = total / n
        if len(val_set.y):
            val_loss, cm = evaluate(model, val_set, loss)
        else:
            val_loss, cm = evaluate(model, train_set, loss)
        val_f1 = metrics.metrics(cm).f1
        report.epochs.append(EpochRecord(epoch, train_loss, val_loss, state.lr, val_f1))
        logger.info('epoch %d train_loss %.6g val_loss %.6g lr %.3g val_f1 %.4f',
                    epoch, train_loss, val_loss, state.lr, val_f1)
        if val_loss < best_loss:
            best_loss = val_loss
            best = _snapshot(model)
            report.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
        state.lr = scheduler.step(val_loss)
        if state.lr < config.stop_lr:
            logger.debug('Stopping: learning rate %g below %g.', state.lr, config.stop_lr)
            break
        if since_best >= config.early_stop_patience:
            logger.debug('Stopping: no improvement for %d epochs.', since_best)
            break
    _restore(model, best)
    report.best_val_loss = best_loss
    report.final_lr = state.lr
    return report


GradientCheckRow = namedtuple('GradientCheckRow', ['name', 'max_rel_error', 'checked', 'skipped'])


class GradientCheckReport:
    '''
    Maximum relative error per parameter. `max_rel_error` is None for a
    frozen parameter, which has no gradient.
    '''

    HEADER = ['parameter', 'max_rel_error', 'checked', 'skipped']
    NO_GRADIENT = 'no gradient'

    def __init__(self, tolerance):
        self.tolerance = tolerance
        self.rows = []

    @property
    def max_rel_error(self):
        errors = [r.max_rel_error for r in self.rows if r.max_rel_error is not None]
        return max(errors) if errors else 0.0

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def csv_rows(self):
        return [[r.name, self.NO_GRADIENT if r.max_rel_error is None else reports.number_text(r.max_rel_error),
                 r.checked, r.skipped] for r in self.rows]


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _relu_pattern(model, X):
    _, caches = model.forward(X, layers.TRAIN)
    return [cache.Z > 0 for layer, cache in zip(model.layers, caches)
            if layer.activation == layers.RELU]


def _same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(model, X, y, loss=None, tolerance=1e-6, h=1e-5, max_entries=20, seed=0,
                   resolution=1e-8):
    '''
    Compares analytic gradients with central differences on up to
    `max_entries` randomly chosen trainable entries of each parameter.

    An entry is skipped when the perturbation moves a ReLU pre-activation
    across zero, where the loss is not differentiable, and when both the
    analytic and the numeric change of the loss lie below `resolution`
    times the loss, which central differences cannot measure.
    '''
    y = check_labels(np.atleast_1d(y))
    if loss is None:
        loss = WeightedEntropyLoss(np.ones(N_CLASSES, dtype=np.int64), beta=1.0)
    rng = np.random.default_rng(seed)

    def loss_at():
        probs, _ = model.forward(X, layers.INFER)
        value, _ = loss_and_grad(loss, probs[..., 0], y)
        return value

    probs, caches = model.forward(X, layers.TRAIN)
    _, dprobs = loss_and_grad(loss, probs[..., 0], y)
    grads = model.backward(caches, dprobs[..., None])
    pattern = _relu_pattern(model, X)
    report = GradientCheckReport(tolerance)
    masks = model.trainable_masks()
    for name, param in model.named_arrays().items():
        mask = masks[name]
        if not np.any(mask) or name not in grads:
            report.rows.append(GradientCheckRow(name, None, 0, 0))
            continue
        candidates = np.flatnonzero(np.broadcast_to(mask, param.shape))
        if len(candidates) > max_entries:
            candidates = np.sort(rng.choice(candidates, size=max_entries, replace=False))
        flat = param.reshape(-1)
        analytic = np.asarray(grads[name]).reshape(-1)
        worst, checked, skipped = 0.0, 0, 0
        for index in candidates:
            original = flat[index]
            flat[index] = original + h
            plus = loss_at()
            plus_pattern = _relu_pattern(model, X)
            flat[index] = original - h
            minus = loss_at()
            minus_pattern = _relu_pattern(model, X)
            flat[index] = original
            if not (_same_pattern(pattern, plus_pattern) and _same_pattern(pattern, minus_pattern)):
                skipped += 1
                continue
            numeric = (plus - minus) / (2 * h)
            floor = resolution * max(1.0, abs(plus), abs(minus)) / (2 * h)
            if max(abs(analytic[index]), abs(numeric)) <= floor:
                skipped += 1
                continue
            worst = max(worst, relative_error(analytic[index], numeric))
            checked += 1
        report.rows.append(GradientCheckRow(name, worst, checked, skipped))
        logger.debug('gradient check %s: max relative error %.3g (%d checked, %d skipped)',
                     name, worst, checked, skipped)
    return report
