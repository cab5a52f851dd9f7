import logging

import numpy as np
import pytest

from auxtabl import data, layers, metrics, models, test_utils, training
from auxtabl.errors import DomainException, ShapeException, StateException

logger = logging.getLogger(__name__)


def test_weighted_entropy_value_and_gradient():
    loss = training.WeightedEntropyLoss([2, 4, 8], beta=8.0)
    probs = np.array([[0.5, 0.25, 0.25], [0.1, 0.8, 0.1]])
    value, grad = training.loss_and_grad(loss, probs, np.array([0, 1]))
    expected = (-(8 / 2) * np.log(0.5) - (8 / 4) * np.log(0.8)) / 2
    assert value == pytest.approx(expected)
    assert grad[0, 0] == pytest.approx(-(8 / 2) / 0.5 / 2)
    assert grad[1, 1] == pytest.approx(-(8 / 4) / 0.8 / 2)
    assert grad[0, 1] == 0.0


def test_single_sample_loss():
    loss = training.WeightedEntropyLoss([1, 1, 1], beta=1.0)
    value, grad = training.loss_and_grad(loss, np.array([0.2, 0.3, 0.5]), 2)
    assert value == pytest.approx(-np.log(0.5))
    assert grad.shape == (3,)


def test_loss_floors_zero_probabilities():
    loss = training.WeightedEntropyLoss([1, 1, 1], beta=1.0)
    value, _ = training.loss_and_grad(loss, np.array([[1.0, 0.0, 0.0]]), np.array([1]))
    assert np.isfinite(value)
    assert value == pytest.approx(-np.log(training.PROBABILITY_FLOOR))


def test_bad_counts_labels_and_shapes():
    with pytest.raises(DomainException):
        training.WeightedEntropyLoss([1, 0, 1])
    loss = training.WeightedEntropyLoss([1, 1, 1])
    with pytest.raises(DomainException):
        training.loss_and_grad(loss, np.ones((1, 3)) / 3, np.array([3]))
    with pytest.raises(ShapeException):
        training.loss_and_grad(loss, np.ones((2, 3)) / 3, np.array([0]))


def test_absent_class_is_counted_once():
    loss = training.WeightedEntropyLoss.from_labels(np.array([0, 0, 1]), beta=1.0)
    assert loss.class_counts.tolist() == [2, 1, 1]


def test_adam_first_step_moves_by_learning_rate():
    state = training.AdamState(lr=0.1)
    params = {'w': np.array([1.0, -1.0]), 'lam': np.array(0.95)}
    grads = {'w': np.array([2.0, -3.0]), 'lam': np.array(-5.0)}
    mask = training.FreezeMask({'w': True, 'lam': True})
    training.adam_step(state, params, grads, mask)
    assert np.allclose(params['w'], [0.9, -0.9], atol=1e-6)
    assert float(params['lam']) == 1.0


def test_adam_respects_masks():
    state = training.AdamState(lr=0.1)
    params = {'frozen': np.ones(2), 'partial': np.ones((2, 2))}
    grads = {'frozen': np.ones(2), 'partial': np.ones((2, 2))}
    mask = training.FreezeMask({'frozen': False, 'partial': ~np.eye(2, dtype=bool)})
    training.adam_step(state, params, grads, mask)
    assert np.all(params['frozen'] == 1.0)
    assert np.all(np.diag(params['partial']) == 1.0)
    assert params['partial'][0, 1] < 1.0


def test_adam_rejects_unknown_or_misshaped_gradients():
    mask = training.FreezeMask({'w': True})
    with pytest.raises(StateException):
        training.adam_step(training.AdamState(), {'w': np.ones(2)}, {'v': np.ones(2)}, mask)
    with pytest.raises(ShapeException):
        training.adam_step(training.AdamState(), {'w': np.ones(2)}, {'w': np.ones(3)}, mask)


def test_plateau_scheduler():
    scheduler = training.PlateauScheduler(0.01, patience=2, factor=0.5, min_lr=0.004, delta=1e-4)
    assert scheduler.step(1.0) == 0.01
    assert scheduler.step(1.0) == 0.01
    assert scheduler.step(1.0) == 0.005
    assert scheduler.step(0.5) == 0.005
    scheduler.step(0.5)
    assert scheduler.step(0.5) == 0.004
    scheduler.step(0.5)
    assert scheduler.step(0.5) == 0.004


def test_training_never_writes_frozen_parameters():
    rng = np.random.default_rng(0)
    base = test_utils.small_model(seed=0)
    adapted = models.augment(base, 2, seed=1)
    before = adapted.base_hash()
    diagonal = np.diag(adapted.layers[-1].base.W).copy()
    config = training.TrainingConfig(batch_size=8, epochs=3, lr=0.01, seed=0)
    report = training.train(adapted, test_utils.random_split(rng), config)
    assert report.epochs_run == 3
    assert adapted.base_hash() == before
    assert np.array_equal(np.diag(adapted.layers[-1].base.W), diagonal)
    assert any(np.any(a != 0) for name, a in adapted.aux_arrays().items() if '.R' in name)


def test_training_keeps_the_attention_diagonal_of_plain_models():
    rng = np.random.default_rng(1)
    model = test_utils.small_model(seed=2)
    diagonal = np.diag(model.layers[-1].W).copy()
    training.train(model, test_utils.random_split(rng), training.TrainingConfig(batch_size=8, epochs=2))
    assert np.array_equal(np.diag(model.layers[-1].W), diagonal)


def test_training_is_reproducible():
    results = []
    for _ in range(2):
        rng = np.random.default_rng(2)
        model = test_utils.small_model(seed=3)
        report = training.train(model, test_utils.random_split(rng),
                                training.TrainingConfig(batch_size=8, epochs=2, seed=5))
        results.append((model.base_hash(), report.rows()))
    assert results[0] == results[1]


def test_training_report_rows_and_best_epoch():
    rng = np.random.default_rng(3)
    model = test_utils.small_model()
    report = training.train(model, test_utils.random_split(rng), training.TrainingConfig(batch_size=8, epochs=3))
    assert len(report.rows()) == 3
    assert all(len(row) == len(training.TrainingReport.HEADER) for row in report.rows())
    losses = [r.val_loss for r in report.epochs]
    assert report.best_val_loss == pytest.approx(min(losses))
    assert report.best_epoch == int(np.argmin(losses))


def test_zero_epochs_and_empty_data():
    rng = np.random.default_rng(4)
    model = test_utils.small_model()
    before = model.base_hash()
    report = training.train(model, test_utils.random_split(rng), training.TrainingConfig(epochs=0))
    assert report.epochs_run == 0
    assert model.base_hash() == before
    empty = data.DatasetSplit(data.SampleSet.empty(), data.SampleSet.empty(), data.SampleSet.empty(), None)
    with pytest.raises(DomainException):
        training.train(model, empty, training.TrainingConfig(epochs=1))


def test_evaluate_returns_loss_and_confusion():
    rng = np.random.default_rng(5)
    model = test_utils.small_model()
    samples = test_utils.random_samples(rng, n=12)
    loss = training.WeightedEntropyLoss.from_labels(samples.y, beta=1.0)
    value, cm = training.evaluate(model, samples, loss)
    assert isinstance(cm, metrics.ConfusionMatrix)
    assert cm.total == 12
    assert value > 0
    probs = training.predict_in_batches(model, samples.X, batch_size=5)
    assert np.allclose(probs, model.predict_proba(samples.X))


@pytest.mark.parametrize('seed', range(5))
@pytest.mark.parametrize('strategy', ['is1', 'is2'])
def test_gradient_check_passes_for_augmented_models(strategy, seed):
    rng = np.random.default_rng(6 + 100 * seed)
    model = models.augment(test_utils.small_model(), 2, strategy, seed=1, train_lambda=True)
    test_utils.randomize_aux(model, rng)
    X = rng.standard_normal((3, 40, 10))
    report = training.gradient_check(model, X, np.array([0, 1, 2]), seed=seed)
    assert report.passed, report.csv_rows()
    frozen = [row for row in report.rows if row.max_rel_error is None]
    assert {row.name for row in frozen} == {'layer0.W1', 'layer0.W2', 'layer0.B', 'layer1.W1',
                                             'layer1.W', 'layer1.W2', 'layer1.B'}


@pytest.mark.parametrize('seed', range(5))
def test_gradient_check_passes_for_plain_models(seed):
    rng = np.random.default_rng(7 + 100 * seed)
    model = test_utils.small_model(seed=seed)
    report = training.gradient_check(model, rng.standard_normal((2, 40, 10)), np.array([1, 2]))
    assert report.passed, report.csv_rows()
    assert all(row.checked + row.skipped > 0 for row in report.rows)


def test_freeze_mask_names():
    model = models.augment(test_utils.small_model(), 1)
    mask = training.FreezeMask.for_model(model)
    assert 'layer0.W1' in mask.frozen_names()
    assert 'layer0.L1' in mask.trainable_names()
    assert 'layer1.lam' in mask.frozen_names()


def recording_steps(monkeypatch, record):
    '''
    Calls `record(params)` after every optimizer step `train` takes.
    '''
    adam_step = training.adam_step

    def step(state, params, grads, mask):
        adam_step(state, params, grads, mask)
        record(params)

    monkeypatch.setattr(training, 'adam_step', step)


def test_frozen_weights_survive_a_hundred_steps(monkeypatch):
    rng = np.random.default_rng(10)
    adapted = models.augment(test_utils.small_model(seed=4), 2, seed=5)
    before = adapted.base_hash()
    unchanged = []
    recording_steps(monkeypatch, lambda params: unchanged.append(adapted.base_hash() == before))
    config = training.TrainingConfig(batch_size=3, epochs=10, lr=0.01, seed=0,
                                     early_stop_patience=100, stop_lr=0.0)
    training.train(adapted, test_utils.random_split(rng), config)
    assert len(unchanged) == 100
    assert all(unchanged)


def test_blend_scalar_stays_in_the_unit_interval_at_every_step(monkeypatch):
    rng = np.random.default_rng(11)
    adapted = models.augment(test_utils.small_model(seed=6), 2, seed=7, train_lambda=True)
    adapted.named_arrays()['layer1.lam'][...] = 0.999
    seen = []
    recording_steps(monkeypatch, lambda params: seen.append(float(params['layer1.lam'])))
    config = training.TrainingConfig(batch_size=3, epochs=5, lr=0.05, seed=1)
    training.train(adapted, test_utils.random_split(rng), config)
    assert len(seen) == 50
    assert all(0.0 <= v <= 1.0 for v in seen)
    assert any(v != 0.999 for v in seen)
