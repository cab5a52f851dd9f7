import logging

import numpy as np
import pytest

from auxtabl import adapters, conv, layers, linalg, models, test_utils
from auxtabl.errors import ConfigException, ShapeException

logger = logging.getLogger(__name__)


def test_registry_holds_the_named_topologies():
    names = list(models.registry())
    assert names[:6] == ['joint_all', 'base_stock1', 'base_stock2', 'base_stock3', 'base_stock4',
                         'base_stock5']
    assert models.lookup('base_stock3').dims() == [[60, 5], [120, 10], [50, 5], [3, 1]]
    assert models.lookup('cnn').architecture == models.CNN_ARCH
    with pytest.raises(ConfigException) as info:
        models.lookup('base_stock9')
    assert 'joint_all' in str(info.value)


def test_topology_validation():
    with pytest.raises(ShapeException):
        models.Topology.from_dims([[10, 5], [4, 1]])
    with pytest.raises(ConfigException):
        models.Topology([('LSTM', (3, 1))])
    with pytest.raises(ConfigException):
        models.Topology([(models.DENSE, (3, 1))])
    with pytest.raises(ConfigException):
        models.Topology.from_dims([])
    topology = models.lookup('joint_all')
    assert models.Topology.from_dict(topology.to_dict()) == topology


def test_resolve_topology():
    assert models.resolve_topology('joint_all') == models.lookup('joint_all')
    assert models.resolve_topology([[8, 6], [3, 1]]) == test_utils.SMALL_TOPOLOGY
    assert models.resolve_topology('cnn', cnn=conv.DEFAULT_CNN).architecture == models.CNN_ARCH


def test_build_is_deterministic():
    a = models.build('joint_all', seed=4)
    b = models.build('joint_all', seed=4)
    c = models.build('joint_all', seed=5)
    assert a.base_hash() == b.base_hash()
    assert a.base_hash() != c.base_hash()
    assert [layer.kind for layer in a.layers] == [models.BL, models.BL, models.TABL]
    assert a.layers[-1].activation == layers.SOFTMAX_COLUMNS
    assert a.layers[0].activation == layers.RELU


def test_predictions_are_distributions():
    rng = np.random.default_rng(0)
    model = test_utils.small_model()
    probs = model.predict_proba(rng.standard_normal((5, 40, 10)))
    assert probs.shape == (5, 3)
    assert np.allclose(probs.sum(axis=1), 1)


def test_param_ledger():
    ledger = models.count_params(models.build('joint_all'))
    assert [row.base for row in ledger.rows] == [3100, 7850, 394]
    assert ledger.base == 11344
    assert ledger.aux == 0
    assert models.count_params(models.build('joint_all'), count_fixed_diagonal=False).base == 11339
    assert ledger.csv_rows()[-1] == ['total', '', 11344, 0, 11344]


def test_augment_clamps_rank_and_records_provenance():
    base = models.build('joint_all', seed=1)
    adapted = models.augment(base, rank=3, strategy=adapters.IS1, seed=2)
    assert adapted.provenance['layer_ranks'] == [3, 3, 1]
    assert adapted.provenance['base_hash'] == base.base_hash()
    assert adapted.provenance['kind'] == 'augmented'
    assert [layer.kind for layer in adapted.layers] == ['aBL', 'aBL', 'aTABL']
    assert adapted.base_hash() == base.base_hash()
    aux = models.count_params(adapted).aux
    expected = (60 * 3 + 3 * 40 + 10 * 3 + 3 * 10) + (120 * 3 + 3 * 60 + 10 * 3 + 3 * 5) \
        + (3 * 1 + 1 * 120 + 5 * 1 + 1 * 1 + 5 * 1 + 1 * 5)
    assert aux == expected


def test_augment_errors():
    base = test_utils.small_model()
    with pytest.raises(ConfigException):
        models.augment(base, rank=0)
    with pytest.raises(ConfigException):
        models.augment(base, rank=1, strategy='is3')
    with pytest.raises(ConfigException):
        models.augment(models.augment(base, rank=1), rank=1)
    with pytest.raises(ConfigException):
        models.fold_model(base)


def test_fresh_augmentation_keeps_predictions():
    rng = np.random.default_rng(1)
    base = test_utils.small_model(seed=3)
    X = rng.standard_normal((4, 40, 10))
    for strategy in adapters.STRATEGIES:
        adapted = models.augment(base, rank=2, strategy=strategy, seed=0)
        assert np.allclose(adapted.predict_proba(X), base.predict_proba(X), atol=1e-12)


def test_fold_matches_adapted_model():
    rng = np.random.default_rng(2)
    base = test_utils.small_model(seed=3)
    adapted = test_utils.randomize_aux(models.augment(base, rank=2, seed=0), rng)
    X = rng.standard_normal((6, 40, 10))
    folded = models.fold_model(adapted)
    assert not folded.is_augmented
    assert folded.provenance['kind'] == 'folded'
    assert np.allclose(folded.predict_proba(X), adapted.predict_proba(X), atol=1e-10)
    assert models.count_params(folded).total == models.count_params(base).total
    assert models.count_macs(folded).total == models.count_macs(base).total
    assert base.base_hash() == adapted.base_hash()


def test_set_strategy_keeps_outputs():
    rng = np.random.default_rng(3)
    adapted = test_utils.randomize_aux(models.augment(test_utils.small_model(), rank=2), rng)
    X = rng.standard_normal((3, 40, 10))
    before = adapted.predict_proba(X)
    models.set_strategy(adapted, adapters.IS1)
    assert all(layer.strategy == adapters.IS1 for layer in adapted.layers)
    assert adapted.provenance['strategy'] == adapters.IS1
    assert np.allclose(adapted.predict_proba(X), before, atol=1e-12)


@pytest.mark.parametrize('strategy', [None, 'is1', 'is2'])
def test_mac_ledger_matches_instrumentation(strategy):
    rng = np.random.default_rng(4)
    model = test_utils.small_model()
    if strategy is not None:
        model = models.augment(model, rank=2, strategy=strategy)
    counter = linalg.OpCounter()
    model.forward(rng.standard_normal((3, 40, 10)), layers.INFER, counter)
    ledger = models.count_macs(model, N=3)
    assert dict(counter.by_tag) == dict(ledger.by_tag())
    assert counter.mac_count == ledger.total


def test_storage_plan():
    base = test_utils.small_model()
    adapted = [models.augment(base, rank=1, seed=s) for s in range(2)]
    finetuned = [base.copy(), base.copy()]
    plan = models.storage_plan(base, adapted, finetuned)
    n = models.count_params(base).base
    aux = models.count_params(adapted[0]).aux
    assert plan == {'base': n, 'base+finetuned': 3 * n, 'base+aux': n + 2 * aux}


def test_copy_is_independent():
    model = test_utils.small_model()
    clone = model.copy()
    clone.layers[0].W1[0, 0] += 1.0
    assert clone.base_hash() != model.base_hash()


def test_qualified_names():
    assert models.qualified(2, 'W1') == 'layer2.W1'
    assert models.split_name('layer12.lam') == (12, 'lam')
    names = list(test_utils.small_model().named_arrays())
    assert names == ['layer0.W1', 'layer0.W2', 'layer0.B', 'layer1.W1', 'layer1.W', 'layer1.W2',
                     'layer1.B', 'layer1.lam']
