import logging

import numpy as np
import pytest

from auxtabl import config, data, experiments, handlers, models, reports, synthetic, test_utils, training
from auxtabl.errors import ConfigException

logger = logging.getLogger(__name__)

SMALL_DIMS = [[8, 6], [3, 1]]


def tiny_settings(**kwargs):
    options = dict(topology=SMALL_DIMS, rank_min=1, rank_max=2, runs=2, seed=1,
                   training_config=training.TrainingConfig(batch_size=32, epochs=2, seed=1),
                   split_options=data.SplitOptions(train_days=3))
    options.update(kwargs)
    return experiments.ExperimentSettings(**options)


@pytest.fixture(scope='module')
def streams():
    return test_utils.small_streams(n_stocks=3, days=4, events_per_day=60)


def test_select_rank_prefers_small_ranks_on_ties():
    rows = [experiments.SweepRow(3, 0.4, 0.9, 0.1), experiments.SweepRow(2, 0.5, 0.3, 0.2),
            experiments.SweepRow(1, 0.5, None, 0.3)]
    assert experiments.select_rank(rows) == 1
    assert experiments.select_rank(rows, by='val') == 3
    assert experiments.select_rank([experiments.SweepRow(4, 0.1, None, 0.1),
                                    experiments.SweepRow(2, 0.2, None, 0.2)], by='val') == 2
    with pytest.raises(ConfigException):
        experiments.select_rank([])


def test_settings_validation():
    with pytest.raises(ConfigException):
        experiments.ExperimentSettings(architecture='rnn')
    with pytest.raises(ConfigException):
        experiments.ExperimentSettings(rank_min=3, rank_max=2)
    with pytest.raises(ConfigException):
        experiments.ExperimentSettings(rank_select='test')
    with pytest.raises(ConfigException):
        experiments.ExperimentSettings(runs=0)


def test_settings_from_default_config():
    settings = experiments.ExperimentSettings.from_config(config.load_config(environ={}))
    assert settings.runs == 5
    assert settings.ranks() == list(range(1, 21))
    assert settings.training_config.epochs == 200
    assert settings.new_stocks == (4, 5)
    assert settings.strategies == ('is1', 'is2')


def test_base_topologies():
    settings = experiments.ExperimentSettings()
    assert settings.base_topology(3) == models.lookup('base_stock3')
    assert settings.base_topology(9) == models.lookup('joint_all')
    assert settings.base_topology() == models.lookup('joint_all')
    assert settings.joint_topology() == models.lookup('joint_all')
    cnn = experiments.ExperimentSettings(architecture='cnn')
    assert cnn.base_topology(1).architecture == models.CNN_ARCH
    assert cnn.adapted_arm('is2') == 'aCNN'
    assert cnn.strategies == ('is2',)
    assert tiny_settings().base_topology(1).dims() == SMALL_DIMS


def test_setup1(streams):
    settings = tiny_settings()
    report = experiments.run_setup1(streams, settings, handlers.SerialHandler(), targets=[2])
    assert [s.name for s in report.sections] == ['Stock 2']
    section = report.sections[0]
    assert list(section.arms) == ['TABL-base', 'TABL-fine-tune', 'aTABL-IS1', 'aTABL-IS2', 'TABL']
    split = data.split_setup1(streams, 2, settings.split_options)
    for arm in section.arms.values():
        assert len(arm.results) == 2
        assert arm.confusion.total == 2 * len(split.new.test)
        mean, std = arm.stat('f1')
        assert 0 <= mean <= 1
        assert std is not None
    assert section.arms['aTABL-IS1'].rank_text() in ('1', '2')
    assert section.arms['TABL-base'].rank_text() == '-'
    tables = report.csv_tables()
    for name in ('report.csv', 'runs.csv', 'confusion_matrix.csv', 'rank_sweep.csv', 'trades.csv',
                 'cumulative_returns.csv'):
        assert name in tables
    assert len(tables['runs.csv'][1]) == 2 * 5
    assert len(tables['rank_sweep.csv'][1]) == 2 * 2
    assert all(len(row) == len(tables['report.csv'][0]) for row in tables['report.csv'][1])
    text = reports.render_report(report)
    assert 'aTABL-IS2' in text
    assert 'Stock 2' in text


def test_runs_are_reproducible(streams):
    settings = tiny_settings(runs=1, rank=1, joint=False)
    first = experiments.run_setup1(streams, settings, handlers.SerialHandler(), targets=[1])
    second = experiments.run_setup1(streams, settings, handlers.SerialHandler(), targets=[1])
    assert first.run_rows == second.run_rows
    assert 'TABL' not in first.sections[0].arms


def test_setup2(streams):
    settings = tiny_settings(runs=1, rank=1, old_stocks=(1, 2), new_stocks=(3,))
    report = experiments.run_setup2(streams, settings, handlers.SerialHandler())
    names = [s.name for s in report.sections]
    assert names == [experiments.ALL_STOCKS, 'Stock 3']
    split = data.split_setup2(streams, (1, 2), (3,), settings.split_options)
    pooled = report.sections[0]
    expected = len(split.old.test) + len(split.new[3].test)
    for arm in ('TABL-base', 'TABL-fine-tune', 'aTABL-IS1', 'aTABL-IS2'):
        assert pooled.arms[arm].confusion.total == expected
    plans = {(plan, convention): count for plan, convention, count in report.storage}
    assert len(plans) == 6
    assert plans[('base+aux', 'diagonal counted')] < plans[('base+finetuned', 'diagonal counted')]
    assert plans[('base', 'diagonal not counted')] < plans[('base', 'diagonal counted')]
    assert 'storage.csv' in report.csv_tables()


def test_online():
    streams = test_utils.small_streams(n_stocks=2, days=4, events_per_day=60)
    settings = tiny_settings(runs=1, rank=1, base_days=2, adapt_days=1)
    report = experiments.run_online(streams, settings, handlers.SerialHandler())
    assert [s.name for s in report.sections] == [experiments.ALL_STOCKS]
    assert list(report.sections[0].arms) == ['TABL-base', 'TABL-fine-tune', 'aTABL-IS1', 'aTABL-IS2']
    assert 'days [0, 1]' in report.title
    assert report.macs['TABL-base'] == report.macs['aTABL-IS2 folded']


def test_rank_sweep(streams):
    settings = tiny_settings(runs=2)
    split = data.split_setup1(streams, 1, settings.split_options)
    base = experiments.train_base(settings.base_topology(), split.old, settings, seed=0)
    report, chosen = experiments.rank_sweep(base, split.new, settings, handlers.SerialHandler())
    assert set(chosen) == {'is1', 'is2'}
    assert all(rank in (1, 2) for rank in chosen.values())
    assert len(report.sweep_rows) == 2 * 2 * 2
    summary = report.sweep_summary()
    assert [(row[1], row[2]) for row in summary] == [('aTABL-IS1', 1), ('aTABL-IS1', 2),
                                                     ('aTABL-IS2', 1), ('aTABL-IS2', 2)]
    assert base.provenance['normalization'] == split.old.stats.to_dict()


def test_ablation(streams):
    settings = tiny_settings(runs=1)
    report = experiments.run_ablation(streams, settings, handlers.SerialHandler(), target=3)
    assert len(report.ablation) == len(models.ablation_candidates())
    values = [row[2] for row in report.ablation]
    assert values == sorted(values, reverse=True)
    assert 'ablation.csv' in report.csv_tables()


def test_backtest_trades_in_temporal_order():
    rng = np.random.default_rng(0)
    samples = test_utils.random_samples(rng, n=12)
    shuffled = samples.subset(rng.permutation(12))
    model = test_utils.small_model()
    log_a, curve_a = experiments.backtest(model, samples)
    log_b, curve_b = experiments.backtest(model, shuffled)
    assert log_a.rows() == log_b.rows()
    assert np.array_equal(curve_a, curve_b)


def coupled_streams(couplings, days, events_per_day=400, seed=0):
    '''
    One synthetic stock per coupling; a negative coupling makes the order
    imbalance push the price the other way.
    '''
    regimes = [synthetic.StockRegime(price=20.0, volatility=0.0012, coupling=c) for c in couplings]
    cfg = synthetic.SyntheticLobConfig(n_stocks=len(couplings), days=days,
                                       events_per_day=events_per_day, seed=seed, regimes=regimes)
    return synthetic.generate_synthetic(cfg)


def learning_settings(**kwargs):
    return tiny_settings(rank=2, joint=False, training_config=training.TrainingConfig(
        batch_size=64, epochs=20, lr=0.01, seed=0), **kwargs)


def test_adaptation_recovers_a_reversed_stock():
    streams = coupled_streams([3.0, -3.0], days=4)
    settings = learning_settings(runs=2)
    report = experiments.run_setup1(streams, settings, handlers.SerialHandler())
    gains = []
    for section in report.sections:
        base, _ = section.arms['TABL-base'].stat('f1')
        for arm in ('aTABL-IS1', 'aTABL-IS2'):
            adapted, _ = section.arms[arm].stat('f1')
            logger.info('%s %s: base F1 %.3f adapted F1 %.3f', section.name, arm, base, adapted)
            assert adapted >= base - 0.005
            gains.append(adapted - base)
    assert np.mean(gains) >= 0.02


def test_adaptation_follows_a_shift_between_days():
    before = coupled_streams([3.0, 3.0], days=2, seed=1)
    after = coupled_streams([-3.0, -3.0], days=2, seed=2)
    streams = before + [data.EventStream(s.stock, s.day + 2, s.features, s.best_ask, s.best_bid)
                        for s in after]
    settings = learning_settings(runs=3, base_days=2, adapt_days=1)
    report = experiments.run_online(streams, settings, handlers.SerialHandler())
    arms = report.sections[0].arms
    base, _ = arms['TABL-base'].stat('f1')
    for arm in ('aTABL-IS1', 'aTABL-IS2'):
        adapted, _ = arms[arm].stat('f1')
        assert len(arms[arm].results) == 3
        assert adapted >= base, (arm, adapted, base)


@pytest.mark.parametrize('name', ['joint_all', 'base_stock1', 'base_stock2', 'base_stock3',
                                  'base_stock4', 'base_stock5'])
def test_base_plus_aux_is_smaller_than_two_models(name):
    base = models.build(name, seed=0)
    full = models.count_params(base).base
    for rank in range(1, 21):
        aux = models.count_params(models.augment(base, rank)).aux
        assert full + aux < 2 * full, (name, rank)
