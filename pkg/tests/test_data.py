import logging

import numpy as np
import pytest

from auxtabl import data, test_utils
from auxtabl.errors import ConfigException, DomainException, ParseException, ShapeException

logger = logging.getLogger(__name__)


def test_labels_follow_mean_of_future_mids():
    labels = data.label_events([1.0, 1.0, 1.01, 1.01, 0.98], horizon=2, theta=0.002)
    assert labels.tolist() == [data.UP, data.UP, data.DOWN, data.UNLABELED, data.UNLABELED]


def test_flat_prices_are_stationary():
    labels = data.label_events([5.0, 5.0, 5.0], horizon=1)
    assert labels.tolist() == [data.STATIONARY, data.STATIONARY, data.UNLABELED]


def test_short_stream_has_no_labels():
    assert np.all(data.label_events([1.0, 2.0], horizon=5) == data.UNLABELED)


def test_window_count_and_layout():
    mids = 10 + 0.05 * np.arange(30)
    stream = test_utils.make_stream(mids)
    samples = data.make_windows(stream, window=10, horizon=5)
    assert len(samples) == 30 - 10 - 5 + 1
    assert samples.X.shape == (16, data.N_FEATURES, 10)
    assert np.array_equal(samples.X[0], stream.features[0:10].T)
    assert np.array_equal(samples.index, np.arange(9, 25))
    assert np.array_equal(samples.ask, stream.best_ask[9:25])
    assert np.all(samples.y == data.UP)


def test_stream_too_short_for_a_window():
    stream = test_utils.make_stream(np.full(12, 3.0))
    samples = data.make_windows(stream, window=10, horizon=5)
    assert len(samples) == 0
    assert samples.X.shape == (0, data.N_FEATURES, 10)


def test_supplied_labels_are_used_verbatim():
    stream = test_utils.make_stream(np.full(15, 3.0))
    supplied = np.full(15, data.DOWN)
    supplied[-2:] = data.UNLABELED
    stream.labels = {10: supplied}
    samples = data.make_windows(stream, window=10, horizon=10)
    assert len(samples) == 4
    assert np.all(samples.y == data.DOWN)


def test_stream_shapes_are_checked():
    with pytest.raises(ShapeException):
        data.EventStream(1, 0, np.zeros((3, data.N_FEATURES)), np.ones(3), np.ones(2))


def test_zscore_uses_training_statistics():
    rng = np.random.default_rng(0)
    features = rng.normal(5, 3, size=(50, data.N_FEATURES))
    features[:, 7] = 2.0
    stream = data.EventStream(1, 0, features, np.full(50, 10.0), np.full(50, 9.0))
    stats = data.zscore_fit([stream])
    normalized = data.zscore_apply(stats, [stream])[0].features
    assert np.allclose(np.delete(normalized, 7, axis=1).mean(axis=0), 0)
    assert np.allclose(np.delete(normalized, 7, axis=1).std(axis=0), 1)
    assert stats.std[7] == data.STD_FLOOR
    assert np.all(normalized[:, 7] == 0)
    restored = data.ZScoreStats.from_dict(stats.to_dict())
    assert np.array_equal(restored.mean, stats.mean)


def test_zscore_needs_events():
    with pytest.raises(DomainException):
        data.zscore_fit([])


def test_native_csv_round_trip(tmp_path):
    streams = test_utils.small_streams(n_stocks=2, days=2, events_per_day=25)
    path = tmp_path / 'stock_all.csv'
    data.write_native(path, streams)
    loaded = data.read_native(path)
    assert [(s.stock, s.day) for s in loaded] == [(s.stock, s.day) for s in streams]
    for a, b in zip(loaded, streams):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.best_ask, b.best_ask)
        assert np.array_equal(a.mid, b.mid)


def native_text(rows):
    lines = [','.join(data.NATIVE_COLUMNS)]
    for stock, day, ask, bid in rows:
        values = [str(stock), str(day)] + ['1.0'] * data.N_FEATURES + [str(ask), str(bid),
                                                                        str((ask + bid) / 2)]
        lines.append(','.join(values))
    return '\n'.join(lines) + '\n'


def test_non_numeric_value_names_its_line(tmp_path):
    text = native_text([(1, 0, 10.0, 9.0), (1, 0, 10.0, 9.0), (1, 0, 10.0, 9.0)])
    lines = text.splitlines()
    lines[2] = lines[2].replace('1.0', 'abc', 1)
    path = tmp_path / 'bad.csv'
    path.write_text('\n'.join(lines) + '\n')
    with pytest.raises(ParseException) as info:
        data.read_native(path)
    assert info.value.line_number == 3


def test_ask_below_bid_is_rejected(tmp_path):
    path = tmp_path / 'crossed.csv'
    path.write_text(native_text([(1, 0, 10.0, 9.0), (1, 0, 10.0, 9.0), (1, 0, 8.0, 9.0)]))
    with pytest.raises(ParseException) as info:
        data.read_native(path)
    assert info.value.line_number == 4


def test_missing_columns_and_split_streams(tmp_path):
    path = tmp_path / 'short.csv'
    path.write_text('stock_id,day\n1,0\n')
    with pytest.raises(ParseException):
        data.read_native(path)
    path.write_text(native_text([(1, 0, 10.0, 9.0), (2, 0, 10.0, 9.0), (1, 0, 10.0, 9.0)]))
    with pytest.raises(ParseException):
        data.read_native(path)


def fi2010_file(tmp_path, n=5):
    rng = np.random.default_rng(1)
    matrix = np.vstack([rng.uniform(1, 2, size=(data.N_FEATURES, n)),
                        np.array([[1, 2, 3, 1, 2][:n]]),
                        np.array([[3, 3, 1, 2, 2][:n]])])
    path = tmp_path / 'fi2010.txt'
    np.savetxt(path, matrix)
    return path, matrix


def test_fi2010_columns_layout(tmp_path):
    path, matrix = fi2010_file(tmp_path)
    layout = {'feature_start': 0, 'label_indices': {'10': 40, '20': 41}, 'stock_lengths': [3, 2]}
    streams = data.load_fi2010(path, layout)
    assert [(s.stock, len(s)) for s in streams] == [(1, 3), (2, 2)]
    assert np.allclose(streams[0].features, matrix[:data.N_FEATURES, :3].T)
    assert streams[0].labels[10].tolist() == [data.UP, data.STATIONARY, data.DOWN]
    assert streams[1].labels[20].tolist() == [data.STATIONARY, data.STATIONARY]
    assert np.allclose(streams[0].best_ask, matrix[0, :3])
    assert np.allclose(streams[0].best_bid, matrix[2, :3])


def test_fi2010_layout_errors(tmp_path):
    path, _ = fi2010_file(tmp_path)
    with pytest.raises(ConfigException):
        data.load_fi2010(path, {'feature_start': 0})
    with pytest.raises(ConfigException):
        data.load_fi2010(path, {'feature_start': 0, 'label_indices': {'10': 40},
                                'stock_lengths': [4, 2]})
    with pytest.raises(ConfigException):
        data.load_fi2010(path, {'feature_start': 0, 'label_indices': {'10': 60}})
    with pytest.raises(ParseException):
        data.load_fi2010(path, {'feature_start': 0, 'label_indices': {'10': 40},
                                'label_values': {'up': 7, 'stationary': 8, 'down': 9}})


def test_validation_takes_the_latest_samples_per_stock():
    rng = np.random.default_rng(2)
    many = test_utils.random_samples(rng, n=25, stock=1)
    single = test_utils.random_samples(rng, n=1, stock=2)
    train, val = data.validation_split(data.SampleSet.concat([many, single]))
    assert len(val) == 3
    assert np.all(val.stock == 1)
    assert val.index.tolist() == [22, 23, 24]
    assert len(train) == 23
    assert 2 in train.stock.tolist()


def test_default_train_days():
    assert data.default_train_days(10) == 7
    assert data.default_train_days(2) == 1
    assert data.default_train_days(4) == 3
    with pytest.raises(DomainException):
        data.default_train_days(1)


def test_setup1_split():
    streams = test_utils.small_streams(n_stocks=3, days=4, events_per_day=60)
    split = data.split_setup1(streams, target=2)
    per_stream = 60 - 10 - 10 + 1
    assert set(np.unique(split.old.train.stock)) == {1, 3}
    assert set(np.unique(split.new.test.stock)) == {2}
    assert len(split.new.test) == per_stream
    assert len(split.old.train) + len(split.old.val) == 2 * 3 * per_stream
    assert split.new.stats is split.old.stats
    assert set(np.unique(split.joint.test.stock)) == {1, 2, 3}
    assert np.all(split.old.test.day == 3)


def test_setup1_rejects_bad_targets():
    streams = test_utils.small_streams(n_stocks=2, days=3, events_per_day=40)
    with pytest.raises(ConfigException):
        data.split_setup1(streams, target=9)
    with pytest.raises(DomainException):
        data.split_setup1(data.select(streams, [1]), target=1)


def test_setup2_split():
    streams = test_utils.small_streams(n_stocks=5, days=3, events_per_day=40)
    split = data.split_setup2(streams, options=data.SplitOptions(train_days=2))
    assert set(np.unique(split.old.train.stock)) == {1, 2, 3}
    assert list(split.new) == [4, 5]
    assert all(s.stats is split.old.stats for s in split.new.values())
    with pytest.raises(ConfigException):
        data.split_setup2(streams, old_stocks=(1, 2), new_stocks=(2, 3))
    with pytest.raises(ConfigException):
        data.split_setup2(streams, old_stocks=(1,), new_stocks=(6,))


def test_online_split():
    streams = test_utils.small_streams(n_stocks=2, days=4, events_per_day=40)
    split = data.split_online(streams, base_days=2, adapt_days=1)
    assert split.day_groups == ([0, 1], [2], [3])
    assert set(np.unique(split.base.train.day)) <= {0, 1}
    assert set(np.unique(split.adapt.train.day)) <= {2}
    assert np.all(split.adapt.test.day == 3)
    with pytest.raises(DomainException):
        data.split_online(streams, base_days=3, adapt_days=1)


def test_class_distribution_totals():
    streams = test_utils.small_streams(n_stocks=2, days=4, events_per_day=50)
    rows = data.class_distribution(streams)
    assert [r.name for r in rows] == ['Stock 1', 'Stock 2', 'All']
    assert sum(rows[0].train) == 3 * (50 - 10 - 10 + 1)
    assert rows[-1].train == [a + b for a, b in zip(rows[0].train, rows[1].train)]
    assert rows[-1].test == [a + b for a, b in zip(rows[0].test, rows[1].test)]
