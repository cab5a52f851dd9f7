'''
Limit order book data: event streams, ingestion, normalization, labeling,
windowing and the dataset splits of the experiments.

An event carries 40 features, the top ten levels of the book as
(ask price, ask volume, bid price, bid volume) per level, plus the raw best
ask and bid used by the trading simulation. Streams hold the events of one
stock on one day in temporal order; windows never cross a stream.
'''

import logging
import math
import re
from collections import namedtuple, OrderedDict

import numpy as np
import pandas as pd

from auxtabl import reports
from auxtabl.errors import ConfigException, DomainException, ParseException, ShapeException

logger = logging.getLogger(__name__)

N_LEVELS = 10
N_FEATURES = 4 * N_LEVELS
DEFAULT_WINDOW = 10
DEFAULT_HORIZON = 10
HORIZONS = (10, 20, 30, 50, 100)
DEFAULT_THETA = 0.002
STD_FLOOR = 1e-12
VALIDATION_FRACTION = 0.1
UNLABELED = -1

STATIONARY = 0
UP = 1
DOWN = 2

FEATURE_COLUMNS = ['{}_{}'.format(kind, level + 1)
                   for level in range(N_LEVELS)
                   for kind in ('ask_price', 'ask_volume', 'bid_price', 'bid_volume')]
NATIVE_COLUMNS = ['stock_id', 'day'] + FEATURE_COLUMNS + ['raw_best_ask', 'raw_best_bid', 'mid']

LobEvent = namedtuple('LobEvent', ['timestamp', 'features', 'mid_price', 'best_ask', 'best_bid'])


class EventStream:
    '''
    The events of one stock on one day.

    `labels` optionally maps a horizon to per-event class labels supplied with
    the data (UNLABELED where absent); otherwise labels are computed.
    '''

    def __init__(self, stock, day, features, best_ask, best_bid, mid=None, labels=None):
        self.stock = int(stock)
        self.day = int(day)
        self.features = np.asarray(features, dtype=np.float64)
        self.best_ask = np.asarray(best_ask, dtype=np.float64)
        self.best_bid = np.asarray(best_bid, dtype=np.float64)
        self.mid = (self.best_ask + self.best_bid) / 2 if mid is None else np.asarray(mid, dtype=np.float64)
        self.labels = {} if labels is None else {int(h): np.asarray(l, dtype=np.int64)
                                                 for h, l in labels.items()}
        n = len(self.best_ask)
        if self.features.shape != (n, N_FEATURES) or self.best_bid.shape != (n,) \
                or self.mid.shape != (n,):
            raise ShapeException('Stream {}/{}: features {}, asks {}, bids {}, mids {} disagree'.format(
                stock, day, self.features.shape, self.best_ask.shape, self.best_bid.shape,
                self.mid.shape))

    def __len__(self):
        return len(self.best_ask)

    def events(self):
        for i in range(len(self)):
            yield LobEvent(i, self.features[i], self.mid[i], self.best_ask[i], self.best_bid[i])

    def with_features(self, features):
        return EventStream(self.stock, self.day, features, self.best_ask, self.best_bid,
                           self.mid, self.labels)

    def __repr__(self):
        return 'EventStream(stock={}, day={}, events={})'.format(self.stock, self.day, len(self))


def stocks(streams):
    return sorted({s.stock for s in streams})


def days(streams):
    return sorted({s.day for s in streams})


def select(streams, stock_ids=None, day_ids=None):
    return [s for s in streams
            if (stock_ids is None or s.stock in stock_ids) and (day_ids is None or s.day in day_ids)]


def _check_prices(best_ask, best_bid, first_line):
    bad = np.flatnonzero(~(best_ask >= best_bid))
    if len(bad):
        raise ParseException('best ask {} is below best bid {}'.format(
            best_ask[bad[0]], best_bid[bad[0]]), first_line + int(bad[0]))


def _streams_from_frame(frame, first_line):
    '''
    Splits rows into streams by (stock_id, day), keeping row order.
    '''
    result = []
    keys = frame[['stock_id', 'day']].to_numpy()
    if len(keys) == 0:
        return result
    boundaries = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(keys)]])
    seen = set()
    for start, end in zip(starts, ends):
        stock, day = (int(v) for v in keys[start])
        if (stock, day) in seen:
            raise ParseException('rows of stock {} day {} are not contiguous'.format(stock, day),
                                 first_line + int(start))
        seen.add((stock, day))
        part = frame.iloc[start:end]
        best_ask = part['raw_best_ask'].to_numpy()
        best_bid = part['raw_best_bid'].to_numpy()
        _check_prices(best_ask, best_bid, first_line + int(start))
        result.append(EventStream(stock, day, part[FEATURE_COLUMNS].to_numpy(),
                                  best_ask, best_bid, part['mid'].to_numpy()))
    return result


def _line_number(error):
    match = re.search(r'line (\d+)', str(error))
    return int(match.group(1)) if match else None


def _numeric(frame, first_line):
    '''
    Checks that every value is a finite number, naming the first bad line.
    '''
    for column in frame.columns:
        values = frame[column]
        if values.dtype == object:
            values = pd.to_numeric(values, errors='coerce')
        as_float = values.to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(as_float))
        if len(bad):
            raise ParseException('column {} has the non-numeric value "{}"'.format(
                column, frame[column].iloc[bad[0]]), first_line + int(bad[0]))
        frame[column] = values
    return frame


def read_native(path):
    '''
    Reads the native CSV format: a header row, then one event per row with
    stock_id, day, the 40 features, raw_best_ask, raw_best_bid and mid.
    Rows of one (stock, day) are contiguous and in temporal order.
    '''
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except pd.errors.EmptyDataError:
        return []
    except pd.errors.ParserError as e:
        raise ParseException(str(e), _line_number(e))
    missing = [c for c in NATIVE_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseException('header is missing columns {}'.format(missing), 1)
    frame = _numeric(frame[NATIVE_COLUMNS].copy(), first_line=2)
    frame = frame.astype({'stock_id': np.int64, 'day': np.int64})
    streams = _streams_from_frame(frame, first_line=2)
    logger.debug('Read %d streams from %s.', len(streams), path)
    return streams


def streams_frame(streams):
    parts = []
    for s in streams:
        part = pd.DataFrame(s.features, columns=FEATURE_COLUMNS)
        part.insert(0, 'day', s.day)
        part.insert(0, 'stock_id', s.stock)
        part['raw_best_ask'] = s.best_ask
        part['raw_best_bid'] = s.best_bid
        part['mid'] = s.mid
        parts.append(part)
    if not parts:
        return pd.DataFrame(columns=NATIVE_COLUMNS)
    return pd.concat(parts, ignore_index=True)


def write_native(path, streams):
    '''
    Writes streams in the native CSV format. Floats are written with their
    shortest round-tripping representation.
    '''
    frame = streams_frame(streams)
    with reports.atomic_open(path) as f:
        frame.to_csv(f, index=False, float_format=repr_float, lineterminator='\n')
    return path


def repr_float(value):
    return repr(float(value))


class Fi2010Layout:
    '''
    Where the roles of an FI-2010 style file live.

    `orientation` is 'columns' when each column of the file is one event (as
    in the published files) and 'rows' otherwise. `feature_start` is the index
    of the first of the 40 features. `label_indices` maps horizons to the
    index holding that horizon's label, and `label_values` maps the file's
    label codes for up, stationary and down. The stock of each event comes
    from `stock_index`, or from `stock_lengths` (event counts of consecutive
    stocks); the day from `day_index` or `day_lengths`, defaulting to day 0.
    '''

    REQUIRED = ('feature_start', 'label_indices')

    def __init__(self, d):
        missing = [key for key in self.REQUIRED if key not in d]
        if missing:
            raise ConfigException('FI-2010 layout is missing keys {}'.format(missing))
        self.orientation = d.get('orientation', 'columns')
        if self.orientation not in ('columns', 'rows'):
            raise ConfigException('Unknown orientation "{}"'.format(self.orientation))
        self.feature_start = int(d['feature_start'])
        self.label_indices = OrderedDict(sorted((int(h), int(i)) for h, i in d['label_indices'].items()))
        values = d.get('label_values', {'up': 1, 'stationary': 2, 'down': 3})
        try:
            self.label_values = {int(values['up']): UP, int(values['stationary']): STATIONARY,
                                 int(values['down']): DOWN}
        except KeyError as e:
            raise ConfigException('label_values is missing {}'.format(e))
        self.stock_index = d.get('stock_index')
        self.stock_lengths = d.get('stock_lengths')
        self.day_index = d.get('day_index')
        self.day_lengths = d.get('day_lengths')
        self.ask_index = d.get('ask_index')
        self.bid_index = d.get('bid_index')
        self.delimiter = d.get('delimiter')

    def required_width(self):
        indices = [self.feature_start + N_FEATURES - 1] + list(self.label_indices.values())
        indices += [i for i in (self.stock_index, self.day_index, self.ask_index, self.bid_index)
                    if i is not None]
        return max(indices) + 1


def _segment_ids(lengths, n, name):
    if sum(lengths) != n:
        raise ConfigException('{} sum to {} but the file has {} events'.format(name, sum(lengths), n))
    return np.repeat(np.arange(1, len(lengths) + 1), lengths)


def load_fi2010(path, layout):
    '''
    Reads an FI-2010 style numeric matrix into streams with the file's labels
    attached. `layout` is a `Fi2010Layout` or a dict for one.
    '''
    if not isinstance(layout, Fi2010Layout):
        layout = Fi2010Layout(layout)
    sep = r'\s+' if layout.delimiter is None else layout.delimiter
    try:
        frame = pd.read_csv(path, sep=sep, header=None, float_precision='round_trip')
    except pd.errors.EmptyDataError:
        return []
    except pd.errors.ParserError as e:
        raise ParseException(str(e), _line_number(e))
    frame = _numeric(frame, first_line=1)
    values = frame.to_numpy(dtype=np.float64)
    if layout.orientation == 'columns':
        values = values.T
    n, width = values.shape
    if width < layout.required_width():
        raise ConfigException('Layout needs {} values per event but the file has {}'.format(
            layout.required_width(), width))
    features = values[:, layout.feature_start:layout.feature_start + N_FEATURES]
    if layout.stock_index is not None:
        stock_ids = values[:, layout.stock_index].astype(np.int64)
    elif layout.stock_lengths is not None:
        stock_ids = _segment_ids(layout.stock_lengths, n, 'stock_lengths')
    else:
        stock_ids = np.ones(n, dtype=np.int64)
    if layout.day_index is not None:
        day_ids = values[:, layout.day_index].astype(np.int64)
    elif layout.day_lengths is not None:
        day_ids = _segment_ids(layout.day_lengths, n, 'day_lengths') - 1
    else:
        day_ids = np.zeros(n, dtype=np.int64)
    best_ask = values[:, layout.ask_index] if layout.ask_index is not None else features[:, 0]
    best_bid = values[:, layout.bid_index] if layout.bid_index is not None else features[:, 2]
    labels = {}
    for horizon, index in layout.label_indices.items():
        codes = values[:, index].astype(np.int64)
        unknown = sorted(set(codes.tolist()) - set(layout.label_values))
        if unknown:
            raise ParseException('unknown label codes {} for horizon {}'.format(unknown, horizon))
        labels[horizon] = np.array([layout.label_values[c] for c in codes], dtype=np.int64)
    keys = np.stack([stock_ids, day_ids], axis=1)
    boundaries = np.flatnonzero(np.any(keys[1:] != keys[:-1], axis=1)) + 1
    streams = []
    for start, end in zip(np.concatenate([[0], boundaries]), np.concatenate([boundaries, [n]])):
        streams.append(EventStream(
            stock_ids[start], day_ids[start], features[start:end], best_ask[start:end],
            best_bid[start:end], labels={h: l[start:end] for h, l in labels.items()}))
    logger.info('Loaded %d events in %d streams from %s.', n, len(streams), path)
    return streams


class ZScoreStats:

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    def to_dict(self):
        return {'mean': self.mean.tolist(), 'std': self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d['mean'], d['std'])


def zscore_fit(streams):
    '''
    Per-feature mean and standard deviation over all events of `streams`.
    The deviation is floored at 1e-12.
    '''
    if not streams or sum(len(s) for s in streams) == 0:
        raise DomainException('Cannot fit normalization statistics on no events')
    features = np.concatenate([s.features for s in streams])
    return ZScoreStats(features.mean(axis=0), np.maximum(features.std(axis=0), STD_FLOOR))


def zscore_apply(stats, streams):
    return [s.with_features((s.features - stats.mean) / stats.std) for s in streams]


def label_events(mids, horizon, theta=DEFAULT_THETA):
    '''
    Label of each event from the mean of the next `horizon` mid-prices
    relative to the current one: up above +theta, down below -theta,
    stationary otherwise. The last `horizon` events are UNLABELED.
    '''
    mids = np.asarray(mids, dtype=np.float64)
    n = len(mids)
    labels = np.full(n, UNLABELED, dtype=np.int64)
    if n <= horizon:
        return labels
    cs = np.concatenate([[0.0], np.cumsum(mids)])
    t = np.arange(n - horizon)
    future_mean = (cs[t + horizon + 1] - cs[t + 1]) / horizon
    change = future_mean / mids[t] - 1
    labels[t] = STATIONARY
    labels[t[change > theta]] = UP
    labels[t[change < -theta]] = DOWN
    return labels


class SampleSet:
    '''
    Windows of shape (N, 40, T) with labels and their provenance: stock,
    day, index of the window's last event and the raw best ask and bid at
    that event.
    '''

    FIELDS = ('X', 'y', 'stock', 'day', 'index', 'ask', 'bid')

    def __init__(self, X, y, stock, day, index, ask, bid):
        self.X = X
        self.y = y
        self.stock = stock
        self.day = day
        self.index = index
        self.ask = ask
        self.bid = bid

    def __len__(self):
        return len(self.y)

    @classmethod
    def empty(cls, window=DEFAULT_WINDOW):
        return cls(np.zeros((0, N_FEATURES, window)), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0))

    @classmethod
    def concat(cls, sets, window=DEFAULT_WINDOW):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty(window)
        return cls(*[np.concatenate([getattr(s, f) for s in sets]) for f in cls.FIELDS])

    def subset(self, idx):
        return SampleSet(*[getattr(self, f)[idx] for f in self.FIELDS])

    def for_stock(self, stock):
        return self.subset(np.flatnonzero(self.stock == stock))

    def class_counts(self):
        return np.bincount(self.y, minlength=3)[:3]


def make_windows(stream, window=DEFAULT_WINDOW, horizon=DEFAULT_HORIZON, theta=DEFAULT_THETA):
    '''
    Stride-one windows of `window` consecutive events, labeled at their last
    event. Labels supplied with the stream for `horizon` are used verbatim;
    otherwise they are computed with `label_events`, so a stream of n
    events gives max(0, n - window - horizon + 1) windows.
    '''
    if horizon in stream.labels:
        labels = stream.labels[horizon]
    else:
        labels = label_events(stream.mid, horizon, theta)
    ends = np.arange(window - 1, len(stream))
    ends = ends[labels[ends] != UNLABELED]
    if len(ends) == 0:
        return SampleSet.empty(window)
    offsets = np.arange(-window + 1, 1)
    X = stream.features[ends[:, None] + offsets[None, :]].transpose(0, 2, 1)
    n = len(ends)
    return SampleSet(X, labels[ends], np.full(n, stream.stock), np.full(n, stream.day), ends,
                     stream.best_ask[ends], stream.best_bid[ends])


def windows(streams, window=DEFAULT_WINDOW, horizon=DEFAULT_HORIZON, theta=DEFAULT_THETA):
    return SampleSet.concat([make_windows(s, window, horizon, theta) for s in streams], window)


def validation_split(samples):
    '''
    Per stock, the last 10% (rounded up) of the samples in temporal order go
    to validation; a stock with a single sample keeps it for training.
    '''
    train_idx, val_idx = [], []
    for stock in np.unique(samples.stock):
        idx = np.flatnonzero(samples.stock == stock)
        idx = idx[np.lexsort((samples.index[idx], samples.day[idx]))]
        n_val = math.ceil(VALIDATION_FRACTION * len(idx)) if len(idx) >= 2 else 0
        train_idx.append(idx[:len(idx) - n_val])
        val_idx.append(idx[len(idx) - n_val:])
    if not train_idx:
        return samples, samples.subset(np.zeros(0, dtype=np.int64))
    return samples.subset(np.concatenate(train_idx)), samples.subset(np.concatenate(val_idx))


class DatasetSplit:

    def __init__(self, train, val, test, stats):
        self.train = train
        self.val = val
        self.test = test
        self.stats = stats


def split_days(day_ids, train_days):
    day_ids = sorted(day_ids)
    return day_ids[:train_days], day_ids[train_days:]


def default_train_days(n_days):
    '''
    Seven of ten days; the same fraction, at least one day each way, for
    other day counts.
    '''
    if n_days < 2:
        raise DomainException('Need at least two days to separate training and testing')
    return min(max(1, round(0.7 * n_days)), n_days - 1)


class SplitOptions:

    def __init__(self, window=DEFAULT_WINDOW, horizon=DEFAULT_HORIZON, theta=DEFAULT_THETA,
                 train_days=None):
        self.window = window
        self.horizon = horizon
        self.theta = theta
        self.train_days = train_days

    def windows(self, streams):
        return windows(streams, self.window, self.horizon, self.theta)


def build_split(train_streams, test_streams, options, stats=None):
    '''
    Normalizes with `stats` (fitted on `train_streams` when None), windows,
    and carves validation out of the training windows.
    '''
    if stats is None:
        stats = zscore_fit(train_streams)
    train_val = options.windows(zscore_apply(stats, train_streams))
    train, val = validation_split(train_val)
    test = options.windows(zscore_apply(stats, test_streams))
    return DatasetSplit(train, val, test, stats)


def train_test_days(streams, options):
    all_days = days(streams)
    n_train = options.train_days if options.train_days is not None else default_train_days(len(all_days))
    return split_days(all_days, n_train)


class Setup1Split:
    '''
    Leave-one-stock-out: `old` holds the other stocks, `new` the target, and
    `joint` all stocks. `old` and `new` share the old training statistics.
    '''

    def __init__(self, target, old, new, joint):
        self.target = target
        self.old = old
        self.new = new
        self.joint = joint


def split_setup1(streams, target, options=None):
    options = options or SplitOptions()
    all_stocks = stocks(streams)
    if target not in all_stocks:
        raise ConfigException('Target stock {} not among stocks {}'.format(target, all_stocks))
    old_stocks = [s for s in all_stocks if s != target]
    if not old_stocks:
        raise DomainException('Setup 1 needs at least one stock besides the target')
    train_days, test_days = train_test_days(streams, options)
    old = build_split(select(streams, old_stocks, train_days), select(streams, old_stocks, test_days),
                      options)
    new = build_split(select(streams, [target], train_days), select(streams, [target], test_days),
                      options, old.stats)
    joint = build_split(select(streams, None, train_days), select(streams, None, test_days), options)
    return Setup1Split(target, old, new, joint)


class Setup2Split:
    '''
    `old` holds the old stocks; `new` maps each new stock to its split.
    Every split uses the old training statistics.
    '''

    def __init__(self, old_stocks, new_stocks, old, new):
        self.old_stocks = old_stocks
        self.new_stocks = new_stocks
        self.old = old
        self.new = new


def split_setup2(streams, old_stocks=(1, 2, 3), new_stocks=(4, 5), options=None):
    options = options or SplitOptions()
    if not new_stocks:
        raise DomainException('Setup 2 needs at least one new stock')
    available = set(stocks(streams))
    missing = sorted((set(old_stocks) | set(new_stocks)) - available)
    if missing:
        raise ConfigException('Stocks {} are not in the data'.format(missing))
    if set(old_stocks) & set(new_stocks):
        raise ConfigException('Old and new stocks overlap')
    train_days, test_days = train_test_days(streams, options)
    old = build_split(select(streams, old_stocks, train_days), select(streams, old_stocks, test_days),
                      options)
    new = OrderedDict()
    for stock in new_stocks:
        new[stock] = build_split(select(streams, [stock], train_days),
                                 select(streams, [stock], test_days), options, old.stats)
    return Setup2Split(list(old_stocks), list(new_stocks), old, new)


class OnlineSplit:
    '''
    Day-based split: `base` trains on the first days, `adapt` trains on the
    following days and both test on the final days.
    '''

    def __init__(self, base, adapt, day_groups):
        self.base = base
        self.adapt = adapt
        self.day_groups = day_groups


def split_online(streams, base_days=5, adapt_days=2, options=None):
    options = options or SplitOptions()
    all_days = days(streams)
    if len(all_days) < base_days + adapt_days + 1:
        raise DomainException('Online split needs more than {} days, got {}'.format(
            base_days + adapt_days, len(all_days)))
    base_ids = all_days[:base_days]
    adapt_ids = all_days[base_days:base_days + adapt_days]
    test_ids = all_days[base_days + adapt_days:]
    test_streams = select(streams, None, test_ids)
    base = build_split(select(streams, None, base_ids), test_streams, options)
    adapt = build_split(select(streams, None, adapt_ids), test_streams, options, base.stats)
    return OnlineSplit(base, adapt, (base_ids, adapt_ids, test_ids))


DistributionRow = namedtuple('DistributionRow', ['name', 'train', 'test'])


def class_distribution(streams, options=None):
    '''
    Class counts of the training and testing days, per stock and for all
    stocks.
    '''
    options = options or SplitOptions()
    train_days, test_days = train_test_days(streams, options)
    rows = []
    total_train = np.zeros(3, dtype=np.int64)
    total_test = np.zeros(3, dtype=np.int64)
    for stock in stocks(streams):
        train = options.windows(select(streams, [stock], train_days)).class_counts()
        test = options.windows(select(streams, [stock], test_days)).class_counts()
        total_train += train
        total_test += test
        rows.append(DistributionRow('Stock {}'.format(stock), train.tolist(), test.tolist()))
    rows.append(DistributionRow('All', total_train.tolist(), total_test.tolist()))
    return rows
