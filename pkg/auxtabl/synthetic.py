'''
Synthetic limit order book generator.

Each stock's mid-price follows a regime-switching random walk. A persistent
order-flow imbalance moves the volumes on the two sides of the book and
feeds into the next returns with a stock-specific coupling, so the book
carries real but stock-dependent information about the coming price
direction. Stocks whose coupling differs make a genuine distribution shift
for adaptation experiments.
'''

import logging

import numpy as np

from auxtabl import data
from auxtabl.errors import ConfigException

logger = logging.getLogger(__name__)

# Regimes: (drift sign, volatility multiplier).
REGIMES = ((0, 1.0), (1, 1.2), (-1, 1.2))

# Minimum share of each class under the default labeling.
MIN_CLASS_SHARE = 0.05


class StockRegime:
    '''
    Generation parameters of one stock.

    `drift` is the per-event log drift of the trending regimes, `volatility`
    the per-event log-return deviation, `coupling` how strongly the order
    imbalance drives the next returns (in units of `volatility`), `spread`
    the mean spread in ticks beyond one tick, and `volume_scale` the mean
    volume at the best level.
    '''

    FIELDS = ('price', 'drift', 'volatility', 'coupling', 'spread', 'volume_scale')

    def __init__(self, price=20.0, drift=1e-4, volatility=0.0015, coupling=0.6, spread=0.5,
                 volume_scale=1000.0):
        if price <= 0 or volatility < 0 or spread < 0 or volume_scale <= 0:
            raise ConfigException('Invalid stock regime: price {}, volatility {}, spread {}, volume {}'.format(
                price, volatility, spread, volume_scale))
        self.price = price
        self.drift = drift
        self.volatility = volatility
        self.coupling = coupling
        self.spread = spread
        self.volume_scale = volume_scale

    def to_dict(self):
        return {field: getattr(self, field) for field in self.FIELDS}


DEFAULT_REGIMES = (
    StockRegime(price=20.0, volatility=0.0012, coupling=0.6),
    StockRegime(price=35.0, volatility=0.0015, coupling=0.5, volume_scale=800.0),
    StockRegime(price=50.0, volatility=0.0018, coupling=0.7, spread=1.0),
    StockRegime(price=15.0, volatility=0.0014, coupling=-0.6, volume_scale=1500.0),
    StockRegime(price=25.0, volatility=0.0016, coupling=0.4, spread=0.8),
)


class SyntheticLobConfig:
    '''
    `stocks` regimes (one per stock, numbered from 1), `days` trading days of
    `events_per_day` events each.
    '''

    def __init__(self, n_stocks=5, days=10, events_per_day=200, seed=0, regimes=None,
                 tick=0.01, imbalance_persistence=0.95, switch_probability=0.01,
                 volume_sensitivity=0.5, volume_noise=0.3):
        if n_stocks < 1 or days < 1 or events_per_day < 1:
            raise ConfigException('Stocks, days and events per day must be positive')
        if not 0 <= imbalance_persistence < 1:
            raise ConfigException('imbalance_persistence must lie in [0, 1)')
        if regimes is None:
            regimes = [DEFAULT_REGIMES[i % len(DEFAULT_REGIMES)] for i in range(n_stocks)]
        regimes = [r if isinstance(r, StockRegime) else StockRegime(**r) for r in regimes]
        if len(regimes) != n_stocks:
            raise ConfigException('{} regimes given for {} stocks'.format(len(regimes), n_stocks))
        self.n_stocks = n_stocks
        self.days = days
        self.events_per_day = events_per_day
        self.seed = seed
        self.regimes = regimes
        self.tick = tick
        self.imbalance_persistence = imbalance_persistence
        self.switch_probability = switch_probability
        self.volume_sensitivity = volume_sensitivity
        self.volume_noise = volume_noise

    @classmethod
    def from_dict(cls, d, seed=None):
        kwargs = dict(d)
        if seed is not None:
            kwargs.setdefault('seed', seed)
        unknown = set(kwargs) - set(cls().__dict__)
        if unknown:
            raise ConfigException('Unknown synthetic data keys {}'.format(sorted(unknown)))
        return cls(**kwargs)

    def to_dict(self):
        d = {key: value for key, value in self.__dict__.items() if key != 'regimes'}
        d['regimes'] = [r.to_dict() for r in self.regimes]
        return d


def _regime_path(rng, n, switch_probability):
    states = np.zeros(n, dtype=np.int64)
    state = 0
    switches = rng.random(n) < switch_probability
    jumps = rng.integers(1, len(REGIMES), size=n)
    for t in range(n):
        if switches[t]:
            state = (state + jumps[t]) % len(REGIMES)
        states[t] = state
    return states


def _imbalance_path(rng, n, rho):
    innovations = rng.standard_normal(n) * np.sqrt(1 - rho * rho)
    path = np.empty(n)
    value = rng.standard_normal()
    for t in range(n):
        value = rho * value + innovations[t]
        path[t] = value
    return path


def generate_day(rng, cfg, regime, stock, day, open_price):
    '''
    One day of events for one stock. Returns (stream, closing mid).
    '''
    n = cfg.events_per_day
    states = _regime_path(rng, n, cfg.switch_probability)
    drift_sign = np.array([REGIMES[s][0] for s in states])
    vol_mult = np.array([REGIMES[s][1] for s in states])
    imbalance = _imbalance_path(rng, n, cfg.imbalance_persistence)
    lagged = np.concatenate([[0.0], imbalance[:-1]])
    returns = regime.drift * drift_sign + regime.volatility * vol_mult * (
        regime.coupling * lagged + rng.standard_normal(n))
    mid = open_price * np.exp(np.cumsum(returns))
    spread = cfg.tick * (1 + rng.poisson(regime.spread, size=n))
    best_ask = mid + spread / 2
    best_bid = mid - spread / 2

    levels = np.arange(data.N_LEVELS)
    depth = regime.volume_scale * np.exp(-0.1 * levels)
    tilt = cfg.volume_sensitivity * np.tanh(imbalance)

    def volumes(sign):
        noise = np.exp(cfg.volume_noise * rng.standard_normal((n, data.N_LEVELS)))
        return np.round(depth[None, :] * (1 + sign * tilt[:, None]) * noise) + 1

    ask_volume = volumes(-1)
    bid_volume = volumes(1)
    ask_price = best_ask[:, None] + cfg.tick * levels[None, :]
    bid_price = best_bid[:, None] - cfg.tick * levels[None, :]
    features = np.stack([ask_price, ask_volume, bid_price, bid_volume], axis=2).reshape(n, data.N_FEATURES)
    stream = data.EventStream(stock, day, features, best_ask, best_bid)
    return stream, mid[-1]


def generate_synthetic(cfg=None):
    '''
    Streams for every stock and day, ordered by stock then day. The same
    configuration and seed always give identical streams.
    '''
    cfg = cfg or SyntheticLobConfig()
    streams = []
    for index, regime in enumerate(cfg.regimes):
        stock = index + 1
        rng = np.random.default_rng([cfg.seed, stock])
        price = regime.price
        for day in range(cfg.days):
            stream, price = generate_day(rng, cfg, regime, stock, day, price)
            streams.append(stream)
    check_class_balance(streams)
    logger.info('Generated %d stocks x %d days x %d events.', cfg.n_stocks, cfg.days,
                cfg.events_per_day)
    return streams


def class_shares(streams, horizon=data.DEFAULT_HORIZON, theta=data.DEFAULT_THETA):
    labels = np.concatenate([data.label_events(s.mid, horizon, theta) for s in streams])
    labels = labels[labels != data.UNLABELED]
    if len(labels) == 0:
        return np.zeros(3)
    return np.bincount(labels, minlength=3)[:3] / len(labels)


def check_class_balance(streams, horizon=data.DEFAULT_HORIZON, theta=data.DEFAULT_THETA):
    '''
    Logs a warning when a class falls below its minimum share.
    '''
    shares = class_shares(streams, horizon, theta)
    if np.any(shares < MIN_CLASS_SHARE):
        logger.warning('Class shares %s: a class is below %.0f%%.',
                       np.round(shares, 3).tolist(), 100 * MIN_CLASS_SHARE)
    return shares
