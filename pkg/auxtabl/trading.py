'''
Long-only trading simulation driven by direction predictions.

Flat and an "up" prediction: buy one share at the best ask. Holding and a
"down" prediction: sell at the best bid. Anything else holds. A position
still open after the last event is closed at the last best bid and flagged.
No transaction costs.
'''

import logging
from collections import namedtuple

import numpy as np

from auxtabl import reports
from auxtabl.errors import ShapeException, DomainException

logger = logging.getLogger(__name__)

UP = 1
DOWN = 2

Trade = namedtuple('Trade', ['entry_index', 'entry_price', 'exit_index', 'exit_price', 'ret',
                             'forced'])


class TradeLog:

    HEADER = ['entry_index', 'entry_price', 'exit_index', 'exit_price', 'return', 'forced_close']

    def __init__(self, trades=None):
        self.trades = [] if trades is None else list(trades)

    def __len__(self):
        return len(self.trades)

    def returns(self):
        return np.array([t.ret for t in self.trades], dtype=float)

    def rows(self):
        return [[int(t.entry_index), reports.number_text(t.entry_price), int(t.exit_index),
                 reports.number_text(t.exit_price), reports.number_text(t.ret), int(t.forced)]
                for t in self.trades]


def trade_return(entry_price, exit_price):
    return (exit_price / entry_price) - 1


def cumulative_returns(trades, length, compound=True):
    '''
    Cumulative return after each event, as a fraction. A trade's return is
    booked at its exit index.
    '''
    booked = np.zeros(length)
    for t in trades:
        if compound:
            booked[t.exit_index] = (1 + booked[t.exit_index]) * (1 + t.ret) - 1
        else:
            booked[t.exit_index] += t.ret
    if compound:
        return np.cumprod(1 + booked) - 1
    return np.cumsum(booked)


def simulate_trading(predictions, best_ask, best_bid, compound=True):
    '''
    Returns (TradeLog, cumulative return curve) for predictions aligned with
    the raw best ask and bid of each event.
    '''
    predictions = np.asarray(predictions)
    best_ask = np.asarray(best_ask, dtype=float)
    best_bid = np.asarray(best_bid, dtype=float)
    if not (predictions.shape == best_ask.shape == best_bid.shape) or predictions.ndim != 1:
        raise ShapeException('Predictions {}, asks {} and bids {} must be equally long vectors'.format(
            predictions.shape, best_ask.shape, best_bid.shape))
    if np.any(best_ask <= 0) or np.any(best_bid <= 0):
        raise DomainException('Prices must be positive')
    trades = []
    entry = None
    for i, prediction in enumerate(predictions):
        if entry is None and prediction == UP:
            entry = i
        elif entry is not None and prediction == DOWN:
            trades.append(Trade(entry, best_ask[entry], i, best_bid[i],
                                trade_return(best_ask[entry], best_bid[i]), False))
            entry = None
    last = len(predictions) - 1
    # An entry on the final event closes at that event.
    if entry is not None:
        trades.append(Trade(entry, best_ask[entry], last, best_bid[last],
                            trade_return(best_ask[entry], best_bid[last]), True))
        logger.debug('Force-closed the position opened at event %d.', entry)
    return TradeLog(trades), cumulative_returns(trades, len(predictions), compound)


def total_return(log, compound=True):
    r = log.returns()
    if compound:
        return float(np.prod(1 + r) - 1)
    return float(r.sum())
