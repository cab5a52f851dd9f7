import numpy as np
import pytest

from auxtabl import trading
from auxtabl.errors import DomainException, ShapeException

ASKS = np.array([10.0, 10.0, 11.0, 12.0, 12.0, 13.0, 14.0])
BIDS = ASKS - 0.1


def test_entries_exits_and_forced_close():
    log, curve = trading.simulate_trading([0, 1, 1, 2, 0, 1, 0], ASKS, BIDS)
    assert len(log) == 2
    first, second = log.trades
    assert (first.entry_index, first.exit_index, first.forced) == (1, 3, False)
    assert first.ret == pytest.approx(11.9 / 10.0 - 1)
    assert (second.entry_index, second.exit_index, second.forced) == (5, 6, True)
    assert second.ret == pytest.approx(13.9 / 13.0 - 1)
    expected_last = (1 + first.ret) * (1 + second.ret) - 1
    assert np.allclose(curve, [0, 0, 0, first.ret, first.ret, first.ret, expected_last])
    assert trading.total_return(log) == pytest.approx(expected_last)


def test_simple_returns_add_up():
    log, curve = trading.simulate_trading([1, 2, 1, 0, 0, 0, 2], ASKS, BIDS, compound=False)
    assert len(log) == 2
    assert curve[-1] == pytest.approx(log.returns().sum())
    assert trading.total_return(log, compound=False) == pytest.approx(curve[-1])


def test_no_trades():
    log, curve = trading.simulate_trading([0, 2, 0], ASKS[:3], BIDS[:3])
    assert len(log) == 0
    assert np.all(curve == 0)


def test_entry_on_the_last_event_is_closed_there():
    log, curve = trading.simulate_trading([0, 0, 1], [100.0] * 3, [99.0] * 3)
    assert len(log) == 1
    trade = log.trades[0]
    assert (trade.entry_index, trade.exit_index, trade.forced) == (2, 2, True)
    assert trade.ret == pytest.approx(-0.01)
    assert np.allclose(curve, [0, 0, -0.01])


def test_trade_rows():
    log, _ = trading.simulate_trading([1, 2], ASKS[:2], BIDS[:2])
    assert log.rows() == [[0, '10.0', 1, '9.9', repr(9.9 / 10.0 - 1), 0]]
    assert len(trading.TradeLog.HEADER) == len(log.rows()[0])


def test_bad_inputs():
    with pytest.raises(ShapeException):
        trading.simulate_trading([0, 1], ASKS, BIDS)
    with pytest.raises(DomainException):
        trading.simulate_trading([0, 1], [1.0, 0.0], [1.0, 1.0])
