from __future__ import annotations

from decimal import Decimal

import mpmath
import pytest

from demm.cpmm import CpmmState, PoolError, cpmm_init, cpmm_provide, cpmm_spot_price, cpmm_trade, cpmm_withdraw
from demm.numerics import D

from helpers import close, vec_close

mpmath.mp.dps = 100


def pool(r, w=("1", "1"), lp="1") -> CpmmState:
    return cpmm_init([D(x) for x in r], [D(x) for x in w], D(lp))


def test_init_examples():
    assert pool(("20", "4")) == CpmmState((D(20), D(4)), (D(1), D(1)), D(1))
    assert pool(("40", "16"), lp="4").lp_supply == 4
    assert pool(("1", "1", "1"), ("1", "1", "1")).n == 3


@pytest.mark.parametrize(
    "reserves,weights",
    [(("1", "2"), ("1",)), (("0", "1"), ("1", "1")), (("1",), ("1",)), (("1", "1"), ("1", "0"))],
)
def test_init_rejects_bad_input(reserves, weights):
    with pytest.raises(PoolError):
        cpmm_init([D(x) for x in reserves], [D(x) for x in weights], D(1))


def test_trade_quotes():
    _, out = cpmm_trade(pool(("20", "4")), 0, 1, D(1))
    assert close(out, Decimal(4) / Decimal(21))
    _, out = cpmm_trade(pool(("80", "16"), lp="4"), 0, 1, D(1))
    assert close(out, Decimal(16) / Decimal(81))


def test_tiny_trade_gives_tiny_output():
    _, out = cpmm_trade(pool(("20", "4")), 0, 1, D("0.000000000001"))
    assert 0 < out < D("0.000000000001")


def test_trade_rejections():
    with pytest.raises(PoolError):
        cpmm_trade(pool(("20", "4")), 0, 0, D(1))
    with pytest.raises(PoolError):
        cpmm_trade(pool(("20", "4")), 0, 1, D(0))


def test_weighted_trade_against_oracle():
    state = pool(("20", "12"), ("1", "3"))
    new, out = cpmm_trade(state, 0, 1, D("7.5"))
    want = mpmath.mpf(12) * (1 - (mpmath.mpf(20) / mpmath.mpf("27.5")) ** (mpmath.mpf(1) / 3))
    assert close(out, Decimal(mpmath.nstr(want, 70)), "1e-40")
    assert 0 < out < state.reserves[1]
    assert new.reserves[0] == D("27.5")


def test_provide_and_withdraw_examples():
    state, minted, deposit = cpmm_provide(pool(("20", "4")), D(3))
    assert (state.reserves, state.lp_supply, minted, deposit) == ((D(80), D(16)), D(4), D(3), (D(60), D(12)))
    state, minted, _ = cpmm_provide(pool(("10", "128"), lp="4"), D("0.5"))
    assert state.reserves == (D(15), D(192)) and state.lp_supply == 6 and minted == 2
    eq = pool(("10", "128"), lp="4")
    _, payout, burned = cpmm_withdraw(eq, D("0.25"))
    assert vec_close(payout, (D("2.5"), D(32))) and burned == 1
    _, payout, burned = cpmm_withdraw(eq, D("0.75"))
    assert vec_close(payout, (D("7.5"), D(96))) and burned == 3


def test_full_withdraw_empties_pool():
    state, payout, burned = cpmm_withdraw(pool(("10", "128"), lp="4"), D(1))
    assert state.is_empty and payout == (D(10), D(128)) and burned == 4
    with pytest.raises(PoolError):
        cpmm_trade(state, 0, 1, D(1))


def test_alpha_ranges():
    with pytest.raises(PoolError):
        cpmm_provide(pool(("20", "4")), D(0))
    with pytest.raises(PoolError):
        cpmm_withdraw(pool(("20", "4")), D("1.5"))
    with pytest.raises(PoolError):
        cpmm_withdraw(pool(("20", "4")), D(0))


def test_spot_prices():
    assert cpmm_spot_price(pool(("20", "4")), 1, 0) == 5
    assert cpmm_spot_price(pool(("7", "7")), 0, 1) == 1
    assert cpmm_spot_price(pool(("10", "128"), lp="4"), 0, 1) == D("12.8")
    with pytest.raises(PoolError):
        cpmm_spot_price(pool(("20", "4")), 1, 1)


def test_provide_withdraw_round_trip():
    start = pool(("20", "4"))
    alpha = D(3)
    grown, _, deposit = cpmm_provide(start, alpha)
    back, payout, _ = cpmm_withdraw(grown, D(3) / D(4))
    assert vec_close(payout, deposit, "1e-38")
    assert vec_close(back.reserves, start.reserves, "1e-38")
    assert cpmm_spot_price(grown, 0, 1) == cpmm_spot_price(start, 0, 1)
