from __future__ import annotations

from decimal import Decimal

import mpmath
import pytest

from demm.core import DemmState, log_invariant
from demm.cpmm import CpmmState, PoolError
from demm.market import (
    PriceVector,
    arbitrage_oracle,
    cpmm_equilibrium,
    demm_equilibrium,
    value_per_weight,
)
from demm.numerics import D, rel_diff

from helpers import close, vec_close

mpmath.mp.dps = 100


def st(r, w, tokens=("s", "t")) -> DemmState:
    return DemmState(tuple(tokens), tuple(D(x) for x in r), tuple(D(x) for x in w))


def prices(*values, tokens=("s", "t")) -> PriceVector:
    return PriceVector(dict(zip(tokens, (D(v) for v in values))))


def mp_equilibrium(r, w, p) -> list[Decimal]:
    # r'_t = c * w_t / p_t with prod r'^w = prod r^w
    r, w, p = ([mpmath.mpf(x) for x in v] for v in (r, w, p))
    ln_c = sum(wi * (mpmath.log(ri) - mpmath.log(wi / pi)) for ri, wi, pi in zip(r, w, p)) / sum(w)
    return [Decimal(mpmath.nstr(mpmath.exp(ln_c) * wi / pi, 70)) for wi, pi in zip(w, p)]


@pytest.mark.parametrize(
    "r,w,p,want",
    [
        (("40", "16"), ("2", "4"), ("64", "5"), ("2.5", "64")),
        (("40", "16"), ("1", "2"), ("64", "5"), ("2.5", "64")),
        (("2", "32"), ("0.8", "1"), ("64", "0.009765625"), ("0.0625", "512")),
    ],
)
def test_exact_equilibria(r, w, p, want):
    got = demm_equilibrium(st(r, w), prices(*p))
    assert vec_close(got.reserves, tuple(D(x) for x in want), "1e-40")
    assert got.weights == tuple(D(x) for x in w)


def test_equilibrium_after_price_drop_matches_oracle():
    got = demm_equilibrium(st(("40", "16"), ("2", "4")), prices(1, 10))
    want = mp_equilibrium(("40", "16"), ("2", "4"), ("1", "10"))
    assert vec_close(got.reserves, tuple(want), "1e-45")
    assert str(got.reserves[0]).startswith("63.496") and str(got.reserves[1]).startswith("12.699")


def test_balanced_state_is_fixed_point():
    state = st(("2.5", "64"), ("2", "4"))
    assert demm_equilibrium(state, prices(64, 5)) == state


def test_missing_or_bad_price():
    with pytest.raises(PoolError):
        demm_equilibrium(st(("1", "1"), ("1", "1")), PriceVector({"s": D(1)}))
    with pytest.raises(PoolError):
        PriceVector({"s": D(0)})


def test_cpmm_equilibria():
    got = cpmm_equilibrium(CpmmState((D(80), D(16)), (D(1), D(1)), D(4)), [D(64), D(5)])
    assert vec_close(got.reserves, (D(10), D(128)), "1e-45") and got.lp_supply == 4

    got = cpmm_equilibrium(CpmmState((D(20), D(12)), (D(1), D(3)), D(1)), [D(64), D(5)])
    root2 = mpmath.sqrt(2)
    want = (Decimal(mpmath.nstr(5 / (4 * root2), 70)), Decimal(mpmath.nstr(24 * root2, 70)))
    assert vec_close(got.reserves, want, "1e-45")

    balanced = CpmmState((D(7), D(7)), (D(1), D(1)), D(1))
    assert cpmm_equilibrium(balanced, [D(3), D(3)]) == balanced


def test_bisection_oracle_agrees():
    state = st(("40", "16"), ("1", "2"))
    a = demm_equilibrium(state, prices(64, 5))
    b = arbitrage_oracle(state, prices(64, 5))
    assert vec_close(a.reserves, b.reserves, "1e-25")


def test_bisection_oracle_no_trade_when_balanced():
    state = st(("2.5", "64"), ("1", "2"))
    assert arbitrage_oracle(state, prices(64, 5)) is state


def test_bisection_oracle_is_two_token_only():
    with pytest.raises(PoolError):
        arbitrage_oracle(st(("1", "1", "1"), ("1", "1", "1"), ("a", "b", "c")), prices(1, 1, 1, tokens=("a", "b", "c")))


def test_equilibrium_properties_three_tokens():
    state = st(("50", "16", "5"), ("1.25", "2", "0.25"), ("s", "t", "u"))
    p = prices("3.7", "11", "0.2", tokens=("s", "t", "u"))
    eq = demm_equilibrium(state, p)
    assert eq.weights == state.weights
    assert rel_diff(log_invariant(eq), log_invariant(state)) <= Decimal("1e-30")
    vpw = value_per_weight(eq, p)
    assert all(rel_diff(v, vpw[0]) <= Decimal("1e-30") for v in vpw)
    assert demm_equilibrium(eq, p) == eq or vec_close(demm_equilibrium(eq, p).reserves, eq.reserves, "1e-45")


def test_price_vector_scaling():
    base = prices(2, 8)
    assert base.scaled("t", D("0.5"))["t"] == 4 and base["s"] == 2
    assert close(base.scaled("s", D(3))["s"], "6")
