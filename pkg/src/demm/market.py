"""External prices and the no-arbitrage state of a pool.

Arbitrageurs trade until every spot price matches the external market. For a
constant-product pool the fixed point has a closed form: the invariant is
unchanged and every token holds the same value per unit of weight, i.e.
``r_t = c * w_t / p_t``. We solve for ``ln c`` so nothing is exponentiated
before the final reserves.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Iterator, Mapping, Sequence, Union

from .core import DemmState, demm_trade
from .cpmm import CpmmState, PoolError
from .numerics import GUARD_DIGITS, ZERO, D, context, rel_diff, total

SPOT_TOLERANCE = Decimal("1e-30")


@dataclass(frozen=True)
class PriceVector(Mapping[str, Decimal]):
    """External unit prices, token id -> dollars per token."""

    prices: Mapping[str, Decimal]

    def __post_init__(self) -> None:
        clean = {str(k): D(v) for k, v in self.prices.items()}
        if any(v <= 0 for v in clean.values()):
            raise PoolError("prices must be strictly positive")
        object.__setattr__(self, "prices", clean)

    def __getitem__(self, token: str) -> Decimal:
        return self.prices[token]

    def __iter__(self) -> Iterator[str]:
        return iter(self.prices)

    def __len__(self) -> int:
        return len(self.prices)

    def scaled(self, token: str, factor: Decimal) -> "PriceVector":
        out = dict(self.prices)
        out[token] = context().multiply(out[token], factor)
        return PriceVector(out)


Prices = Union[PriceVector, Mapping[str, Decimal]]


def price_list(tokens: Sequence[str], prices: Prices) -> list[Decimal]:
    missing = [t for t in tokens if t not in prices]
    if missing:
        raise PoolError(f"no external price for {', '.join(missing)}")
    out = [D(prices[t]) for t in tokens]
    if any(p <= 0 for p in out):
        raise PoolError("prices must be strictly positive")
    return out


def equilibrium_reserves(
    reserves: Sequence[Decimal], weights: Sequence[Decimal], prices: Sequence[Decimal]
) -> tuple[Decimal, ...]:
    """Reserves on the same invariant level set whose values are proportional to weights."""
    hi = context(extra=GUARD_DIGITS)
    num = ZERO
    for r, w, p in zip(reserves, weights, prices):
        num = hi.add(num, hi.multiply(w, hi.subtract(hi.ln(r), hi.ln(hi.divide(w, p)))))
    ln_c = hi.divide(num, total(weights))
    out = context()
    return tuple(
        out.plus(hi.exp(hi.add(ln_c, hi.subtract(hi.ln(w), hi.ln(p)))))
        for w, p in zip(weights, prices)
    )


def demm_equilibrium(state: DemmState, prices: Prices) -> DemmState:
    """Jump to the no-arbitrage state for ``prices``; weights are unchanged."""
    p = price_list(state.tokens, prices)
    return DemmState(state.tokens, equilibrium_reserves(state.reserves, state.weights, p), state.weights)


def cpmm_equilibrium(state: CpmmState, prices: Sequence[Decimal]) -> CpmmState:
    """As :func:`demm_equilibrium` for a fixed-weight pool; prices are index-aligned."""
    if len(prices) != state.n:
        raise PoolError("one price per pooled token is required")
    p = [D(x) for x in prices]
    if any(x <= 0 for x in p):
        raise PoolError("prices must be strictly positive")
    if state.is_empty:
        return state
    return CpmmState(equilibrium_reserves(state.reserves, state.weights, p), state.weights, state.lp_supply)


def arbitrage_oracle(state: DemmState, prices: Prices, max_iter: int = 400) -> DemmState:
    """Reach equilibrium by bisecting on the size of one arbitrage trade.

    Independent check on :func:`demm_equilibrium`; two-token pools only.
    """
    if state.n != 2:
        raise PoolError("the bisection oracle handles two-token pools only")
    pa, pb = price_list(state.tokens, prices)
    ctx = context()
    spot = _spot(ctx, state.reserves[0], state.weights[0], state.reserves[1], state.weights[1])
    target = ctx.divide(pa, pb)
    if rel_diff(spot, target) <= SPOT_TOLERANCE:
        return state
    # spot is the price of token 0 in token 1; selling token 1 in raises it
    if spot < target:
        i, o, goal = 1, 0, target
    else:
        i, o, goal = 0, 1, ctx.divide(pb, pa)
    r_i, w_i = state.reserves[i], state.weights[i]
    r_o, w_o = state.reserves[o], state.weights[o]
    exponent = ctx.divide(w_i, w_o)

    def price_after(dr: Decimal) -> Decimal:
        new_i = ctx.add(r_i, dr)
        new_o = ctx.multiply(r_o, ctx.exp(ctx.multiply(exponent, ctx.ln(ctx.divide(r_i, new_i)))))
        return _spot(ctx, new_o, w_o, new_i, w_i)

    lo, hi = ZERO, r_i
    while price_after(hi) < goal:
        lo, hi = hi, ctx.multiply(hi, 2)
    half = Decimal("0.5")
    mid = hi
    for _ in range(max_iter):
        mid = ctx.multiply(ctx.add(lo, hi), half)
        got = price_after(mid)
        if rel_diff(got, goal) <= SPOT_TOLERANCE:
            break
        if got < goal:
            lo = mid
        else:
            hi = mid
    else:
        raise PoolError("bisection did not converge")
    return demm_trade(state, i, o, mid)[0]


def _spot(ctx, r_o: Decimal, w_o: Decimal, r_i: Decimal, w_i: Decimal) -> Decimal:
    return ctx.divide(ctx.divide(r_i, w_i), ctx.divide(r_o, w_o))


def value_per_weight(state: DemmState, prices: Prices) -> tuple[Decimal, ...]:
    """``p_t * r_t / w_t`` for every token; constant across tokens at equilibrium."""
    p = price_list(state.tokens, prices)
    ctx = context(extra=GUARD_DIGITS)
    return tuple(
        context().plus(ctx.divide(ctx.multiply(pt, r), w))
        for pt, r, w in zip(p, state.reserves, state.weights)
    )


__all__ = [
    "PriceVector",
    "arbitrage_oracle",
    "cpmm_equilibrium",
    "demm_equilibrium",
    "equilibrium_reserves",
    "value_per_weight",
]
