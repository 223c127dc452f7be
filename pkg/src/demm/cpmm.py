"""Weighted constant-product market maker with fixed weights (Balancer style).

The pool state is ``(reserves, lp_supply)`` plus the launch-time weights.
Trades keep ``prod r_t ** w_t`` constant; deposits and withdrawals must be
proportional to the reserves. No transaction fee is taken.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_CEILING, ROUND_FLOOR, Decimal
from typing import Sequence

from .numerics import ZERO, D, NumericError, add, div, mul, pow_d, round_down, round_up, sub

# reserves and weights below this are treated as dust and refused
POSITIVITY_FLOOR = Decimal("1e-30")


class PoolError(ValueError):
    """An operation was rejected by the pool rules."""


def swap(
    r_in: Decimal, r_out: Decimal, w_in: Decimal, w_out: Decimal, amount_in: Decimal
) -> tuple[Decimal, Decimal, Decimal]:
    """Constant-product swap kernel shared by both market makers.

    Returns ``(new_r_in, new_r_out, amount_out)``. The new output reserve is
    rounded up and the amount paid out is the exact difference, so rounding
    can only increase the invariant.
    """
    if amount_in <= 0:
        raise PoolError("trade input must be positive")
    new_r_in = add(r_in, amount_in)
    # ratio < 1: round it up and the exponent down so the power errs high
    ratio = div(r_in, new_r_in, rounding=ROUND_CEILING)
    exponent = div(w_in, w_out, rounding=ROUND_FLOOR)
    power = pow_d(ratio, exponent, rounding=ROUND_CEILING)
    new_r_out = mul(r_out, power, rounding=ROUND_CEILING)
    if new_r_out > r_out:
        new_r_out = r_out
    if new_r_out < POSITIVITY_FLOOR:
        raise PoolError("trade would drain the output reserve below the positivity floor")
    return new_r_in, new_r_out, sub(r_out, new_r_out)


def spot_price(
    r_o: Decimal, w_o: Decimal, r_i: Decimal, w_i: Decimal
) -> Decimal:
    """Marginal price of token o in units of token i: (r_i/w_i) / (r_o/w_o)."""
    return div(div(r_i, w_i), div(r_o, w_o))


@dataclass(frozen=True)
class CpmmState:
    reserves: tuple[Decimal, ...]
    weights: tuple[Decimal, ...]
    lp_supply: Decimal

    def __post_init__(self) -> None:
        if len(self.reserves) != len(self.weights):
            raise PoolError("reserves and weights differ in length")
        if len(self.reserves) < 2:
            raise PoolError("a pool needs at least two tokens")
        if any(w <= 0 for w in self.weights):
            raise PoolError("weights must be positive")
        if self.is_empty:
            return
        if any(r <= 0 for r in self.reserves) or self.lp_supply <= 0:
            raise PoolError("reserves and LP supply must be positive")

    @property
    def is_empty(self) -> bool:
        """A fully redeemed pool: zero reserves and zero LP supply."""
        return self.lp_supply == 0 and all(r == 0 for r in self.reserves)

    @property
    def n(self) -> int:
        return len(self.reserves)


def _check_pair(state: CpmmState, i: int, o: int) -> None:
    for k in (i, o):
        if not 0 <= k < state.n:
            raise PoolError(f"token index {k} out of range")
    if i == o:
        raise PoolError("cannot trade a token against itself")


def cpmm_init(
    reserves: Sequence[Decimal], weights: Sequence[Decimal], initial_lp: Decimal = Decimal(1)
) -> CpmmState:
    reserves = tuple(D(r) for r in reserves)
    weights = tuple(D(w) for w in weights)
    initial_lp = D(initial_lp)
    if len(reserves) != len(weights):
        raise PoolError("reserves and weights differ in length")
    if any(r <= 0 for r in reserves) or initial_lp <= 0:
        raise PoolError("reserves and initial LP must be positive")
    return CpmmState(reserves, weights, initial_lp)


def cpmm_trade(state: CpmmState, i: int, o: int, dr_i: Decimal) -> tuple[CpmmState, Decimal]:
    """Swap ``dr_i`` of token ``i`` for token ``o``; returns the new state and output."""
    _check_pair(state, i, o)
    if state.is_empty:
        raise PoolError("pool is empty")
    new_i, new_o, dr_o = swap(
        state.reserves[i], state.reserves[o], state.weights[i], state.weights[o], D(dr_i)
    )
    reserves = list(state.reserves)
    reserves[i], reserves[o] = new_i, new_o
    return CpmmState(tuple(reserves), state.weights, state.lp_supply), dr_o


def cpmm_provide(state: CpmmState, alpha: Decimal) -> tuple[CpmmState, Decimal, tuple[Decimal, ...]]:
    """Deposit ``alpha * r``; returns ``(state, minted, deposit)``."""
    alpha = D(alpha)
    if alpha <= 0:
        raise PoolError("alpha must be positive")
    if state.is_empty:
        raise PoolError("pool is empty")
    deposit = tuple(round_up(mul(alpha, r, rounding=ROUND_CEILING)) for r in state.reserves)
    minted = round_down(mul(alpha, state.lp_supply, rounding=ROUND_FLOOR))
    reserves = tuple(add(r, d) for r, d in zip(state.reserves, deposit))
    return CpmmState(reserves, state.weights, add(state.lp_supply, minted)), minted, deposit


def cpmm_withdraw(state: CpmmState, alpha: Decimal) -> tuple[CpmmState, tuple[Decimal, ...], Decimal]:
    """Redeem ``alpha * L`` LP tokens; returns ``(state, payout, burned)``."""
    alpha = D(alpha)
    if not 0 < alpha <= 1:
        raise PoolError("alpha must lie in (0, 1]")
    if state.is_empty:
        raise PoolError("pool is empty")
    if alpha == 1:
        return (
            CpmmState(tuple(ZERO for _ in state.reserves), state.weights, ZERO),
            state.reserves,
            state.lp_supply,
        )
    payout = tuple(round_down(mul(alpha, r, rounding=ROUND_FLOOR)) for r in state.reserves)
    burned = round_up(mul(alpha, state.lp_supply, rounding=ROUND_CEILING))
    reserves = tuple(sub(r, p) for r, p in zip(state.reserves, payout))
    lp = sub(state.lp_supply, burned)
    if lp <= 0 or any(r < POSITIVITY_FLOOR for r in reserves):
        raise PoolError("withdrawal would leave dust below the positivity floor")
    return CpmmState(reserves, state.weights, lp), payout, burned


def cpmm_spot_price(state: CpmmState, o: int, i: int) -> Decimal:
    """Price of token ``o`` quoted in token ``i``."""
    _check_pair(state, i, o)
    if state.is_empty:
        raise PoolError("pool is empty")
    return spot_price(state.reserves[o], state.weights[o], state.reserves[i], state.weights[i])


__all__ = [
    "CpmmState",
    "NumericError",
    "POSITIVITY_FLOOR",
    "PoolError",
    "cpmm_init",
    "cpmm_provide",
    "cpmm_spot_price",
    "cpmm_trade",
    "cpmm_withdraw",
    "spot_price",
    "swap",
]
