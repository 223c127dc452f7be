"""Dynamic exponent market maker.

A pool is ``(reserves, weights)``. The weight vector is the exponent of the
invariant ``prod r_t ** w_t`` *and* the number of LP tokens in circulation for
each pooled token, so deposits of any composition are accepted: depositing
``dr_t`` of token ``t`` scales both ``r_t`` and ``w_t`` by ``(r_t + dr_t) / r_t``
and mints the difference in weight as LP token ``t``.

All transitions are pure; states and ledgers are never mutated in place.
The invariant value itself is never computed (it overflows quickly), only its
logarithm when a check needs it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_FLOOR, Decimal
from typing import Iterable, Mapping, Sequence, Union

from .cpmm import POSITIVITY_FLOOR, PoolError, spot_price, swap
from .numerics import ONE, ZERO, D, add, context, muldiv, mul, neg, sub, total

TokenRef = Union[str, int]
Amounts = Union[Sequence[Decimal], Mapping[str, Decimal]]


@dataclass(frozen=True)
class DemmState:
    tokens: tuple[str, ...]
    reserves: tuple[Decimal, ...]
    weights: tuple[Decimal, ...]

    def __post_init__(self) -> None:
        if not len(self.tokens) == len(self.reserves) == len(self.weights):
            raise PoolError("tokens, reserves and weights differ in length")
        if len(set(self.tokens)) != len(self.tokens):
            raise PoolError("duplicate token id")
        if any(r <= 0 for r in self.reserves) or any(w <= 0 for w in self.weights):
            raise PoolError("reserves and weights must be strictly positive")

    @property
    def n(self) -> int:
        return len(self.tokens)

    def index(self, token: TokenRef) -> int:
        if isinstance(token, int) and not isinstance(token, bool):
            if not 0 <= token < self.n:
                raise PoolError(f"token index {token} out of range")
            return token
        try:
            return self.tokens.index(token)
        except ValueError:
            raise PoolError(f"token {token!r} is not in the pool") from None

    def reserve(self, token: TokenRef) -> Decimal:
        return self.reserves[self.index(token)]

    def weight(self, token: TokenRef) -> Decimal:
        return self.weights[self.index(token)]


@dataclass(frozen=True)
class LpLedger:
    """Per-account LP balances and fee pots, both keyed ``account -> token -> amount``."""

    balances: dict[str, dict[str, Decimal]] = field(default_factory=dict)
    fee_pots: dict[str, dict[str, Decimal]] = field(default_factory=dict)

    def balance(self, account: str, token: str) -> Decimal:
        return self.balances.get(account, {}).get(token, ZERO)

    def fee_pot(self, account: str, token: str) -> Decimal:
        return self.fee_pots.get(account, {}).get(token, ZERO)

    def supply(self, token: str) -> Decimal:
        return total(row.get(token, ZERO) for row in self.balances.values())

    def holders(self, token: str) -> list[tuple[str, Decimal]]:
        return sorted(
            (acct, row[token]) for acct, row in self.balances.items() if row.get(token, ZERO) > 0
        )

    @property
    def accounts(self) -> list[str]:
        return sorted(set(self.balances) | set(self.fee_pots))


@dataclass(frozen=True)
class FeePolicy:
    """Fraction ``rho`` of each trade input that is priced; ``1 - rho`` is the fee."""

    rho: Decimal = ONE

    def __post_init__(self) -> None:
        if not ZERO < self.rho <= ONE:
            raise PoolError("rho must lie in (0, 1]")


FEE_FREE = FeePolicy()


@dataclass(frozen=True)
class TradeQuote:
    token_in: str
    token_out: str
    dr_i: Decimal
    dr_o: Decimal
    fee_charged: Decimal


def _credit(table: dict[str, dict[str, Decimal]], account: str, token: str, amount: Decimal) -> None:
    row = table.setdefault(account, {})
    value = add(row.get(token, ZERO), amount)
    if value < 0:
        raise PoolError(f"{account} would hold a negative amount of {token}")
    if value == 0:
        row.pop(token, None)
        if not row:
            del table[account]
    else:
        row[token] = value


def _copy(table: Mapping[str, Mapping[str, Decimal]]) -> dict[str, dict[str, Decimal]]:
    return {acct: dict(row) for acct, row in table.items()}


def _vector(state: DemmState, amounts: Amounts, what: str) -> list[Decimal]:
    if isinstance(amounts, Mapping):
        out = [ZERO] * state.n
        for token, value in amounts.items():
            if isinstance(token, str) and token not in state.tokens:
                raise PoolError(f"token {token!r} is not in the pool; use add_token to list it")
            out[state.index(token)] = D(value)
        return out
    if len(amounts) != state.n:
        raise PoolError(f"{what} vector has length {len(amounts)}, pool has {state.n} tokens")
    return [D(v) for v in amounts]


def log_invariant(state: DemmState, extra: int = 30) -> Decimal:
    """``sum w_t ln r_t`` evaluated with ``extra`` guard digits."""
    ctx = context(extra=extra)
    acc = ZERO
    for r, w in zip(state.reserves, state.weights):
        acc = ctx.add(acc, ctx.multiply(w, ctx.ln(r)))
    return acc


# -- operations -------------------------------------------------------------


def demm_init(
    tokens: Sequence[str], reserves: Sequence[Decimal], genesis: str
) -> tuple[DemmState, LpLedger]:
    """Open a pool with unit weights; ``genesis`` receives one LP token of each kind.

    The caller vouches that ``reserves`` are of equal market value.
    """
    tokens = tuple(tokens)
    reserves = tuple(D(r) for r in reserves)
    if len(tokens) < 2:
        raise PoolError("a pool needs at least two tokens")
    if len(tokens) != len(reserves):
        raise PoolError("tokens and reserves differ in length")
    if any(r < POSITIVITY_FLOOR for r in reserves):
        raise PoolError("initial reserves must be positive")
    state = DemmState(tokens, reserves, tuple(ONE for _ in tokens))
    return state, LpLedger({genesis: {t: ONE for t in tokens}}, {})


def demm_trade(
    state: DemmState,
    i: TokenRef,
    o: TokenRef,
    dr_i: Decimal,
    fee: FeePolicy = FEE_FREE,
) -> tuple[DemmState, TradeQuote]:
    """Swap ``dr_i`` of token ``i`` for token ``o``.

    Only ``rho * dr_i`` enters the reserves; the remainder is returned as
    ``fee_charged`` and should be passed to :func:`credit_fee`.
    """
    ii, oo = state.index(i), state.index(o)
    if ii == oo:
        raise PoolError("cannot trade a token against itself")
    dr_i = D(dr_i)
    if dr_i <= 0:
        raise PoolError("trade input must be positive")
    effective = dr_i if fee.rho == ONE else mul(fee.rho, dr_i, rounding=ROUND_FLOOR)
    if effective <= 0:
        raise PoolError("trade input vanishes after the fee")
    new_i, new_o, dr_o = swap(
        state.reserves[ii], state.reserves[oo], state.weights[ii], state.weights[oo], effective
    )
    reserves = list(state.reserves)
    reserves[ii], reserves[oo] = new_i, new_o
    quote = TradeQuote(state.tokens[ii], state.tokens[oo], dr_i, dr_o, sub(dr_i, effective))
    return DemmState(state.tokens, tuple(reserves), state.weights), quote


def credit_fee(ledger: LpLedger, token: str, amount: Decimal) -> LpLedger:
    """Split ``amount`` of ``token`` among LP-``token`` holders pro rata.

    Shares are truncated; the rounding remainder goes to the largest holder so
    the pots always add up to ``amount``.
    """
    if amount < 0:
        raise PoolError("fee amount must be non-negative")
    if amount == 0:
        return ledger
    holders = ledger.holders(token)
    if not holders:
        raise PoolError(f"no holders of LP token {token}")
    supply = total(b for _, b in holders)
    pots = _copy(ledger.fee_pots)
    paid = ZERO
    for acct, bal in holders:
        share = muldiv(amount, bal, supply, rounding=ROUND_FLOOR)
        _credit(pots, acct, token, share)
        paid = add(paid, share)
    residual = sub(amount, paid)
    if residual:
        top = min(holders, key=lambda h: (neg(h[1]), h[0]))[0]
        _credit(pots, top, token, residual)
    return LpLedger(ledger.balances, pots)


def claim_fees(ledger: LpLedger, account: str, token: str) -> tuple[LpLedger, Decimal]:
    """Pay out and zero ``account``'s fee pot for ``token`` (zero if there is none)."""
    amount = ledger.fee_pot(account, token)
    if amount == 0:
        return ledger, ZERO
    pots = _copy(ledger.fee_pots)
    _credit(pots, account, token, neg(amount))
    return LpLedger(ledger.balances, pots), amount


def demm_provide(
    state: DemmState, ledger: LpLedger, provider: str, deposit: Amounts
) -> tuple[DemmState, LpLedger, tuple[Decimal, ...]]:
    """Deposit any mix of pooled tokens; coordinates with zero deposit are untouched."""
    amounts = _vector(state, deposit, "deposit")
    if any(a < 0 for a in amounts):
        raise PoolError("deposit amounts must be non-negative")
    if all(a == 0 for a in amounts):
        raise PoolError("deposit is empty")
    reserves, weights = list(state.reserves), list(state.weights)
    minted = [ZERO] * state.n
    balances = _copy(ledger.balances)
    for t, amount in enumerate(amounts):
        if amount == 0:
            continue
        minted[t] = muldiv(amount, weights[t], reserves[t], rounding=ROUND_FLOOR)
        reserves[t] = add(reserves[t], amount)
        weights[t] = add(weights[t], minted[t])
        _credit(balances, provider, state.tokens[t], minted[t])
    new_state = DemmState(state.tokens, tuple(reserves), tuple(weights))
    return new_state, LpLedger(balances, ledger.fee_pots), tuple(minted)


def demm_withdraw(
    state: DemmState, ledger: LpLedger, account: str, redeem: Amounts
) -> tuple[DemmState, LpLedger, tuple[Decimal, ...]]:
    """Burn LP tokens for their share of each reserve.

    The payout vector is aligned with ``state.tokens`` (the state passed in).
    Redeeming the whole supply of an LP token removes that token from the pool.
    """
    amounts = _vector(state, redeem, "redeem")
    if any(a < 0 for a in amounts):
        raise PoolError("redeem amounts must be non-negative")
    if all(a == 0 for a in amounts):
        raise PoolError("nothing to redeem")
    balances = _copy(ledger.balances)
    payout = [ZERO] * state.n
    keep: list[int] = []
    reserves, weights = list(state.reserves), list(state.weights)
    for t, dw in enumerate(amounts):
        token = state.tokens[t]
        if dw == 0:
            keep.append(t)
            continue
        if dw > ledger.balance(account, token):
            raise PoolError(f"{account} holds less than {dw} LP {token}")
        _credit(balances, account, token, neg(dw))
        if dw == weights[t]:
            payout[t] = reserves[t]
            continue
        payout[t] = muldiv(reserves[t], dw, weights[t], rounding=ROUND_FLOOR)
        reserves[t] = sub(reserves[t], payout[t])
        weights[t] = sub(weights[t], dw)
        if reserves[t] < POSITIVITY_FLOOR or weights[t] < POSITIVITY_FLOOR:
            raise PoolError(f"withdrawal would leave dust of {token} below the positivity floor")
        keep.append(t)
    new_state = DemmState(
        tuple(state.tokens[t] for t in keep),
        tuple(reserves[t] for t in keep),
        tuple(weights[t] for t in keep),
    )
    return new_state, LpLedger(balances, ledger.fee_pots), tuple(payout)


def demm_spot_price(state: DemmState, o: TokenRef, i: TokenRef) -> Decimal:
    """Marginal price of token ``o`` quoted in token ``i``."""
    oo, ii = state.index(o), state.index(i)
    if oo == ii:
        raise PoolError("spot price of a token against itself")
    return spot_price(state.reserves[oo], state.weights[oo], state.reserves[ii], state.weights[ii])


def add_token(
    state: DemmState,
    ledger: LpLedger,
    depositor: str,
    anchor: TokenRef,
    dr_anchor: Decimal,
    new_token: str,
    new_reserve: Decimal,
) -> tuple[DemmState, LpLedger]:
    """List ``new_token`` by depositing equal values of it and of an existing token.

    The depositor receives the same number of LP tokens of both kinds. Equal
    value of the two legs is the caller's responsibility.
    """
    t = state.index(anchor)
    dr_anchor, new_reserve = D(dr_anchor), D(new_reserve)
    if new_token in state.tokens:
        raise PoolError(f"token {new_token!r} is already in the pool")
    if dr_anchor <= 0 or new_reserve <= 0:
        raise PoolError("both legs of a listing must be positive")
    minted = muldiv(dr_anchor, state.weights[t], state.reserves[t], rounding=ROUND_FLOOR)
    if minted < POSITIVITY_FLOOR or new_reserve < POSITIVITY_FLOOR:
        raise PoolError("listing deposit is below the positivity floor")
    reserves, weights = list(state.reserves), list(state.weights)
    reserves[t] = add(reserves[t], dr_anchor)
    weights[t] = add(weights[t], minted)
    balances = _copy(ledger.balances)
    _credit(balances, depositor, state.tokens[t], minted)
    _credit(balances, depositor, new_token, minted)
    new_state = DemmState(
        state.tokens + (new_token,), tuple(reserves) + (new_reserve,), tuple(weights) + (minted,)
    )
    return new_state, LpLedger(balances, ledger.fee_pots)


def split_pool(
    state: DemmState, ledger: LpLedger, partition: tuple[Iterable[TokenRef], Iterable[TokenRef]]
) -> tuple[tuple[DemmState, LpLedger], tuple[DemmState, LpLedger]]:
    """Cut the pool in two; LP balances and fee pots follow their token."""
    part_a = {state.index(t) for t in partition[0]}
    part_b = {state.index(t) for t in partition[1]}
    if not part_a or not part_b or part_a & part_b or part_a | part_b != set(range(state.n)):
        raise PoolError("split needs two disjoint non-empty parts covering every token")

    def restrict(indices: set[int]) -> tuple[DemmState, LpLedger]:
        order = sorted(indices)
        names = {state.tokens[t] for t in order}
        child = DemmState(
            tuple(state.tokens[t] for t in order),
            tuple(state.reserves[t] for t in order),
            tuple(state.weights[t] for t in order),
        )

        def cut(table: Mapping[str, Mapping[str, Decimal]]) -> dict[str, dict[str, Decimal]]:
            out = {}
            for acct, row in table.items():
                kept = {tok: v for tok, v in row.items() if tok in names}
                if kept:
                    out[acct] = kept
            return out

        return child, LpLedger(cut(ledger.balances), cut(ledger.fee_pots))

    return restrict(part_a), restrict(part_b)


__all__ = [
    "FEE_FREE",
    "DemmState",
    "FeePolicy",
    "LpLedger",
    "PoolError",
    "TradeQuote",
    "add_token",
    "claim_fees",
    "credit_fee",
    "demm_init",
    "demm_provide",
    "demm_spot_price",
    "demm_trade",
    "demm_withdraw",
    "log_invariant",
    "split_pool",
]
