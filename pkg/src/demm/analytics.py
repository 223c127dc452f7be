"""Position accounting, impermanent loss/gain and figure data."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from decimal import Decimal
from typing import IO, Iterable, Mapping, Sequence

from .core import Amounts, DemmState, LpLedger, TradeQuote, demm_trade
from .cpmm import CpmmState, PoolError
from .market import PriceVector, Prices, price_list, cpmm_equilibrium, demm_equilibrium
from .numerics import ONE, ZERO, D, context, exp_d, format_dec, ln_d, muldiv, sub


@dataclass(frozen=True)
class PositionReport:
    account: str
    entitled: tuple[Decimal, ...]
    pool_value: Decimal
    hold_value: Decimal
    il_abs: Decimal
    il_rel: Decimal


def _basis(state: DemmState, basis: Amounts) -> list[Decimal]:
    if isinstance(basis, Mapping):
        return [D(basis.get(t, ZERO)) for t in state.tokens]
    if len(basis) != state.n:
        raise PoolError("hold basis must have one entry per pooled token")
    return [D(b) for b in basis]


def _value(amounts: Sequence[Decimal], prices: Sequence[Decimal]) -> Decimal:
    ctx = context(extra=10)
    acc = ZERO
    for a, p in zip(amounts, prices):
        acc = ctx.add(acc, ctx.multiply(a, p))
    return context().plus(acc)


def _report(account: str, entitled: tuple[Decimal, ...], basis: list[Decimal], p: list[Decimal]) -> PositionReport:
    pool_value = _value(entitled, p)
    hold_value = _value(basis, p)
    if hold_value <= 0:
        raise PoolError(f"hold basis of {account} has no value")
    return PositionReport(
        account,
        entitled,
        pool_value,
        hold_value,
        sub(pool_value, hold_value),
        context().divide(pool_value, hold_value),
    )


def entitlement(state: DemmState, ledger: LpLedger, account: str) -> tuple[Decimal, ...]:
    """Tokens ``account`` would receive by redeeming every LP token it holds."""
    return tuple(
        muldiv(r, ledger.balance(account, t), w) for t, r, w in zip(state.tokens, state.reserves, state.weights)
    )


def position(
    state: DemmState, ledger: LpLedger, account: str, prices: Prices, hold_basis: Amounts
) -> PositionReport:
    if account not in ledger.balances:
        raise PoolError(f"unknown account {account!r}")
    p = price_list(state.tokens, prices)
    return _report(account, entitlement(state, ledger, account), _basis(state, hold_basis), p)


def pool_position(state: DemmState, prices: Prices, hold_basis: Amounts) -> PositionReport:
    """Whole-pool report: the entitlement is the full reserve vector."""
    p = price_list(state.tokens, prices)
    return _report("pool", state.reserves, _basis(state, hold_basis), p)


def cpmm_counterpart(basis: Sequence[Decimal], base_prices: Sequence[Decimal]) -> tuple[list[int], CpmmState]:
    """Fixed-weight pool holding ``basis`` with weights equal to its value shares.

    Zero coordinates are dropped; returns the kept token indices and the pool.
    """
    keep = [k for k, b in enumerate(basis) if b > 0]
    if len(keep) < 2:
        raise PoolError("a counterpart pool needs at least two deposited tokens")
    reserves = tuple(basis[k] for k in keep)
    weights = tuple(context().multiply(basis[k], base_prices[k]) for k in keep)
    return keep, CpmmState(reserves, weights, ONE)


def cpmm_counterpart_ratio(
    basis: Sequence[Decimal], base_prices: Sequence[Decimal], prices: Sequence[Decimal]
) -> Decimal:
    """Pool value over hold value for the fixed-weight alternative of ``basis``."""
    if sum(1 for b in basis if b > 0) == 1:
        return ONE  # a single-token deposit in its own pool is just holding
    keep, pool = cpmm_counterpart(basis, base_prices)
    at = [prices[k] for k in keep]
    moved = cpmm_equilibrium(pool, at)
    return context().divide(_value(moved.reserves, at), _value(pool.reserves, at))


def log_grid(lo: Decimal, hi: Decimal, n: int) -> list[Decimal]:
    """``n`` log-spaced points from ``lo`` to ``hi`` inclusive."""
    lo, hi = D(lo), D(hi)
    if n < 1 or lo <= 0 or hi < lo:
        raise PoolError("grid needs n >= 1 and 0 < lo <= hi")
    if n == 1:
        return [lo]
    a, b = ln_d(lo), ln_d(hi)
    ctx = context(extra=20)
    step = ctx.divide(ctx.subtract(b, a), n - 1)
    out = []
    for k in range(n):
        y = ctx.add(a, ctx.multiply(step, k))
        out.append(context().plus(exp_d(y)))
    out[0], out[-1] = lo, hi
    return out


def price_grid(base: Prices, token: str, factors: Iterable[Decimal]) -> list[PriceVector]:
    """Price vectors with ``token`` scaled by each factor, others held at ``base``."""
    base = PriceVector(base)
    return [base.scaled(token, f) for f in factors]


def il_curve(
    state: DemmState,
    ledger: LpLedger,
    price_grid: Sequence[Prices],
    holders: Mapping[str, Amounts],
    base_prices: Prices,
    token: str | None = None,
    pool_basis: Amounts | None = None,
    cpmm: bool = True,
) -> list[dict[str, Decimal]]:
    """Relative impermanent loss/gain (pool value / hold value) along a price grid.

    ``state`` is the deposit-time pool; each grid point re-equilibrates it.
    Columns: ``rel_price``, ``pool_il``, then ``<account>_il`` and, with
    ``cpmm``, ``<account>_cpmm_il`` for a fixed-weight pool with the account's
    own value weights.
    """
    if not price_grid:
        raise PoolError("price grid is empty")
    token = token or state.tokens[-1]
    k = state.index(token)
    ref = next(t for t in range(state.n) if t != k)
    base = price_list(state.tokens, base_prices)
    base_rel = context().divide(base[k], base[ref])
    pool_basis = _basis(state, pool_basis) if pool_basis is not None else list(state.reserves)
    bases = {acct: _basis(state, b) for acct, b in holders.items()}
    rows = []
    for prices in price_grid:
        p = price_list(state.tokens, prices)
        moved = demm_equilibrium(state, prices)
        row = {
            "rel_price": context().divide(context().divide(p[k], p[ref]), base_rel),
            "pool_il": pool_position(moved, prices, pool_basis).il_rel,
        }
        for acct, b in bases.items():
            row[f"{acct}_il"] = position(moved, ledger, acct, prices, b).il_rel
            if cpmm:
                row[f"{acct}_cpmm_il"] = cpmm_counterpart_ratio(b, base, p)
        rows.append(row)
    return rows


def trade_curve(
    states: Mapping[str, DemmState],
    token_in: str,
    token_out: str,
    sizes: Iterable[Decimal],
    prices: Prices | None = None,
) -> list[dict[str, Decimal]]:
    """Output of swapping each size of ``token_in`` at every named state.

    With ``prices`` a ``market`` column gives the output at the external rate.
    """
    rows = []
    for size in sizes:
        row: dict[str, Decimal] = {"amount_in": D(size)}
        if prices is not None:
            row["market"] = muldiv(D(size), D(prices[token_in]), D(prices[token_out]))
        for name, st in states.items():
            quote: TradeQuote = demm_trade(st, token_in, token_out, size)[1]
            row[name] = quote.dr_o
        rows.append(row)
    return rows


def allocation(state: DemmState, ledger: LpLedger, prices: Prices) -> list[dict[str, object]]:
    """Per-account, per-token entitlement and its dollar value."""
    p = price_list(state.tokens, prices)
    rows = []
    for acct in sorted(ledger.balances):
        for t, amount in zip(state.tokens, entitlement(state, ledger, acct)):
            if amount:
                rows.append(
                    {"account": acct, "token": t, "amount": amount, "value": context().multiply(amount, p[state.index(t)])}
                )
    return rows


def write_csv(rows: Sequence[Mapping[str, object]], out: IO[str]) -> None:
    """Write rows with a header; Decimal cells use the canonical string form."""
    if not rows:
        raise PoolError("nothing to write")
    writer = csv.writer(out, lineterminator="\n")
    header = list(rows[0])
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_dec(v) if isinstance(v, Decimal) else v for v in (row[h] for h in header)])
