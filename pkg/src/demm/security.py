"""Countermeasures against liquidity-provision manipulation.

Two guards are offered against an attacker who skews the pool and deposits
into the skewed state within one block:

* delayed activation: a deposit waits a random number of blocks before it is
  priced into the pool, giving arbitrageurs time to repair the state;
* TWAP minting: LP tokens are minted against the geometric mean of the
  per-block ``w_t / r_t`` ratios instead of the instantaneous one.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from decimal import ROUND_FLOOR, Decimal
from typing import TYPE_CHECKING, Deque, Mapping

from .core import Amounts, DemmState, LpLedger, _copy, _credit, _vector
from .cpmm import PoolError
from .numerics import ZERO, add, context, geo_mean, mul, sub

if TYPE_CHECKING:
    from .engine import Engine


class MintRejected(PoolError):
    """TWAP minting would issue a non-positive number of LP tokens."""


@dataclass(frozen=True)
class BlockSnapshot:
    height: int
    tokens: tuple[str, ...]
    reserves: tuple[Decimal, ...]
    weights: tuple[Decimal, ...]


@dataclass
class BlockClock:
    """Block height plus the pool state recorded at the start of each block."""

    height: int = -1
    snapshots: list[BlockSnapshot] = field(default_factory=list)

    def advance(self) -> int:
        self.height += 1
        return self.height

    def record(self, state: DemmState) -> BlockSnapshot:
        if self.snapshots and self.snapshots[-1].height == self.height:
            return self.snapshots[-1]
        snap = BlockSnapshot(self.height, state.tokens, state.reserves, state.weights)
        self.snapshots.append(snap)
        return snap


class TwapWindow:
    """The last ``k + 1`` block-start ratios ``w_t / r_t`` for every token."""

    def __init__(self, k: int) -> None:
        if k < 0:
            raise ValueError("window length must be non-negative")
        self.k = k
        self.buffer: Deque[dict[str, Decimal]] = deque(maxlen=k + 1)

    def push(self, state: DemmState) -> None:
        ctx = context()
        self.buffer.append(
            {t: ctx.divide(w, r) for t, r, w in zip(state.tokens, state.reserves, state.weights)}
        )

    def ratios(self, token: str) -> list[Decimal]:
        # history shorter than k blocks (or a recently listed token) uses what exists
        return [snap[token] for snap in self.buffer if token in snap]

    def __len__(self) -> int:
        return len(self.buffer)


def twap_mint_quote(window: TwapWindow, state: DemmState, deposit: Amounts) -> tuple[Decimal, ...]:
    """LP tokens minted under the time-averaged rule ``w'_t = (r_t + dr_t) * G_t``.

    ``G_t`` is the geometric mean of the buffered ratios for token ``t``.
    Raises :class:`MintRejected` if any deposited coordinate would mint
    nothing or less.
    """
    if len(window) == 0:
        raise PoolError("TWAP window is empty")
    amounts = _vector(state, deposit, "deposit")
    if any(a < 0 for a in amounts) or all(a == 0 for a in amounts):
        raise PoolError("deposit must be non-negative and not empty")
    minted = [ZERO] * state.n
    for t, amount in enumerate(amounts):
        if amount == 0:
            continue
        token = state.tokens[t]
        history = window.ratios(token)
        if not history:
            raise PoolError(f"no TWAP history for {token}")
        g = geo_mean(history)
        proposed = mul(add(state.reserves[t], amount), g, rounding=ROUND_FLOOR)
        minted[t] = sub(proposed, state.weights[t])
        if minted[t] <= 0:
            raise MintRejected(
                f"TWAP mint for {token} is {minted[t]} (proposed weight {proposed} vs {state.weights[t]})"
            )
    return tuple(minted)


def twap_provide(
    window: TwapWindow, state: DemmState, ledger: LpLedger, provider: str, deposit: Amounts
) -> tuple[DemmState, LpLedger, tuple[Decimal, ...]]:
    """Apply a deposit minted by :func:`twap_mint_quote`."""
    minted = twap_mint_quote(window, state, deposit)
    amounts = _vector(state, deposit, "deposit")
    reserves, weights = list(state.reserves), list(state.weights)
    balances = _copy(ledger.balances)
    for t, amount in enumerate(amounts):
        if amount == 0:
            continue
        reserves[t] = add(reserves[t], amount)
        weights[t] = add(weights[t], minted[t])
        _credit(balances, provider, state.tokens[t], minted[t])
    return (
        DemmState(state.tokens, tuple(reserves), tuple(weights)),
        LpLedger(balances, ledger.fee_pots),
        minted,
    )


@dataclass(frozen=True)
class PendingDeposit:
    provider: str
    deposit: Mapping[str, Decimal]
    submit_height: int
    activation_height: int
    seq: int


@dataclass
class DelayQueue:
    """Deposits on hold; those due at the same height leave in submission order."""

    d_min: int = 0
    d_max: int = 0
    pending: list[PendingDeposit] = field(default_factory=list)
    _seq: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.d_min <= self.d_max:
            raise ValueError("delay range must satisfy 0 <= d_min <= d_max")

    def submit(
        self, provider: str, deposit: Mapping[str, Decimal], height: int, rng: random.Random
    ) -> PendingDeposit:
        delay = rng.randint(self.d_min, self.d_max)
        item = PendingDeposit(provider, dict(deposit), height, height + delay, self._seq)
        self._seq += 1
        self.pending.append(item)
        return item

    def due(self, height: int) -> list[PendingDeposit]:
        ready = sorted(
            (p for p in self.pending if p.activation_height <= height),
            key=lambda p: (p.activation_height, p.seq),
        )
        self.pending = [p for p in self.pending if p.activation_height > height]
        return ready

    def held(self) -> dict[str, Decimal]:
        out: dict[str, Decimal] = {}
        for p in self.pending:
            for token, amount in p.deposit.items():
                out[token] = add(out.get(token, ZERO), amount)
        return out


def provide_delayed(
    engine: "Engine", provider: str, deposit: Mapping[str, Decimal], rng: random.Random | None = None
) -> PendingDeposit:
    """Submit a deposit through ``engine``'s delay queue.

    With a zero delay the deposit is applied immediately, exactly like a plain
    provide.
    """
    return engine.provide_delayed(provider, deposit, rng=rng)


__all__ = [
    "BlockClock",
    "BlockSnapshot",
    "DelayQueue",
    "MintRejected",
    "PendingDeposit",
    "TwapWindow",
    "provide_delayed",
    "twap_mint_quote",
    "twap_provide",
]
