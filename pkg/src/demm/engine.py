"""Block-structured simulation engine.

The engine owns one pool (DEMM or fixed-weight CPMM), its LP ledger, the
external price vector and a wallet per account. Wallets record net token
flows, so they start at zero and go negative on deposits; together with the
reserves, fee pots, held deposits and detached pools they always sum to zero
per token.

Events are applied strictly in order. ``begin_block`` advances the clock,
records the block-start snapshot used by TWAP minting, and then activates
any delayed deposits that have come due.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping, Sequence

from . import core
from .core import FEE_FREE, DemmState, FeePolicy, LpLedger, TradeQuote
from .cpmm import CpmmState, PoolError, cpmm_init, cpmm_provide, cpmm_trade, cpmm_withdraw
from .market import PriceVector, cpmm_equilibrium, demm_equilibrium
from .numerics import ZERO, D, add, neg, sub
from .security import BlockClock, DelayQueue, PendingDeposit, TwapWindow, twap_provide

log = logging.getLogger(__name__)

ARBITRAGEUR = "arbitrageur"


@dataclass
class Activation:
    """Outcome of a delayed deposit reaching its activation height."""

    pending: PendingDeposit
    minted: dict[str, Decimal] = field(default_factory=dict)
    refunded: bool = False
    error: str | None = None


class Engine:
    def __init__(
        self,
        fee: FeePolicy = FEE_FREE,
        seed: int = 0,
        delay: tuple[int, int] = (0, 0),
        twap_k: int = 1,
    ) -> None:
        self.fee = fee
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = BlockClock()
        self.window = TwapWindow(twap_k)
        self.queue = DelayQueue(*delay)
        self.model: str | None = None
        self.state: DemmState | None = None
        self.ledger = LpLedger()
        self.cpmm: CpmmState | None = None
        self.cpmm_tokens: tuple[str, ...] = ()
        self.cpmm_lp: dict[str, Decimal] = {}
        self.prices: PriceVector | None = None
        self.wallets: dict[str, dict[str, Decimal]] = {}
        self.basis: dict[str, dict[str, Decimal]] = {}
        self.detached: list[tuple[DemmState, LpLedger]] = []
        self.activations: list[Activation] = []

    # -- bookkeeping -------------------------------------------------------

    @property
    def tokens(self) -> tuple[str, ...]:
        if self.model == "cpmm":
            return self.cpmm_tokens
        return self.state.tokens if self.state is not None else ()

    def _flow(self, account: str, token: str, amount: Decimal) -> None:
        row = self.wallets.setdefault(account, {})
        row[token] = add(row.get(token, ZERO), amount)

    def _deposited(self, account: str, token: str, amount: Decimal) -> None:
        self._flow(account, token, neg(amount))
        row = self.basis.setdefault(account, {})
        row[token] = add(row.get(token, ZERO), amount)

    def wallet(self, account: str) -> dict[str, Decimal]:
        return dict(self.wallets.get(account, {}))

    def _demm(self) -> DemmState:
        if self.model != "demm" or self.state is None:
            raise PoolError("no DEMM pool is initialised")
        return self.state

    def _cpmm(self) -> CpmmState:
        if self.model != "cpmm" or self.cpmm is None:
            raise PoolError("no CPMM pool is initialised")
        return self.cpmm

    def conservation_residual(self) -> dict[str, Decimal]:
        """Per-token sum of reserves, fee pots, holds and wallets (zero when conserved)."""
        out: dict[str, Decimal] = {}

        def put(token: str, amount: Decimal) -> None:
            out[token] = add(out.get(token, ZERO), amount)

        if self.model == "demm" and self.state is not None:
            for t, r in zip(self.state.tokens, self.state.reserves):
                put(t, r)
        if self.model == "cpmm" and self.cpmm is not None:
            for t, r in zip(self.cpmm_tokens, self.cpmm.reserves):
                put(t, r)
        for st, led in self.detached:
            for t, r in zip(st.tokens, st.reserves):
                put(t, r)
            for row in led.fee_pots.values():
                for t, v in row.items():
                    put(t, v)
        for row in self.ledger.fee_pots.values():
            for t, v in row.items():
                put(t, v)
        for t, v in self.queue.held().items():
            put(t, v)
        for row in self.wallets.values():
            for t, v in row.items():
                put(t, v)
        return out

    # -- clock -------------------------------------------------------------

    def begin_block(self) -> list[Activation]:
        height = self.clock.advance()
        if self.model == "demm" and self.state is not None:
            self._snapshot()
        done = []
        for item in self.queue.due(height):
            done.append(self._activate(item))
        return done

    def _snapshot(self) -> None:
        state = self._demm()
        before = len(self.clock.snapshots)
        self.clock.record(state)
        if len(self.clock.snapshots) > before:
            self.window.push(state)

    def _activate(self, item: PendingDeposit) -> Activation:
        try:
            state, ledger, minted = core.demm_provide(self._demm(), self.ledger, item.provider, item.deposit)
        except PoolError as exc:
            log.info("delayed deposit of %s refunded: %s", item.provider, exc)
            for token, amount in item.deposit.items():
                self._flow(item.provider, token, amount)
            result = Activation(item, refunded=True, error=str(exc))
        else:
            self.state, self.ledger = state, ledger
            for token, amount in item.deposit.items():
                row = self.basis.setdefault(item.provider, {})
                row[token] = add(row.get(token, ZERO), amount)
            result = Activation(item, minted={t: m for t, m in zip(state.tokens, minted) if m})
        self.activations.append(result)
        return result

    # -- pool lifecycle ----------------------------------------------------

    def init_demm(self, tokens: Sequence[str], reserves: Sequence[Decimal], account: str) -> None:
        if self.model is not None:
            raise PoolError("pool already initialised")
        self.state, self.ledger = core.demm_init(tokens, reserves, account)
        self.model = "demm"
        for t, r in zip(self.state.tokens, self.state.reserves):
            self._deposited(account, t, r)
        self._snapshot()

    def load_demm(self, state: DemmState, ledger: LpLedger) -> None:
        """Adopt an existing pool; its reserves are booked against a ``genesis`` wallet."""
        if self.model is not None:
            raise PoolError("pool already initialised")
        self.model, self.state, self.ledger = "demm", state, ledger
        for t, r in zip(state.tokens, state.reserves):
            self._flow("genesis", t, -r)
        for row in ledger.fee_pots.values():
            for t, v in row.items():
                self._flow("genesis", t, -v)
        self._snapshot()

    def init_cpmm(
        self,
        tokens: Sequence[str],
        reserves: Sequence[Decimal],
        weights: Sequence[Decimal],
        initial_lp: Decimal,
        account: str,
    ) -> None:
        if self.model is not None:
            raise PoolError("pool already initialised")
        if len(set(tokens)) != len(tokens) or len(tokens) != len(reserves):
            raise PoolError("token ids must be unique and match the reserves")
        self.cpmm = cpmm_init(reserves, weights, initial_lp)
        self.cpmm_tokens = tuple(tokens)
        self.cpmm_lp = {account: self.cpmm.lp_supply}
        self.model = "cpmm"
        for t, r in zip(self.cpmm_tokens, self.cpmm.reserves):
            self._deposited(account, t, r)

    def load_cpmm(self, tokens: Sequence[str], state: CpmmState, lp: Mapping[str, Decimal]) -> None:
        if self.model is not None:
            raise PoolError("pool already initialised")
        self.model, self.cpmm, self.cpmm_tokens, self.cpmm_lp = "cpmm", state, tuple(tokens), dict(lp)
        for t, r in zip(self.cpmm_tokens, state.reserves):
            self._flow("genesis", t, -r)

    def _cpmm_index(self, token: str | int) -> int:
        if isinstance(token, int):
            return token
        try:
            return self.cpmm_tokens.index(token)
        except ValueError:
            raise PoolError(f"token {token!r} is not in the pool") from None

    # -- user operations ---------------------------------------------------

    def trade(self, account: str, token_in: str, token_out: str, amount: Decimal) -> TradeQuote:
        amount = D(amount)
        if self.model == "cpmm":
            i, o = self._cpmm_index(token_in), self._cpmm_index(token_out)
            self.cpmm, out = cpmm_trade(self._cpmm(), i, o, amount)
            quote = TradeQuote(self.cpmm_tokens[i], self.cpmm_tokens[o], amount, out, ZERO)
        else:
            self.state, quote = core.demm_trade(self._demm(), token_in, token_out, amount, self.fee)
            if quote.fee_charged:
                self.ledger = core.credit_fee(self.ledger, quote.token_in, quote.fee_charged)
        self._flow(account, quote.token_in, neg(amount))
        self._flow(account, quote.token_out, quote.dr_o)
        return quote

    def provide(self, account: str, deposit: Mapping[str, Decimal]) -> dict[str, Decimal]:
        state = self._demm()
        self.state, self.ledger, minted = core.demm_provide(state, self.ledger, account, deposit)
        for token, amount in deposit.items():
            if amount:
                self._deposited(account, token, D(amount))
        return {t: m for t, m in zip(state.tokens, minted) if m}

    def provide_cpmm(self, account: str, alpha: Decimal) -> tuple[Decimal, dict[str, Decimal]]:
        self.cpmm, minted, deposit = cpmm_provide(self._cpmm(), alpha)
        for t, d in zip(self.cpmm_tokens, deposit):
            self._deposited(account, t, d)
        self.cpmm_lp[account] = add(self.cpmm_lp.get(account, ZERO), minted)
        return minted, dict(zip(self.cpmm_tokens, deposit))

    def provide_delayed(
        self, account: str, deposit: Mapping[str, Decimal], rng: random.Random | None = None
    ) -> PendingDeposit:
        self._demm()
        deposit = {t: D(a) for t, a in deposit.items() if D(a)}
        if not deposit:
            raise PoolError("deposit is empty")
        item = self.queue.submit(account, deposit, self.clock.height, rng or self.rng)
        for token, amount in deposit.items():
            self._flow(account, token, neg(amount))
        if item.activation_height <= self.clock.height:
            for due in self.queue.due(self.clock.height):
                self._activate(due)
        return item

    def twap_provide(self, account: str, deposit: Mapping[str, Decimal]) -> dict[str, Decimal]:
        state = self._demm()
        self.state, self.ledger, minted = twap_provide(self.window, state, self.ledger, account, deposit)
        for token, amount in deposit.items():
            if amount:
                self._deposited(account, token, D(amount))
        return {t: m for t, m in zip(state.tokens, minted) if m}

    def withdraw(self, account: str, redeem: Mapping[str, Decimal | str]) -> dict[str, Decimal]:
        state = self._demm()
        amounts = {
            t: self.ledger.balance(account, t) if a == "all" else D(a) for t, a in redeem.items()
        }
        self.state, self.ledger, payout = core.demm_withdraw(state, self.ledger, account, amounts)
        out = {}
        for t, p in zip(state.tokens, payout):
            if p:
                self._flow(account, t, p)
                out[t] = p
        return out

    def withdraw_cpmm(self, account: str, alpha: Decimal) -> dict[str, Decimal]:
        state = self._cpmm()
        new_state, payout, burned = cpmm_withdraw(state, alpha)
        held = self.cpmm_lp.get(account, ZERO)
        if burned > held:
            raise PoolError(f"{account} holds {held} LP, redemption needs {burned}")
        self.cpmm = new_state
        self.cpmm_lp[account] = sub(held, burned)
        if not self.cpmm_lp[account]:
            del self.cpmm_lp[account]
        for t, p in zip(self.cpmm_tokens, payout):
            self._flow(account, t, p)
        return dict(zip(self.cpmm_tokens, payout))

    def claim_fees(self, account: str, token: str) -> Decimal:
        self.ledger, amount = core.claim_fees(self.ledger, account, token)
        if amount:
            self._flow(account, token, amount)
        return amount

    def set_prices(self, prices: Mapping[str, Decimal]) -> None:
        merged = dict(self.prices.prices) if self.prices is not None else {}
        merged.update({t: D(p) for t, p in prices.items()})
        self.prices = PriceVector(merged)

    def arbitrage(self, account: str = ARBITRAGEUR) -> dict[str, Decimal]:
        """Move the pool to the no-arbitrage state; ``account`` books the flows."""
        if self.prices is None:
            raise PoolError("arbitrage needs external prices")
        if self.model == "cpmm":
            old = self._cpmm()
            self.cpmm = cpmm_equilibrium(old, [self.prices[t] for t in self.cpmm_tokens])
            pairs = zip(self.cpmm_tokens, old.reserves, self.cpmm.reserves)
        else:
            old_d = self._demm()
            self.state = demm_equilibrium(old_d, self.prices)
            pairs = zip(old_d.tokens, old_d.reserves, self.state.reserves)
        flows = {}
        for t, before, after in pairs:
            flows[t] = sub(before, after)
            self._flow(account, t, flows[t])
        return flows

    def add_token(
        self,
        account: str,
        anchor: str,
        amount: Decimal,
        new_token: str,
        new_reserve: Decimal,
        governance: bool,
    ) -> Decimal:
        if not governance:
            raise PoolError("adding a token requires governance approval")
        state = self._demm()
        self.state, self.ledger = core.add_token(
            state, self.ledger, account, anchor, amount, new_token, new_reserve
        )
        self._deposited(account, anchor, D(amount))
        self._deposited(account, new_token, D(new_reserve))
        return self.state.weights[-1]

    def split_pool(
        self, parts: tuple[Sequence[str], Sequence[str]], governance: bool, keep: int = 0
    ) -> tuple[DemmState, LpLedger]:
        """Split the pool; the engine continues with part ``keep`` and detaches the other."""
        if not governance:
            raise PoolError("splitting the pool requires governance approval")
        first, second = core.split_pool(self._demm(), self.ledger, parts)
        kept, other = (first, second) if keep == 0 else (second, first)
        self.state, self.ledger = kept
        self.detached.append(other)
        return other
