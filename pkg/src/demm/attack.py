"""Replay of the four-step liquidity-manipulation attack.

1. swap a large amount of token s for token t;
2. deposit a small amount of token t one-sidedly;
3. swap the remaining token t back for token s;
4. redeem the LP token t minted in step 2.

:func:`replay_flash_attack` runs the steps directly against a pool.
:func:`run_mitigated_attack` runs them through the block :class:`Engine` so
that delayed activation or TWAP minting can interfere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Mapping

from .core import DemmState, LpLedger, demm_provide, demm_trade, demm_withdraw
from .engine import Engine
from .market import PriceVector
from .numerics import ZERO, D, add, context, format_dec, sub
from .security import MintRejected

ATTACKER = "eve"


@dataclass(frozen=True)
class AttackStep:
    label: str
    reserves: tuple[Decimal, ...]
    weights: tuple[Decimal, ...]
    detail: Mapping[str, Decimal] = field(default_factory=dict)


@dataclass(frozen=True)
class AttackReport:
    mitigation: str
    tokens: tuple[str, ...]
    steps: tuple[AttackStep, ...]
    profit: Mapping[str, Decimal]
    aborted: bool = False
    note: str = ""
    prices: Mapping[str, Decimal] | None = None

    @property
    def profit_value(self) -> Decimal | None:
        """Net profit in dollars at the attack-time prices, if known."""
        if self.prices is None:
            return None
        ctx = context()
        acc = ZERO
        for t, v in self.profit.items():
            acc = ctx.add(acc, ctx.multiply(v, self.prices[t]))
        return acc

    def to_json(self) -> dict:
        out = {
            "mitigation": self.mitigation,
            "tokens": list(self.tokens),
            "aborted": self.aborted,
            "note": self.note,
            "steps": [
                {
                    "label": s.label,
                    "reserves": [format_dec(r) for r in s.reserves],
                    "weights": [format_dec(w) for w in s.weights],
                    "detail": {k: format_dec(v) for k, v in s.detail.items()},
                }
                for s in self.steps
            ],
            "profit": {t: format_dec(v) for t, v in self.profit.items()},
        }
        if self.prices is not None:
            out["prices"] = {t: format_dec(v) for t, v in self.prices.items()}
            out["profit_value"] = format_dec(self.profit_value)
        return out


def _step(label: str, state: DemmState, **detail: Decimal) -> AttackStep:
    return AttackStep(label, state.reserves, state.weights, detail)


def replay_flash_attack(
    state: DemmState,
    endowment: Decimal,
    deposit: Decimal = Decimal(1),
    ledger: LpLedger | None = None,
    frozen_invariant: bool = False,
    prices: Mapping[str, Decimal] | None = None,
) -> AttackReport:
    """Run the attack with ``endowment`` of the first pooled token against ``state``.

    With ``frozen_invariant`` the exponent used for pricing stays at its
    pre-attack value, as if the pool were a fixed-weight market maker; the LP
    accounting still follows the dynamic rules.
    """
    if state.n != 2:
        raise ValueError("the attack replay uses a two-token pool")
    s, t = state.tokens
    endowment, deposit = D(endowment), D(deposit)
    mitigation = "frozen-invariant" if frozen_invariant else "none"
    if endowment == 0:
        return AttackReport(mitigation, state.tokens, (), {s: ZERO, t: ZERO}, prices=prices)
    if ledger is None:
        ledger = LpLedger({"genesis": dict(zip(state.tokens, state.weights))})
    pricing = state.weights
    steps = []

    state, q1 = demm_trade(state, s, t, endowment)
    steps.append(_step("swap", state, amount_in=endowment, amount_out=q1.dr_o))
    if q1.dr_o <= deposit:
        return AttackReport(
            mitigation, state.tokens, tuple(steps), {s: -endowment, t: q1.dr_o},
            aborted=True, note="step 1 yields too little token t", prices=prices,
        )
    state, ledger, minted = demm_provide(state, ledger, ATTACKER, {t: deposit})
    steps.append(_step("provide", state, deposit=deposit, minted=minted[1]))

    swap_back = sub(q1.dr_o, deposit)
    priced = DemmState(state.tokens, state.reserves, pricing) if frozen_invariant else state
    after, q3 = demm_trade(priced, t, s, swap_back)
    state = DemmState(state.tokens, after.reserves, state.weights)
    steps.append(_step("swap back", state, amount_in=swap_back, amount_out=q3.dr_o))

    state, ledger, payout = demm_withdraw(state, ledger, ATTACKER, {t: minted[1]})
    steps.append(_step("redeem", state, redeemed=minted[1], amount_out=payout[1]))

    profit = {s: sub(q3.dr_o, endowment), t: payout[1]}
    return AttackReport(mitigation, state.tokens, tuple(steps), profit, prices=prices)


def _engine_step(label: str, eng: Engine, **detail: Decimal) -> AttackStep:
    return _step(label, eng.state, **detail)


def run_mitigated_attack(
    state: DemmState,
    endowment: Decimal,
    prices: Mapping[str, Decimal],
    mitigation: str = "none",
    deposit: Decimal = Decimal(1),
    delay: tuple[int, int] = (1, 1),
    twap_k: int = 1,
    seed: int = 0,
    ledger: LpLedger | None = None,
) -> AttackReport:
    """Replay the attack inside the block engine under a mitigation.

    * ``none``: all four steps in one block.
    * ``twap``: the deposit uses TWAP minting; the pool's pre-attack block is
      in the window. If minting is rejected the attacker swaps back and stops.
    * ``delay``: the deposit is held for ``delay`` blocks; an arbitrageur
      restores external prices at the end of every block while it is held.
      The attacker finishes steps 3 and 4 in the activation block.
    """
    if mitigation not in ("none", "delay", "twap"):
        raise ValueError(f"unknown mitigation {mitigation!r}")
    if state.n != 2:
        raise ValueError("the attack replay uses a two-token pool")
    s, t = state.tokens
    endowment, deposit = D(endowment), D(deposit)
    prices = PriceVector(prices)
    eng = Engine(seed=seed, delay=delay if mitigation == "delay" else (0, 0), twap_k=twap_k)
    eng.begin_block()
    eng.load_demm(state, ledger or LpLedger({"genesis": dict(zip(state.tokens, state.weights))}))
    eng.set_prices(prices)
    eng.begin_block()
    steps: list[AttackStep] = []

    def result(aborted: bool = False, note: str = "") -> AttackReport:
        wallet = eng.wallet(ATTACKER)
        profit = {tok: wallet.get(tok, ZERO) for tok in (s, t)}
        return AttackReport(mitigation, (s, t), tuple(steps), profit, aborted, note, prices)

    if endowment == 0:
        return result()
    q1 = eng.trade(ATTACKER, s, t, endowment)
    steps.append(_engine_step("swap", eng, amount_in=endowment, amount_out=q1.dr_o))
    if q1.dr_o <= deposit:
        return result(True, "step 1 yields too little token t")

    if mitigation == "twap":
        try:
            minted = eng.twap_provide(ATTACKER, {t: deposit})[t]
        except MintRejected as exc:
            back = eng.trade(ATTACKER, t, s, q1.dr_o)
            steps.append(_engine_step("unwind", eng, amount_in=q1.dr_o, amount_out=back.dr_o))
            return result(True, f"deposit rejected: {exc}")
        steps.append(_engine_step("provide", eng, deposit=deposit, minted=minted))
    elif mitigation == "delay":
        seen = len(eng.activations)
        item = eng.provide_delayed(ATTACKER, {t: deposit})
        steps.append(_engine_step("submit", eng, deposit=deposit, activation_height=Decimal(item.activation_height)))
        while len(eng.activations) == seen:
            flows = eng.arbitrage()
            steps.append(_engine_step("arbitrage", eng, **{f"flow_{k}": v for k, v in flows.items()}))
            eng.begin_block()
        act = eng.activations[-1]
        if act.refunded:
            back = eng.trade(ATTACKER, t, s, q1.dr_o)
            steps.append(_engine_step("unwind", eng, amount_in=q1.dr_o, amount_out=back.dr_o))
            return result(True, f"deposit refunded: {act.error}")
        minted = act.minted[t]
        steps.append(_engine_step("activate", eng, minted=minted))
    else:
        minted = eng.provide(ATTACKER, {t: deposit})[t]
        steps.append(_engine_step("provide", eng, deposit=deposit, minted=minted))

    swap_back = sub(q1.dr_o, deposit)
    q3 = eng.trade(ATTACKER, t, s, swap_back)
    steps.append(_engine_step("swap back", eng, amount_in=swap_back, amount_out=q3.dr_o))
    payout = eng.withdraw(ATTACKER, {t: minted})
    steps.append(_engine_step("redeem", eng, redeemed=minted, amount_out=payout.get(t, ZERO)))
    return result()


def attack_holdings(report: AttackReport, endowment: Decimal) -> dict[str, Decimal]:
    """Attacker's final token holdings given the starting endowment of token s."""
    s = report.tokens[0]
    return {tok: add(v, D(endowment)) if tok == s else v for tok, v in report.profit.items()}
