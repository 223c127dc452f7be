"""Dynamic exponent market maker: pool maths, simulation engine and tooling."""

from __future__ import annotations

from .analytics import PositionReport, entitlement, il_curve, pool_position, position
from .attack import AttackReport, replay_flash_attack, run_mitigated_attack
from .core import (
    FEE_FREE,
    DemmState,
    FeePolicy,
    LpLedger,
    TradeQuote,
    add_token,
    claim_fees,
    demm_init,
    demm_provide,
    demm_spot_price,
    demm_trade,
    demm_withdraw,
    log_invariant,
    split_pool,
)
from .cpmm import CpmmState, PoolError, cpmm_init, cpmm_provide, cpmm_spot_price, cpmm_trade, cpmm_withdraw
from .engine import Engine
from .market import PriceVector, arbitrage_oracle, cpmm_equilibrium, demm_equilibrium
from .persistence import IntegrityError, restore, snapshot
from .scenario import ScenarioAssertionError, ScenarioError, parse_scenario, run_scenario
from .security import MintRejected, TwapWindow, provide_delayed, twap_mint_quote

__version__ = "0.1.0"

__all__ = [
    "AttackReport",
    "CpmmState",
    "DemmState",
    "Engine",
    "FEE_FREE",
    "FeePolicy",
    "IntegrityError",
    "LpLedger",
    "MintRejected",
    "PoolError",
    "PositionReport",
    "PriceVector",
    "ScenarioAssertionError",
    "ScenarioError",
    "TradeQuote",
    "TwapWindow",
    "add_token",
    "arbitrage_oracle",
    "claim_fees",
    "cpmm_equilibrium",
    "cpmm_init",
    "cpmm_provide",
    "cpmm_spot_price",
    "cpmm_trade",
    "cpmm_withdraw",
    "demm_equilibrium",
    "demm_init",
    "demm_provide",
    "demm_spot_price",
    "demm_trade",
    "demm_withdraw",
    "entitlement",
    "il_curve",
    "log_invariant",
    "parse_scenario",
    "pool_position",
    "position",
    "provide_delayed",
    "replay_flash_attack",
    "restore",
    "run_mitigated_attack",
    "run_scenario",
    "snapshot",
    "split_pool",
    "twap_mint_quote",
]
