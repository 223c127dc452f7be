"""Scenario scripts: parsing, deterministic replay and run transcripts.

A script is a JSON document with a list of blocks, each an ordered list of
events. Amounts are canonical decimal strings. Every event may carry an
``expect`` object whose checks run right after the event; ``assert_state``
events do the same as standalone steps. Either failing aborts the run with
:class:`ScenarioAssertionError`; any other problem raises
:class:`ScenarioError`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable, Mapping

import jsonschema

from . import analytics
from .core import FeePolicy, demm_trade
from .cpmm import PoolError, cpmm_trade
from .engine import Engine
from .security import MintRejected
from .numerics import ONE, ZERO, add, context, format_dec, parse_dec
from .persistence import (
    IntegrityError,
    digest,
    load_schema,
    restore,
    snapshot_document,
    state_payload,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
EVENT_TYPES = (
    "init",
    "trade",
    "provide",
    "provide_delayed",
    "twap_provide",
    "withdraw",
    "claim_fees",
    "set_prices",
    "arbitrage",
    "add_token",
    "split_pool",
    "assert_state",
    "report",
)
CHECK_KEYS = ("reserves", "weights", "balances", "fee_pots", "wallets", "entitled", "lp")

_SCALARS = {"amount", "alpha", "initial_lp", "new_reserve", "rel_tol", "abs_tol"}
_MAPS = {"deposit", "redeem", "prices", "basis", "lp"}
_NESTED = {"balances", "fee_pots", "wallets", "entitled"}


class ScenarioError(ValueError):
    """Malformed script or an operation that failed during the run."""


class ScenarioAssertionError(AssertionError):
    """An ``assert_state`` or ``expect`` check did not hold."""


@dataclass(frozen=True)
class Event:
    type: str
    args: Mapping[str, Any]
    block: int
    index: int

    @property
    def expect(self) -> Mapping[str, Any] | None:
        return self.args.get("expect")


@dataclass(frozen=True)
class ScenarioScript:
    name: str
    seed: int
    fee_rho: Decimal
    delay: tuple[int, int]
    twap_k: int
    blocks: tuple[tuple[Event, ...], ...]
    outputs: Mapping[str, Any] = field(default_factory=dict)
    description: str = ""

    @property
    def events(self) -> list[Event]:
        return [e for block in self.blocks for e in block]


@dataclass
class RunTranscript:
    name: str
    seed: int
    records: list[dict]
    final: dict
    digest: str
    artifacts: list[str] = field(default_factory=list)
    engine: Engine | None = field(default=None, repr=False, compare=False)
    curves: list[list[dict]] = field(default_factory=list, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "seed": self.seed,
            "digest": self.digest,
            "records": self.records,
            "final": self.final,
            "artifacts": self.artifacts,
        }


# -- parsing ---------------------------------------------------------------


def _dec(value: Any) -> Any:
    return value if value == "all" else parse_dec(value)


def _convert(key: str, value: Any) -> Any:
    if key in _SCALARS:
        return parse_dec(value)
    if key in ("reserves", "weights"):
        if isinstance(value, list):
            return [parse_dec(v) for v in value]
        return {k: parse_dec(v) for k, v in value.items()}
    if key in _MAPS:
        return {k: _dec(v) for k, v in value.items()}
    if key in _NESTED:
        return {a: {t: parse_dec(v) for t, v in row.items()} for a, row in value.items()}
    if key == "outputs":
        return _generic(value)
    if key == "expect":
        return {k: _convert(k, v) for k, v in value.items()}
    return value


def _generic(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _generic(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_generic(v) for v in value]
    if isinstance(value, str):
        try:
            return parse_dec(value)
        except ValueError:
            return value
    return value


def _path(parts) -> str:
    return "/".join(str(p) for p in parts) or "<root>"


def parse_scenario(text: str) -> ScenarioScript:
    """Parse and validate a scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("<root>: a scenario must be a JSON object")
    for b, block in enumerate(doc.get("blocks") or []):
        events = block.get("events") if isinstance(block, dict) else None
        for i, ev in enumerate(events or []):
            kind = ev.get("type") if isinstance(ev, dict) else None
            if kind not in EVENT_TYPES:
                raise ScenarioError(f"blocks/{b}/events/{i}: unknown event kind {kind!r}")
    validator = jsonschema.Draft202012Validator(load_schema("scenario.schema.json"))
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        raise ScenarioError(f"{_path(error.absolute_path)}: {error.message}")

    blocks = []
    for b, block in enumerate(doc["blocks"]):
        events = tuple(
            Event(ev["type"], {k: _convert(k, v) for k, v in ev.items() if k != "type"}, b, i)
            for i, ev in enumerate(block["events"])
        )
        blocks.append(events)
    first = next((e for blk in blocks for e in blk), None)
    if first is None or first.type != "init" or first.block != 0:
        raise ScenarioError("blocks/0/events/0: the first event must be an init")
    if sum(1 for blk in blocks for e in blk if e.type == "init") > 1:
        raise ScenarioError("a scenario has exactly one init event")

    mitigation = doc.get("mitigation", {})
    delay = (mitigation.get("delay_min", 0), mitigation.get("delay_max", mitigation.get("delay_min", 0)))
    if delay[0] > delay[1]:
        raise ScenarioError("mitigation: delay_min exceeds delay_max")
    outputs = doc.get("outputs", {})
    return ScenarioScript(
        name=doc["name"],
        seed=doc.get("seed", 0),
        fee_rho=parse_dec(doc.get("fee_rho", "1")),
        delay=delay,
        twap_k=mitigation.get("twap_k", 1),
        blocks=tuple(blocks),
        outputs=outputs,
        description=doc.get("description", ""),
    )


def load_scenario(path: str | Path) -> ScenarioScript:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from None
    return parse_scenario(text)


# -- state views -----------------------------------------------------------


def _jsonable(value: Any) -> Any:
    if isinstance(value, Decimal):
        return format_dec(value)
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def engine_document(eng: Engine) -> dict:
    """Everything that defines the engine's state, in JSON form."""
    doc: dict[str, Any] = {"height": eng.clock.height, "model": eng.model}
    if eng.model == "demm":
        doc["pool"] = state_payload(eng.state, eng.ledger)
    elif eng.model == "cpmm":
        doc["pool"] = {
            "tokens": list(eng.cpmm_tokens),
            "reserves": _jsonable(eng.cpmm.reserves),
            "weights": _jsonable(eng.cpmm.weights),
            "lp_supply": format_dec(eng.cpmm.lp_supply),
            "lp": _jsonable(dict(sorted(eng.cpmm_lp.items()))),
        }
    doc["wallets"] = _jsonable({a: dict(sorted(r.items())) for a, r in sorted(eng.wallets.items())})
    doc["pending"] = [
        {
            "provider": p.provider,
            "deposit": _jsonable(dict(sorted(p.deposit.items()))),
            "submit_height": p.submit_height,
            "activation_height": p.activation_height,
        }
        for p in eng.queue.pending
    ]
    doc["detached"] = [state_payload(s, led) for s, led in eng.detached]
    if eng.prices is not None:
        doc["prices"] = _jsonable(dict(sorted(eng.prices.items())))
    return doc


def state_digest(eng: Engine) -> str:
    return digest(engine_document(eng))


def _view(eng: Engine) -> dict[str, Any]:
    if eng.model == "cpmm":
        return {
            "reserves": dict(zip(eng.cpmm_tokens, eng.cpmm.reserves)),
            "weights": dict(zip(eng.cpmm_tokens, eng.cpmm.weights)),
            "lp": dict(eng.cpmm_lp),
            "wallets": eng.wallets,
        }
    state, ledger = eng.state, eng.ledger
    return {
        "reserves": dict(zip(state.tokens, state.reserves)),
        "weights": dict(zip(state.tokens, state.weights)),
        "balances": ledger.balances,
        "fee_pots": ledger.fee_pots,
        "wallets": eng.wallets,
        "entitled": {
            a: dict(zip(state.tokens, analytics.entitlement(state, ledger, a))) for a in ledger.balances
        },
    }


def _close(actual: Decimal, expected: Decimal, rel_tol: Decimal, abs_tol: Decimal) -> bool:
    ctx = context()
    gap = ctx.subtract(actual, expected).copy_abs()
    return gap <= max(ctx.multiply(rel_tol, expected.copy_abs()), abs_tol)


def _compare(actual: Any, expected: Any, path: str, tol: tuple[Decimal, Decimal], zero_default: bool) -> list[str]:
    if isinstance(expected, Mapping):
        if not isinstance(actual, Mapping):
            return [f"{path}: expected a mapping, got {actual!r}"]
        out = []
        for key, want in expected.items():
            if key in actual:
                got = actual[key]
            elif zero_default and not isinstance(want, Mapping):
                got = ZERO
            elif zero_default:
                got = {}
            else:
                out.append(f"{path}/{key}: missing")
                continue
            out.extend(_compare(got, want, f"{path}/{key}", tol, zero_default))
        return out
    if isinstance(expected, list):
        if not isinstance(actual, (list, tuple)) or len(actual) != len(expected):
            return [f"{path}: expected {len(expected)} entries, got {actual!r}"]
        out = []
        for k, (a, e) in enumerate(zip(actual, expected)):
            out.extend(_compare(a, e, f"{path}/{k}", tol, zero_default))
        return out
    if isinstance(expected, Decimal):
        if isinstance(actual, bool) or not isinstance(actual, (Decimal, int)):
            return [f"{path}: expected {format_dec(expected)}, got {actual!r}"]
        if not _close(Decimal(actual), expected, *tol):
            return [f"{path}: expected {format_dec(expected)}, got {format_dec(Decimal(actual))}"]
        return []
    if actual != expected:
        return [f"{path}: expected {expected!r}, got {actual!r}"]
    return []


def check(eng: Engine, spec: Mapping[str, Any], outputs: Mapping[str, Any] | None = None) -> list[str]:
    """Failures of ``spec`` against the engine (and the event's outputs)."""
    tol = (spec["rel_tol"], spec.get("abs_tol", ZERO))
    view = _view(eng)
    failures = []
    for key in CHECK_KEYS:
        if key in spec:
            if key not in view:
                failures.append(f"{key}: not available for a {eng.model} pool")
                continue
            failures.extend(_compare(view[key], spec[key], key, tol, zero_default=True))
    if "outputs" in spec:
        failures.extend(_compare(outputs or {}, spec["outputs"], "outputs", tol, zero_default=False))
    return failures


# -- event handlers --------------------------------------------------------


class _Run:
    def __init__(self, script: ScenarioScript, seed: int, out_dir: Path | None, base_dir: Path | None,
                 grid: str | None) -> None:
        self.script = script
        self.out_dir = out_dir
        self.base_dir = base_dir or Path.cwd()
        self.grid = grid
        self.artifacts: list[str] = []
        self.curves: list[list[dict]] = []
        self.eng = Engine(
            fee=FeePolicy(script.fee_rho), seed=seed, delay=script.delay, twap_k=script.twap_k
        )

    def handler(self, kind: str) -> Callable[[Mapping[str, Any]], dict]:
        return getattr(self, f"on_{kind}")

    def on_init(self, a: Mapping[str, Any]) -> dict:
        eng = self.eng
        if "from_snapshot" in a:
            path = Path(a["from_snapshot"])
            if not path.is_absolute():
                path = self.base_dir / path
            try:
                state, ledger = restore(path)
            except (OSError, IntegrityError) as exc:
                raise ScenarioError(f"cannot restore {path}: {exc}") from None
            eng.load_demm(state, ledger)
            return {"tokens": list(state.tokens), "from_snapshot": path.name}
        if a["model"] == "cpmm":
            weights = a.get("weights") or [ONE] * len(a["tokens"])
            eng.init_cpmm(a["tokens"], a["reserves"], weights, a.get("initial_lp", ONE), a["account"])
            return {"tokens": list(eng.cpmm_tokens), "lp_supply": eng.cpmm.lp_supply}
        if "weights" in a or "initial_lp" in a:
            raise ScenarioError("a DEMM pool derives its weights from the genesis deposit")
        eng.init_demm(a["tokens"], a["reserves"], a["account"])
        return {"tokens": list(eng.state.tokens), "weights": dict(zip(eng.state.tokens, eng.state.weights))}

    def on_trade(self, a: Mapping[str, Any]) -> dict:
        q = self.eng.trade(a["account"], a["token_in"], a["token_out"], a["amount"])
        return {"amount_out": q.dr_o, "fee": q.fee_charged}

    def on_provide(self, a: Mapping[str, Any]) -> dict:
        if "alpha" in a:
            minted, deposit = self.eng.provide_cpmm(a["account"], a["alpha"])
            return {"minted": minted, "deposit": deposit}
        return {"minted": self.eng.provide(a["account"], a["deposit"])}

    def on_provide_delayed(self, a: Mapping[str, Any]) -> dict:
        seen = len(self.eng.activations)
        item = self.eng.provide_delayed(a["account"], a["deposit"])
        out: dict[str, Any] = {
            "submit_height": item.submit_height,
            "activation_height": item.activation_height,
        }
        for act in self.eng.activations[seen:]:
            if act.pending is item:
                out.update(_activation_outputs(act))
        return out

    def on_twap_provide(self, a: Mapping[str, Any]) -> dict:
        # a rejected mint is a protocol outcome, recorded rather than raised
        try:
            return {"minted": self.eng.twap_provide(a["account"], a["deposit"])}
        except MintRejected as exc:
            return {"rejected": True, "error": str(exc)}

    def on_withdraw(self, a: Mapping[str, Any]) -> dict:
        if "alpha" in a:
            return {"payout": self.eng.withdraw_cpmm(a["account"], a["alpha"])}
        return {"payout": self.eng.withdraw(a["account"], a["redeem"])}

    def on_claim_fees(self, a: Mapping[str, Any]) -> dict:
        return {"amount": self.eng.claim_fees(a["account"], a["token"])}

    def on_set_prices(self, a: Mapping[str, Any]) -> dict:
        self.eng.set_prices(a["prices"])
        return {}

    def on_arbitrage(self, a: Mapping[str, Any]) -> dict:
        return {"flows": self.eng.arbitrage(a.get("account", "arbitrageur"))}

    def on_add_token(self, a: Mapping[str, Any]) -> dict:
        minted = self.eng.add_token(
            a["account"], a["anchor"], a["amount"], a["new_token"], a["new_reserve"], a["governance"]
        )
        return {"minted": minted}

    def on_split_pool(self, a: Mapping[str, Any]) -> dict:
        first, second = a["partition"]
        detached, _ = self.eng.split_pool((first, second), a["governance"], a.get("continue_with", 0))
        return {"kept": list(self.eng.state.tokens), "detached": list(detached.tokens)}

    def on_assert_state(self, a: Mapping[str, Any]) -> dict:
        failures = check(self.eng, a)
        if failures:
            raise _Failed(failures)
        return {"checked": sum(1 for k in CHECK_KEYS if k in a)}

    def on_report(self, a: Mapping[str, Any]) -> dict:
        kind = a["kind"]
        eng = self.eng
        if kind == "quote":
            return {"amount_out": self._quote(a["token_in"], a["token_out"], a["amount"])}
        if eng.model != "demm":
            raise ScenarioError(f"{kind} reports need a DEMM pool")
        if eng.prices is None:
            raise ScenarioError(f"{kind} reports need external prices")
        if kind == "position":
            acct = a["account"]
            rep = analytics.position(eng.state, eng.ledger, acct, eng.prices, a.get("basis") or eng.basis.get(acct, {}))
            return _position_outputs(eng.state.tokens, rep)
        if kind == "pool":
            rep = analytics.pool_position(eng.state, eng.prices, a.get("basis") or _total_basis(eng))
            return _position_outputs(eng.state.tokens, rep)
        if kind == "allocation":
            return {"rows": analytics.allocation(eng.state, eng.ledger, eng.prices)}
        rows = engine_il_curve(eng, self.grid or a.get("grid") or "1/16:16:101", a.get("token"), a.get("accounts"))
        self.curves.append(rows)
        self._emit_csv(a.get("file") or f"il_curve_{len(self.curves)}.csv", rows)
        return {"rows": rows}

    def _quote(self, token_in: str, token_out: str, amount: Decimal) -> Decimal:
        eng = self.eng
        if eng.model == "cpmm":
            i, o = eng._cpmm_index(token_in), eng._cpmm_index(token_out)
            return cpmm_trade(eng.cpmm, i, o, amount)[1]
        return demm_trade(eng.state, token_in, token_out, amount, eng.fee)[1].dr_o

    def _emit_csv(self, name: str, rows: list[dict]) -> None:
        if self.out_dir is None:
            return
        path = self.out_dir / name
        with path.open("w", encoding="utf-8", newline="") as fh:
            analytics.write_csv(rows, fh)
        self.artifacts.append(str(path))


class _Failed(Exception):
    def __init__(self, failures: list[str]) -> None:
        super().__init__("; ".join(failures))
        self.failures = failures


def _activation_outputs(act) -> dict:
    if act.refunded:
        return {"activated": False, "refunded": True, "error": act.error}
    return {"activated": True, "minted": act.minted}


def _position_outputs(tokens, rep: analytics.PositionReport) -> dict:
    return {
        "entitled": dict(zip(tokens, rep.entitled)),
        "pool_value": rep.pool_value,
        "hold_value": rep.hold_value,
        "il_abs": rep.il_abs,
        "il_rel": rep.il_rel,
    }


def _total_basis(eng: Engine) -> dict[str, Decimal]:
    out: dict[str, Decimal] = {}
    for row in eng.basis.values():
        for t, v in row.items():
            out[t] = add(out.get(t, ZERO), v)
    return out


def parse_grid(spec: str) -> tuple[Decimal, Decimal, int]:
    """``lo:hi:n`` where the bounds may be decimals or fractions like ``1/16``."""
    try:
        lo_s, hi_s, n_s = spec.split(":")
        n = int(n_s)
    except ValueError:
        raise ScenarioError(f"grid must look like lo:hi:n, got {spec!r}") from None

    def bound(text: str) -> Decimal:
        if "/" in text:
            num, den = text.split("/")
            return context().divide(parse_dec(num), parse_dec(den))
        return parse_dec(text)

    try:
        lo, hi = bound(lo_s), bound(hi_s)
    except (ValueError, ArithmeticError) as exc:
        raise ScenarioError(f"bad grid bound in {spec!r}: {exc}") from None
    if n < 1 or lo <= 0 or hi < lo:
        raise ScenarioError(f"grid needs n >= 1 and 0 < lo <= hi, got {spec!r}")
    return lo, hi, n


def engine_il_curve(
    eng: Engine, grid: str, token: str | None = None, accounts: list[str] | None = None
) -> list[dict]:
    """IL curve from the engine's current pool, prices and deposit bases."""
    if eng.model != "demm" or eng.prices is None:
        raise ScenarioError("an IL curve needs a DEMM pool and external prices")
    lo, hi, n = parse_grid(grid)
    state = eng.state
    token = token or state.tokens[-1]
    if token not in state.tokens:
        raise ScenarioError(f"unknown token {token!r}")
    accounts = accounts if accounts is not None else sorted(eng.ledger.balances)
    holders = {acct: eng.basis.get(acct, {}) for acct in accounts}
    grid_prices = analytics.price_grid(eng.prices, token, analytics.log_grid(lo, hi, n))
    return analytics.il_curve(
        state, eng.ledger, grid_prices, holders, eng.prices, token=token, pool_basis=_total_basis(eng)
    )


# -- driver ----------------------------------------------------------------


def run_scenario(
    script: ScenarioScript,
    out_dir: str | Path | None = None,
    seed: int | None = None,
    base_dir: str | Path | None = None,
    grid: str | None = None,
) -> RunTranscript:
    """Execute ``script`` and return its transcript.

    ``grid`` overrides the grid of every ``il_curve`` report. With ``out_dir``
    the transcript, the final state and any CSVs are written there.
    """
    seed = script.seed if seed is None else seed
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    run = _Run(script, seed, out, Path(base_dir) if base_dir is not None else None, grid)
    eng = run.eng
    records: list[dict] = []

    for b, block in enumerate(script.blocks):
        for act in eng.begin_block():
            records.append(
                {
                    "block": b,
                    "index": None,
                    "type": "activation",
                    "account": act.pending.provider,
                    "outputs": _jsonable(_activation_outputs(act)),
                    "post": state_digest(eng),
                }
            )
        for ev in block:
            pre = state_digest(eng)
            where = f"block {b} event {ev.index} ({ev.type})"
            try:
                outputs = run.handler(ev.type)(ev.args)
            except _Failed as exc:
                raise ScenarioAssertionError(f"{where}: {exc}; state digest {pre}") from None
            except ScenarioError as exc:
                raise ScenarioError(f"{where}: {exc}; state digest {pre}") from None
            except (PoolError, ValueError, KeyError, ArithmeticError) as exc:
                raise ScenarioError(f"{where} failed: {exc}; state digest {pre}") from None
            if ev.expect is not None:
                failures = check(eng, ev.expect, outputs)
                if failures:
                    raise ScenarioAssertionError(f"{where}: {'; '.join(failures)}; state digest {state_digest(eng)}")
            records.append(
                {
                    "block": b,
                    "index": ev.index,
                    "type": ev.type,
                    "pre": pre,
                    "post": state_digest(eng),
                    "outputs": _jsonable(outputs),
                }
            )

    cfg = script.outputs.get("il_curve")
    if cfg is not None:
        rows = engine_il_curve(eng, grid or cfg["grid"], cfg.get("token"), cfg.get("accounts"))
        run.curves.append(rows)
        run._emit_csv(cfg.get("file", "il_curve.csv"), rows)

    final = engine_document(eng)
    body = {"format_version": FORMAT_VERSION, "name": script.name, "seed": seed, "records": records, "final": final}
    transcript = RunTranscript(script.name, seed, records, final, digest(body), run.artifacts, eng, run.curves)
    if out is not None:
        if eng.model == "demm":
            doc = snapshot_document(eng.state, eng.ledger)
        else:
            doc = {"format_version": FORMAT_VERSION, "kind": "engine", "payload": final}
        state_path = out / "final_state.json"
        state_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        transcript.artifacts.append(str(state_path))
        path = out / "transcript.json"
        transcript.artifacts.append(str(path))
        path.write_text(json.dumps(transcript.to_json(), indent=2) + "\n", encoding="utf-8")
    log.info("scenario %s finished, digest %s", script.name, transcript.digest)
    return transcript


def profit(transcript: RunTranscript, account: str) -> dict[str, Decimal]:
    """Net token flows of ``account`` at the end of the run."""
    return {t: parse_dec(v) for t, v in transcript.final["wallets"].get(account, {}).items()}


__all__ = [
    "Event",
    "RunTranscript",
    "ScenarioAssertionError",
    "ScenarioError",
    "ScenarioScript",
    "check",
    "engine_document",
    "engine_il_curve",
    "load_scenario",
    "parse_grid",
    "parse_scenario",
    "profit",
    "run_scenario",
    "state_digest",
]
