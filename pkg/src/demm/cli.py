"""Command-line interface.

Exit codes: 0 on success, 2 when an assertion in a scenario fails, 1 on any
input error (unreadable or invalid script, failed operation, corrupt file).
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .analytics import write_csv
from .attack import replay_flash_attack, run_mitigated_attack
from .core import DemmState
from .cpmm import PoolError
from .numerics import context, format_dec, parse_dec
from .persistence import IntegrityError, restore, snapshot
from .scenario import (
    ScenarioAssertionError,
    ScenarioError,
    engine_il_curve,
    load_scenario,
    parse_grid,
    run_scenario,
)

EXIT_OK, EXIT_INPUT, EXIT_ASSERT = 0, 1, 2

# the pool, prices and endowment of the bundled attack example
ATTACK_STATE = DemmState(("s", "t"), (parse_dec("4"), parse_dec("10")), (parse_dec("1"), parse_dec("1")))
ATTACK_PRICES = {"s": parse_dec("5"), "t": parse_dec("2")}


def _show(values) -> str:
    # display only: trim trailing zeros and round to 20 significant digits
    return ", ".join(format_dec(context(extra=-30).plus(v).normalize()) for v in values)


def _run(args: argparse.Namespace) -> int:
    script = load_scenario(args.script)
    transcript = run_scenario(script, out_dir=args.out, seed=args.seed, base_dir=Path(args.script).parent)
    print(f"{script.name}: {len(transcript.records)} records, digest {transcript.digest}")
    for acct, row in transcript.final["wallets"].items():
        flows = ", ".join(f"{t}={_show([parse_dec(v)])}" for t, v in row.items())
        print(f"  {acct}: {flows}")
    for path in transcript.artifacts:
        print(f"  wrote {path}")
    return EXIT_OK


def _validate(args: argparse.Namespace) -> int:
    script = load_scenario(args.script)
    n_events = sum(len(b) for b in script.blocks)
    print(f"{script.name}: valid, {len(script.blocks)} blocks, {n_events} events")
    return EXIT_OK


def _replay_attack(args: argparse.Namespace) -> int:
    if args.snapshot:
        state, ledger = restore(args.snapshot)
    else:
        state, ledger = ATTACK_STATE, None
    prices = {t: parse_dec(p) for t, p in zip(state.tokens, args.prices.split(","))} if args.prices else ATTACK_PRICES
    endowment = parse_dec(args.endowment)
    deposit = parse_dec(args.deposit)
    if args.mitigation == "frozen":
        report = replay_flash_attack(state, endowment, deposit, ledger, frozen_invariant=True, prices=prices)
    else:
        report = run_mitigated_attack(
            state,
            endowment,
            prices,
            mitigation=args.mitigation,
            deposit=deposit,
            delay=(args.delay_min, max(args.delay_min, args.delay_max)),
            twap_k=args.twap_k,
            seed=args.seed,
            ledger=ledger,
        )
    if args.json:
        print(json.dumps(report.to_json(), indent=2))
    else:
        for step in report.steps:
            print(f"{step.label:>10}: (({_show(step.reserves)}), ({_show(step.weights)}))")
        status = "aborted" if report.aborted else "completed"
        print(f"attack {status} under mitigation {report.mitigation}" + (f": {report.note}" if report.note else ""))
        print("profit: " + ", ".join(f"{t}={_show([v])}" for t, v in report.profit.items()))
        if report.profit_value is not None:
            print(f"profit value: {_show([report.profit_value])}")
    return EXIT_OK


def _il_curve(args: argparse.Namespace) -> int:
    parse_grid(args.grid)
    script = load_scenario(args.script)
    transcript = run_scenario(script, seed=args.seed, base_dir=Path(args.script).parent, grid=args.grid)
    rows = transcript.curves[0] if transcript.curves else engine_il_curve(transcript.engine, args.grid, args.token)
    buf = io.StringIO()
    write_csv(rows, buf)
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _snapshot(args: argparse.Namespace) -> int:
    script = load_scenario(args.script)
    transcript = run_scenario(script, seed=args.seed, base_dir=Path(args.script).parent)
    eng = transcript.engine
    if eng.model != "demm":
        raise ScenarioError("only DEMM pools can be snapshotted")
    path = snapshot(eng.state, eng.ledger, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def _restore(args: argparse.Namespace) -> int:
    state, ledger = restore(args.file)
    doc = {
        "tokens": list(state.tokens),
        "reserves": [format_dec(r) for r in state.reserves],
        "weights": [format_dec(w) for w in state.weights],
        "balances": {a: {t: format_dec(v) for t, v in row.items()} for a, row in ledger.balances.items()},
    }
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demm", description="Dynamic exponent market maker simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log engine activity")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario script")
    p.add_argument("script")
    p.add_argument("--out", help="directory for transcript, final state and CSVs")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_run)

    p = sub.add_parser("validate", help="check a scenario script against the schema")
    p.add_argument("script")
    p.set_defaults(func=_validate)

    p = sub.add_parser("replay-attack", help="replay the liquidity-manipulation attack")
    p.add_argument("--mitigation", choices=["none", "delay", "twap", "frozen"], default="none")
    p.add_argument("--endowment", default="36")
    p.add_argument("--deposit", default="1")
    p.add_argument("--snapshot", help="attack a restored two-token pool instead of the bundled one")
    p.add_argument("--prices", help="comma-separated external prices in pool token order")
    p.add_argument("--delay-min", type=int, default=1)
    p.add_argument("--delay-max", type=int, default=1)
    p.add_argument("--twap-k", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.set_defaults(func=_replay_attack)

    p = sub.add_parser("il-curve", help="emit impermanent loss/gain curves as CSV")
    p.add_argument("script")
    p.add_argument("--grid", default="1/16:16:101", help="lo:hi:n relative price grid")
    p.add_argument("--token", help="token whose price moves (default: last pooled token)")
    p.add_argument("--out", help="CSV file (default: stdout)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_il_curve)

    p = sub.add_parser("snapshot", help="run a scenario and save its final pool")
    p.add_argument("script")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_snapshot)

    p = sub.add_parser("restore", help="verify a snapshot file and print its contents")
    p.add_argument("file")
    p.set_defaults(func=_restore)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ScenarioAssertionError as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except (ScenarioError, IntegrityError, PoolError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
