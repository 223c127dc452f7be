"""Lossless pool snapshots.

A snapshot file is JSON of the form::

    {"format_version": 1, "kind": "demm_pool", "payload": {...}, "checksum": "<sha256>"}

The checksum is the SHA-256 of the canonical encoding of ``payload`` (sorted
keys, no whitespace). Amounts are canonical decimal strings, so a restore
gives back exactly the values that were written.
"""

from __future__ import annotations

import hashlib
import json
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .core import DemmState, LpLedger
from .numerics import format_dec, parse_dec

FORMAT_VERSION = 1
KIND = "demm_pool"


class IntegrityError(ValueError):
    """Snapshot is corrupt: bad JSON, schema violation or checksum mismatch."""


def load_schema(name: str) -> dict:
    text = resources.files("demm").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def digest(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def _table(table: dict[str, dict[str, Decimal]]) -> dict[str, dict[str, str]]:
    return {a: {t: format_dec(v) for t, v in sorted(row.items())} for a, row in sorted(table.items())}


def state_payload(state: DemmState, ledger: LpLedger) -> dict:
    return {
        "tokens": list(state.tokens),
        "reserves": [format_dec(r) for r in state.reserves],
        "weights": [format_dec(w) for w in state.weights],
        "balances": _table(ledger.balances),
        "fee_pots": _table(ledger.fee_pots),
    }


def payload_state(payload: dict) -> tuple[DemmState, LpLedger]:
    def table(raw: dict) -> dict[str, dict[str, Decimal]]:
        return {a: {t: parse_dec(v) for t, v in row.items()} for a, row in raw.items()}

    state = DemmState(
        tuple(payload["tokens"]),
        tuple(parse_dec(r) for r in payload["reserves"]),
        tuple(parse_dec(w) for w in payload["weights"]),
    )
    return state, LpLedger(table(payload["balances"]), table(payload.get("fee_pots", {})))


def snapshot_document(state: DemmState, ledger: LpLedger) -> dict:
    payload = state_payload(state, ledger)
    return {"format_version": FORMAT_VERSION, "kind": KIND, "payload": payload, "checksum": digest(payload)}


def snapshot(state: DemmState, ledger: LpLedger, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(snapshot_document(state, ledger), indent=2) + "\n", encoding="utf-8")
    return path


def restore_document(doc: Any) -> tuple[DemmState, LpLedger]:
    try:
        jsonschema.validate(doc, load_schema("snapshot.schema.json"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise IntegrityError(f"snapshot schema violation at {where}: {exc.message}") from None
    if digest(doc["payload"]) != doc["checksum"]:
        raise IntegrityError("snapshot checksum mismatch")
    try:
        return payload_state(doc["payload"])
    except (ValueError, KeyError) as exc:
        raise IntegrityError(f"snapshot payload is inconsistent: {exc}") from None


def restore(path: str | Path) -> tuple[DemmState, LpLedger]:
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"snapshot is not valid JSON: {exc}") from None
    return restore_document(doc)
