from __future__ import annotations

import copy
import csv
import json
from decimal import Decimal
from importlib import resources
from pathlib import Path

import mpmath
import pytest

from demm.numerics import D
from demm.persistence import restore, restore_document, snapshot_document
from demm.scenario import (
    ScenarioAssertionError,
    ScenarioError,
    load_scenario,
    parse_grid,
    parse_scenario,
    profit,
    run_scenario,
)

from helpers import close, vec_close

mpmath.mp.dps = 100

SCENARIOS = Path(str(resources.files("demm").joinpath("scenarios")))
FIXTURES = sorted(p.name for p in SCENARIOS.glob("*.json"))


def run(name: str, **kw):
    return run_scenario(load_scenario(SCENARIOS / name), base_dir=SCENARIOS, **kw)


def raw(name: str) -> dict:
    return json.loads((SCENARIOS / name).read_text(encoding="utf-8"))


@pytest.mark.parametrize("name", FIXTURES)
def test_bundled_fixture_passes(name):
    transcript = run(name)
    assert transcript.records
    assert all(v == 0 for v in transcript.engine.conservation_residual().values())


def test_attack_fixture_shape_and_profit():
    script = load_scenario(SCENARIOS / "example8_attack.json")
    assert len(script.blocks) == 1 and len(script.events) == 5
    got = profit(run("example8_attack.json"), "eve")
    assert close(got["s"], "2.4") and close(got["t"], "5")


def test_pool_fixture_final_state():
    eng = run("example2_pool.json").engine
    assert vec_close(eng.state.reserves, (D("2.5"), D(64))) and eng.state.weights == (2, 4)


def test_same_seed_same_digest():
    for name in ("example8_delay.json", "governance_fees.json"):
        assert run(name).digest == run(name).digest
    assert run("example8_delay.json", seed=5).digest != run("example8_delay.json").digest


def test_outputs_are_written(tmp_path):
    transcript = run("example5_il.json", out_dir=tmp_path)
    names = {Path(p).name for p in transcript.artifacts}
    assert {"il_curve.csv", "final_state.json", "transcript.json"} <= names
    state, _ = restore(tmp_path / "final_state.json")
    assert state == transcript.engine.state
    rows = list(csv.reader((tmp_path / "il_curve.csv").open(encoding="utf-8")))
    assert rows[0][:2] == ["rel_price", "pool_il"]
    doc = json.loads((tmp_path / "transcript.json").read_text(encoding="utf-8"))
    assert doc["digest"] == transcript.digest


def test_mid_run_state_round_trips():
    eng = run("example67.json").engine
    doc = json.loads(json.dumps(snapshot_document(eng.state, eng.ledger)))
    assert restore_document(doc) == (eng.state, eng.ledger)


def test_snapshot_chaining_fixture():
    eng = run("example8_followup.json").engine
    # invariant 8 at prices (5, 2): 5 r_s = 2 r_t, so r_s = sqrt(3.2) and r_t = sqrt(20)
    want = tuple(Decimal(mpmath.nstr(mpmath.sqrt(mpmath.mpf(x)), 70)) for x in ("3.2", "20"))
    assert vec_close(eng.state.reserves, want, "1e-45")
    assert eng.state.weights == (1, 1)


# -- parse errors ----------------------------------------------------------


def test_empty_blocks_rejected():
    doc = raw("example8_attack.json")
    doc["blocks"] = []
    with pytest.raises(ScenarioError, match="blocks"):
        parse_scenario(json.dumps(doc))


def test_exponent_amount_rejected():
    doc = raw("example8_attack.json")
    doc["blocks"][0]["events"][1]["amount"] = "1e3"
    with pytest.raises(ScenarioError, match="blocks/0/events/1"):
        parse_scenario(json.dumps(doc))


def test_unknown_event_kind():
    doc = raw("example8_attack.json")
    doc["blocks"][0]["events"][2]["type"] = "teleport"
    with pytest.raises(ScenarioError, match="unknown event kind 'teleport'"):
        parse_scenario(json.dumps(doc))


def test_first_event_must_be_init():
    doc = raw("example8_attack.json")
    doc["blocks"][0]["events"].pop(0)
    with pytest.raises(ScenarioError, match="init"):
        parse_scenario(json.dumps(doc))


def test_json_syntax_error_has_position():
    with pytest.raises(ScenarioError, match="line 2 column"):
        parse_scenario('{\n  "name": }')


def test_missing_file():
    with pytest.raises(ScenarioError):
        load_scenario(SCENARIOS / "nope.json")


# -- run errors ------------------------------------------------------------


def test_failed_expectation_is_assertion_error():
    doc = raw("example8_attack.json")
    doc["blocks"][0]["events"][-1]["expect"]["wallets"]["eve"]["s"] = "2.5"
    with pytest.raises(ScenarioAssertionError, match=r"block 0 event 4 .*digest [0-9a-f]{64}"):
        run_scenario(parse_scenario(json.dumps(doc)))


def test_module_error_reports_event_and_digest():
    doc = raw("example8_attack.json")
    doc["blocks"][0]["events"][-1]["redeem"] = {"t": "7"}
    del doc["blocks"][0]["events"][-1]["expect"]
    with pytest.raises(ScenarioError, match=r"block 0 event 4 \(withdraw\) failed: .*digest [0-9a-f]{64}"):
        run_scenario(parse_scenario(json.dumps(doc)))


def test_unknown_token_names_add_token():
    doc = raw("example8_attack.json")
    ev = copy.deepcopy(doc["blocks"][0]["events"][2])
    ev["deposit"] = {"u": "1"}
    del ev["expect"]
    doc["blocks"][0]["events"] = doc["blocks"][0]["events"][:1] + [ev]
    with pytest.raises(ScenarioError, match="add_token"):
        run_scenario(parse_scenario(json.dumps(doc)))


def test_grid_parsing():
    assert parse_grid("1/16:16:101") == (D("0.0625"), D(16), 101)
    for bad in ("1:2", "0:1:3", "2:1:3", "a:b:c"):
        with pytest.raises(ScenarioError):
            parse_grid(bad)
