from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from sgtsmac.cli import main
from sgtsmac.harness import random_scenario, run_schedule_demo
from sgtsmac.scenario import (
    ParseError,
    build_table,
    dump_scenario,
    load_scenario,
    parse_scenario,
    read_scenario_text,
)
from sgtsmac.schedule import dump_schedule

GOLDEN = Path(__file__).parent / "golden"


# -- scenario parsing ------------------------------------------------------------

@pytest.mark.parametrize("name", ["fig3.scenario", "fig7.scenario", "fig9.scenario"])
def test_bundled_round_trip(name):
    s = load_scenario(name)
    assert parse_scenario(dump_scenario(s)) == s


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_random_scenario_round_trip(seed):
    s = random_scenario(seed)
    assert parse_scenario(dump_scenario(s)) == s


def test_defaults():
    s = parse_scenario("nodes:\n  - {id: 0, role: pan-coordinator}\n")
    assert s.superframe.slots_per_superframe == 16
    assert s.radio.capture_threshold_db == 5.0
    assert s.nodes[0].tx_power_dbm == 3.6
    assert s.sgts.threshold_db == 10.0


@pytest.mark.parametrize(
    "text,line,needle",
    [
        ("seed: 1\nsuperframe: {bo: 0, so: 1}\n", 2, "SO <= BO"),
        ("seed: 1\nbogus: 2\n", 2, "unknown key"),
        ("seed: abc\n", 1, "integer"),
        ("nodes:\n  - id: 0\n    role: pan-coordinator\n    colour: red\n", 4, "unknown key 'colour'"),
        ("nodes:\n  - {id: 0, role: pan-coordinator}\n  - {id: 1, role: simple-node, parent: 7}\n", 3, "undefined node id 7"),
        ("nodes:\n  - {id: 0, role: king}\n", 2, "role"),
        ("nodes:\n  - {id: 0, role: pan-coordinator}\n  - {id: 0, role: star-coordinator}\n", 3, "duplicate"),
        ("seed: [1\n", None, "malformed"),
    ],
)
def test_parse_errors(text, line, needle):
    with pytest.raises(ParseError) as err:
        parse_scenario(text)
    assert needle in str(err.value)
    if line is not None:
        assert err.value.line == line


def test_unreachable_node_is_a_parse_error():
    text = (
        "nodes:\n  - {id: 0, role: pan-coordinator}\n"
        "  - {id: 1, role: star-coordinator, position: [9000.0, 0.0]}\n"
    )
    with pytest.raises(ParseError, match="out of the PAN coordinator's range"):
        parse_scenario(text)


def test_fig3_scenario_matches_demo():
    assert build_table(load_scenario("fig3.scenario")) == run_schedule_demo()


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        read_scenario_text("missing.scenario")


# -- command line ----------------------------------------------------------------

def test_schedule_golden(capsys):
    assert main(["schedule", "fig3.scenario"]) == 0
    assert capsys.readouterr().out == (GOLDEN / "fig3_schedule.txt").read_text()


def test_schedule_violation_exit_code(tmp_path, capsys):
    s = load_scenario("fig9.scenario")
    from sgtsmac.scenario import SharedSlotSpec
    bad = replace(s, shared_slots=(SharedSlotSpec(5, (11, 1), (21, 1)),))  # both to one receiver
    path = tmp_path / "bad.scenario"
    path.write_text(dump_scenario(bad))
    assert main(["schedule", str(path)]) == 1
    assert "SameReceiver" in capsys.readouterr().err


def test_usage_and_parse_exit_codes(tmp_path, capsys):
    assert main(["run", "missing.scenario"]) == 2
    assert main([]) == 2
    assert main(["frobnicate", "fig3.scenario"]) == 2
    assert main(["run", "fig3.scenario", "--format", "xml"]) == 2
    bad = tmp_path / "bad.scenario"
    bad.write_text("superframe: {bo: 0, so: 3}\n")
    assert main(["schedule", str(bad)]) == 2
    assert "line 1" in capsys.readouterr().err


def test_run_trace_embeds_config(tmp_path):
    assert main(["run", "fig7.scenario", "--out", str(tmp_path), "--seed", "3"]) == 0
    lines = (tmp_path / "run.trace").read_text().splitlines()
    assert lines[0].startswith("# config {") and '"seed":3' in lines[0]
    assert lines[-1].startswith("# trace_sha256 ")


def test_run_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "fig3.scenario", "--out", str(a)]) == 0
    assert main(["run", "fig3.scenario", "--out", str(b)]) == 0
    assert (a / "run.trace").read_bytes() == (b / "run.trace").read_bytes()


def test_sweep_outputs(tmp_path):
    args = ["sweep", "fig9.scenario", "--trials", "20", "--step", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    table = (tmp_path / "sweep.csv").read_text().splitlines()
    assert table[0] == "transmitter,receiver,delta_rssi_db,mean_delta_rssi_db,trials,positives,success_rate"
    summary = (tmp_path / "sweep_summary.txt").read_text()
    assert "crossover_db" in summary and "result_sha256" in summary


def test_latency_summary(capsys):
    assert main(["latency", "fig3.scenario", "--format", "summary"]) == 0
    out = capsys.readouterr().out
    assert "violations 0" in out and "node 33" in out


def test_schedule_summary(capsys):
    assert main(["schedule", "fig3.scenario", "--format", "summary"]) == 0
    assert "horizon 8" in capsys.readouterr().out
