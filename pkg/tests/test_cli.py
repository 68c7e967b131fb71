import csv
import json

import pytest
import yaml

import relaymeet.cli as cli
from relaymeet.errors import InvariantViolation, ScenarioError
from relaymeet.scenario import BUNDLED, dump_scenario, load_scenario, save_scenario
from relaymeet.sim import Simulation

from conftest import scenario_variant


def read_events(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


# ---- scenarios -----------------------------------------------------------------

def test_bundled_twelve_robot_team():
    sc = load_scenario("paper_12robot")
    assert (len(sc.sources), len(sc.relays)) == (9, 3)


@pytest.mark.parametrize("name", BUNDLED)
def test_scenario_round_trip(name, tmp_path):
    sc = load_scenario(name)
    path = tmp_path / f"{name}.yaml"
    save_scenario(sc, path)
    again = load_scenario(path)
    assert again == sc
    assert dump_scenario(again) == dump_scenario(sc)


def test_source_out_of_relay_range(tmp_path):
    def move(doc):
        doc["robots"][0]["start"] = [5.0, 5.0]
    with pytest.raises(ScenarioError) as exc:
        scenario_variant("tiny_1x1", move=move)
    assert any("robots[0]" in e and "range" in e for e in exc.value.errors)


def test_capacity_below_action_size():
    def shrink(doc):
        doc["robots"][0]["capacity"] = 1
    with pytest.raises(ScenarioError) as exc:
        scenario_variant("tiny_1x1", shrink=shrink)
    assert any("robots[0].capacity" in e for e in exc.value.errors)


def test_all_errors_reported_together():
    def break_many(doc):
        doc["robots"][0]["capacity"] = 1
        doc["robots"][0]["task"] = "[]<>(r1 &&"
        doc["sim"]["dt"] = 0.0
    with pytest.raises(ScenarioError) as exc:
        scenario_variant("tiny_1x1", break_many=break_many)
    assert len(exc.value.errors) >= 3


def test_unreadable_file(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("robots: [unclosed\n")
    with pytest.raises(ScenarioError):
        load_scenario(bad)


# ---- run ---------------------------------------------------------------------------

def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "dyn"
    assert cli.main(["run", "tiny_1x2", "--mode", "dynamic", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    events = read_events(out / "events.jsonl")
    # totals recounted straight from the trace
    by_type = {}
    for e in events:
        if e["kind"] == "upload":
            by_type[str(e["data_type"])] = by_type.get(str(e["data_type"]), 0) + e["units"]
    assert summary["uploaded_by_type"] == by_type
    assert summary["uploaded_total"] == sum(by_type.values())
    waits = sum(e["duration"] for e in events
                if e["kind"] == "wait_end" and e["robot"].startswith("a"))
    assert summary["source_wait_total"] == pytest.approx(waits, abs=0.01)
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert int(rows[-1]["uploaded_total"]) == summary["uploaded_total"]
    assert set(summary["plans"]) == {"a0", "a1"}
    assert "uploaded" in capsys.readouterr().out


def test_run_matches_library(tmp_path):
    out = tmp_path / "s1"
    assert cli.main(["run", "tiny_1x1", "--mode", "static1", "--out", str(out),
                     "--seed", "3", "--horizon", "50"]) == 0
    sim = cli.SCHEMES["static1"](load_scenario("tiny_1x1").with_sim(seed=3, horizon=50.0)).run()
    assert (out / "events.jsonl").read_text().splitlines() == sim.log.lines()


def test_run_centralized_small(tmp_path):
    out = tmp_path / "c"
    assert cli.main(["run", "tiny_1x1", "--mode", "centralized", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert not summary["refused"]
    assert summary["suffix_cost"] <= summary["distributed_suffix_cost"] + 1e-4
    plan = json.loads((out / "plan.json").read_text())
    assert plan["suffix"]


def test_run_centralized_refused(tmp_path, capsys):
    out = tmp_path / "c"
    code = cli.main(["run", "paper_12robot", "--mode", "centralized", "--out", str(out)])
    assert code == cli.EXIT_SIZE == 4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["refused"] and summary["state_estimate"] >= 1e10
    assert "refused" in capsys.readouterr().err


def test_invalid_scenario_exit_code(tmp_path, capsys):
    sc = load_scenario("tiny_1x1")
    doc = sc.to_dict()
    doc["robots"][0]["capacity"] = 1
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(doc))
    assert cli.main(["validate", str(path)]) == cli.EXIT_INVALID == 2
    assert "capacity" in capsys.readouterr().err
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == 2


def test_invariant_violation_exit_code(tmp_path, monkeypatch):
    class Broken(Simulation):
        def run(self):
            raise InvariantViolation("planted")
    monkeypatch.setitem(cli.SCHEMES, "dynamic", Broken)
    assert cli.main(["run", "tiny_1x1", "--out", str(tmp_path)]) == cli.EXIT_INVARIANT == 3


def test_validate_ok(capsys):
    assert cli.main(["validate", "paper_12robot"]) == 0
    assert "9 sources, 3 relays" in capsys.readouterr().out


def test_log_level_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("RELAYMEET_LOG", "debug")
    assert cli.main(["validate", "tiny_1x1"]) == 0


# ---- compare -----------------------------------------------------------------------

def test_compare_outputs(tmp_path):
    out = tmp_path / "cmp"
    assert cli.main(["compare", "tiny_1x2", "--out", str(out), "--workers", "2"]) == 0
    with open(out / "comparison.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["mode"] for r in rows] == ["dynamic", "static1", "static2"]
    for r in rows:
        summary = json.loads((out / r["mode"] / "summary.json").read_text())
        assert int(r["total"]) == summary["uploaded_total"]
    with open(out / "cumulative.csv") as fh:
        cum = list(csv.reader(fh))
    assert cum[0] == ["time", "dynamic", "static1", "static2"]
    for col in (1, 2, 3):
        series = [int(row[col]) for row in cum[1:]]
        assert series == sorted(series)
        assert series[-1] == int(rows[col - 1]["total"])


def test_compare_seed_sweep(tmp_path):
    out = tmp_path / "sweep"
    assert cli.main(["compare", "tiny_1x1", "--out", str(out), "--seeds", "2",
                     "--horizon", "40"]) == 0
    with open(out / "comparison.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert sorted({r["seed"] for r in rows}) == ["0", "1"]
    assert (out / "seed_1" / "static2" / "events.jsonl").exists()


def co_located(doc):
    doc["regions"]["r1"] = [4.0, 3.0]
    a = doc["robots"][0]
    a["regions"], a["actions"] = ["r1"], ["g1"]
    a["task"] = "[]<>(r1 && g1)"


def test_degenerate_pair_schemes_agree(tmp_path):
    path = tmp_path / "pair.yaml"
    save_scenario(scenario_variant("tiny_1x1", co=co_located), path)
    out = tmp_path / "cmp"
    assert cli.main(["compare", str(path), "--out", str(out), "--seeds", "3"]) == 0
    with open(out / "comparison.csv") as fh:
        rows = list(csv.DictReader(fh))
    by_seed = {}
    for r in rows:
        by_seed.setdefault(r["seed"], []).append(int(r["total"]))
    for totals in by_seed.values():
        assert min(totals) > 0
        assert max(totals) - min(totals) <= 0.10 * max(totals)
