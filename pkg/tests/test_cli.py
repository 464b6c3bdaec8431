import json

import pytest

from orderplay import cli
from orderplay.harness import sample_scenario
from orderplay.types import Scenario


def _write_scenario(tmp_path, seed=0, n=2, **overrides):
    sc = sample_scenario(seed, n)
    d = cli.scenario_to_dict(sc, seed)
    d.update(overrides)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(d))
    return path, sc


class TestParseScenario:
    def test_round_trip(self):
        sc = sample_scenario(3, 3)
        again = cli.parse_scenario(cli.scenario_to_dict(sc))
        assert again == sc

    def test_minimal_form_samples(self):
        sc = cli.parse_scenario({"n": 3, "seed": 5})
        assert sc == sample_scenario(5, 3)

    def test_minimal_form_with_override(self):
        sc = cli.parse_scenario({"n": 2, "seed": 1, "horizon": 42})
        assert sc.horizon == 42

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            cli.parse_scenario({"n": 2, "seed": 0, "horizn": 9})

    def test_missing_required_keys(self):
        with pytest.raises(ValueError):
            cli.parse_scenario({"n": 2})

    def test_margin_invariant_enforced(self):
        with pytest.raises(ValueError):
            cli.parse_scenario({"n": 2, "seed": 0, "d_plan": 0.1, "d_col": 0.2})


class TestRunCommand:
    def test_run_writes_trace_and_summary(self, tmp_path, capsys):
        path, _ = _write_scenario(tmp_path)
        out = tmp_path / "trace.jsonl"
        code = cli.main(
            ["run", "--scenario", str(path), "--planner", "fcfs", "--timeout", "6.0", "--out", str(out)]
        )
        assert code == cli.EXIT_OK
        lines = out.read_text().splitlines()
        header = json.loads(lines[0])
        assert header["schema_version"] == cli.SCHEMA_VERSION
        assert "scenario" in header
        rec = json.loads(lines[1])
        assert {"t", "states", "controls", "permutation", "stage_cost"} <= set(rec)
        summary = capsys.readouterr().out.splitlines()
        assert summary[0].split("\t")[:2] == ["planner", "N"]
        assert summary[1].split("\t")[0] == "fcfs"

    def test_out_directory_gets_default_name(self, tmp_path):
        path, _ = _write_scenario(tmp_path)
        out_dir = tmp_path / "traces"
        out_dir.mkdir()
        code = cli.main(
            ["run", "--scenario", str(path), "--planner", "fcfs", "--seed", "3", "--timeout", "4.0", "--out", str(out_dir)]
        )
        assert code == cli.EXIT_OK
        assert (out_dir / "trace_fcfs_seed3.jsonl").exists()

    def test_missing_scenario_file_is_usage_error(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        code = cli.main(["run", "--scenario", str(missing)])
        assert code == cli.EXIT_USAGE
        assert "nope.json" in capsys.readouterr().err

    def test_brute_force_cap_is_usage_error(self, capsys):
        code = cli.main(["run", "--planner", "brute", "--n", "9", "--timeout", "2.0"])
        assert code == cli.EXIT_USAGE
        assert "cap" in capsys.readouterr().err

    def test_bad_planner_is_usage_error(self):
        assert cli.main(["run", "--planner", "psychic"]) == cli.EXIT_USAGE

    def test_verify_oracle_run(self, tmp_path, capsys):
        path, _ = _write_scenario(tmp_path)
        code = cli.main(
            ["run", "--scenario", str(path), "--planner", "bnp", "--timeout", "5.0", "--verify-oracle"]
        )
        assert code == cli.EXIT_OK
        summary = capsys.readouterr().out.splitlines()
        assert "verify_ok" in summary[0].split("\t")
        assert "True" in summary[1].split("\t")


class TestSweepCommand:
    def test_sweep_aggregates_planners(self, tmp_path, capsys):
        out = tmp_path / "summary.json"
        code = cli.main(
            [
                "sweep",
                "--n",
                "2",
                "--planner",
                "bnp,fcfs,random",
                "--seeds",
                "3",
                "--timeout",
                "6.0",
                "--out",
                str(out),
            ]
        )
        assert code == cli.EXIT_OK
        payload = json.loads(out.read_text())
        assert payload["schema_version"] == cli.SCHEMA_VERSION
        assert len(payload["rows"]) == 3
        assert {r["planner"] for r in payload["rows"]} == {"bnp", "fcfs", "random"}
        assert len(payload["trials"]) == 9
        summary = capsys.readouterr().out.splitlines()
        assert len(summary) == 4  # header + one row per planner

    def test_empty_planner_list_is_usage_error(self):
        assert cli.main(["sweep", "--planner", "", "--seeds", "1"]) == cli.EXIT_USAGE

    def test_fcfs_row_normalized_to_one(self, tmp_path):
        out = tmp_path / "s.json"
        code = cli.main(
            ["sweep", "--n", "2", "--planner", "fcfs", "--seeds", "2", "--timeout", "5.0", "--out", str(out)]
        )
        assert code == cli.EXIT_OK
        rows = json.loads(out.read_text())["rows"]
        assert rows[0]["cost_mean"] == pytest.approx(1.0)


class TestScenarioSerialization:
    def test_emit_parse_identity_all_fields(self):
        sc = sample_scenario(11, 4)
        d = json.loads(json.dumps(cli.scenario_to_dict(sc, seed=11)))
        sc2 = cli.parse_scenario(d)
        assert isinstance(sc2, Scenario)
        assert sc2 == sc
