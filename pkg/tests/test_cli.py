"""Command-line entry points: outputs, run log, exit codes."""

import json

import pytest

from voltfill.cli import main

FAST_SOLVER = ("weight_ohm = 10\nweight_vlin = 10\nweight_vmag = 10\n"
               "weight_slack = 10\nmax_iter = 600\nstandardize = true\n")


@pytest.fixture()
def fast_solver(tmp_path):
    p = tmp_path / "solver.cfg"
    p.write_text(FAST_SOLVER)
    return p


def _log_lines(out_dir):
    return [json.loads(line)
            for line in (out_dir / "run_log.jsonl").read_text().splitlines()]


def test_pf_writes_state(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["pf", "--out", str(out)]) == 0
    assert (out / "pf_state.csv").exists()
    text = capsys.readouterr().out
    assert "33 buses" in text
    log = _log_lines(out)
    assert log[0]["config_sha256"]
    assert log[0]["outputs"]


def test_lin_reports_error(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["lin", "--out", str(out)]) == 0
    assert (out / "lin_report.csv").exists()
    assert "max error" in capsys.readouterr().out


def test_estimate_roundtrip(tmp_path, fast_solver, capsys):
    scn = tmp_path / "scn.cfg"
    scn.write_text("kind = random\nfraction = 0.8\n")
    out = tmp_path / "o"
    code = main(["estimate", "--scenario", str(scn), "--seed", "4",
                 "--solver", str(fast_solver), "--out", str(out)])
    assert code == 0
    assert (out / "estimate_state.csv").exists()
    assert (out / "estimate_summary.csv").exists()
    assert "MAPE" in capsys.readouterr().out
    resolved = _log_lines(out)[0]["resolved"]
    assert resolved["solver"]["max_iter"] == 600
    assert resolved["seed"] == 4


def test_estimate_wls_estimator(tmp_path, capsys):
    scn = tmp_path / "scn.cfg"
    scn.write_text("kind = random\nfraction = 1.0\n")
    out = tmp_path / "o"
    assert main(["estimate", "--scenario", str(scn), "--estimator", "wls",
                 "--out", str(out)]) == 0
    assert "MAPE" in capsys.readouterr().out


def test_estimate_failure_exits_one(tmp_path, capsys):
    scn = tmp_path / "scn.cfg"
    scn.write_text("kind = random\nfraction = 0.2\n")
    out = tmp_path / "o"
    code = main(["estimate", "--scenario", str(scn), "--estimator", "wls",
                 "--out", str(out)])
    assert code == 1
    assert "failed" in capsys.readouterr().err


def test_bad_scenario_exits_one(tmp_path, capsys):
    scn = tmp_path / "scn.cfg"
    scn.write_text("kind = nonsense\n")
    code = main(["estimate", "--scenario", str(scn),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_missing_case_exits_one(tmp_path, capsys):
    code = main(["pf", "--case", str(tmp_path / "nope.txt"),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    capsys.readouterr()


def test_strict_flags_nonconverged(tmp_path, capsys):
    # Starved iteration budget: the run completes but is not converged,
    # which --strict maps to exit code 2.
    slow = tmp_path / "solver.cfg"
    slow.write_text("max_iter = 40\nstandardize = true\n")
    scn = tmp_path / "scn.cfg"
    scn.write_text("kind = random\nfraction = 0.8\n")
    out = tmp_path / "o"
    code = main(["estimate", "--scenario", str(scn), "--solver", str(slow),
                 "--seed", "1", "--strict", "--out", str(out)])
    assert code == 2
    assert "not converged" in capsys.readouterr().out
    # Without --strict the same run exits 0.
    code = main(["estimate", "--scenario", str(scn), "--solver", str(slow),
                 "--seed", "1", "--out", str(out)])
    assert code == 0
    capsys.readouterr()


def test_ts_subcommand(tmp_path, fast_solver, capsys):
    out = tmp_path / "o"
    code = main(["ts", "--steps", "1", "--seed", "2",
                 "--solver", str(fast_solver), "--out", str(out)])
    assert code == 0
    assert (out / "ts.csv").exists()
    assert (out / "ts.png").exists()
    assert "steps" in capsys.readouterr().out


def test_bench_fig4_small(tmp_path, fast_solver, capsys):
    out = tmp_path / "o"
    code = main(["bench", "fig4", "--runs", "1", "--seed", "7",
                 "--solver", str(fast_solver), "--out", str(out)])
    assert code == 0
    assert (out / "fig4.csv").exists()
    assert (out / "fig4.png").exists()
    log = _log_lines(out)
    assert log[0]["resolved"]["figure"] == "fig4"
    capsys.readouterr()
