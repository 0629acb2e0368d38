import json
from pathlib import Path

import pytest

from lusolve.errors import PreconditionError
from lusolve.handlers import fixture_matches, resolve_path
from lusolve.main import main
from utils.run_fixtures import main as run_fixtures

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"

STEEP_TOML = """\
name = "steep"
f = "-10"
period = 1.0

[alpha]
expr = "0"

[beta]
expr = "1"

[dirichlet]
b = 1.0
y_a = 0.0
y_b = 1.0

[solver]
velocity_bound = 20.0
steps_per_period = 64
n_scan = 64
"""

# three solutions: zero and a mirrored pair of half swings
SWING_TOML = """\
name = "swing"
f = "sin(u)"
period = 4.0

[alpha]
expr = "-pi"

[beta]
expr = "pi"

[dirichlet]
b = 4.0
y_a = 0.0
y_b = 0.0

[solver]
velocity_bound = 3.0
steps_per_period = 256
n_scan = 256
"""


def _report(out: Path, name: str, command: str) -> dict:
    return json.loads((out / name / command / "report.json").read_text())


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def test_verify_pendulum(tmp_path, capsys):
    assert main(["run", "verify", str(PROBLEMS / "pendulum.toml"), "--out", str(tmp_path)]) == 0
    report = _report(tmp_path, "pendulum", "verify")
    assert report["status"] == "pass"
    assert report["outputs"]["nagumo"]["status"] == "satisfied"
    assert report["outputs"]["ordering"] == "strictly ordered"
    assert (tmp_path / "pendulum" / "verify" / "band.svg").exists()
    assert (tmp_path / "pendulum" / "verify" / "timing.json").exists()
    assert "pass: " in capsys.readouterr().out


def test_reports_are_byte_identical_across_runs(tmp_path):
    args = ["run", "dirichlet", str(PROBLEMS / "free.toml")]
    main(args + ["--out", str(tmp_path / "one")])
    main(args + ["--out", str(tmp_path / "two"), "--threads", "2"])
    for name in ("report.json", "index.json", "solution_00.csv", "dirichlet.svg"):
        first = (tmp_path / "one" / "free" / "dirichlet" / name).read_bytes()
        second = (tmp_path / "two" / "free" / "dirichlet" / name).read_bytes()
        assert first == second


def test_dirichlet_with_override(tmp_path):
    code = main(["run", "dirichlet", str(PROBLEMS / "free.toml"), "--set", "dirichlet.y_b=0.5", "--out", str(tmp_path)])
    assert code == 0
    assert _report(tmp_path, "free", "dirichlet")["outputs"]["v0_list"] == pytest.approx([0.5], abs=1e-8)


def test_dirichlet_writes_every_solution(tmp_path):
    problem = tmp_path / "swing.toml"
    problem.write_text(SWING_TOML)
    assert main(["run", "dirichlet", str(problem), "--out", str(tmp_path)]) == 0
    out = tmp_path / "swing" / "dirichlet"
    index = json.loads((out / "index.json").read_text())
    assert index["count"] == 3
    assert index["files"] == ["solution_00.csv", "solution_01.csv", "solution_02.csv"]
    assert index["v0_list"] == _report(tmp_path, "swing", "dirichlet")["outputs"]["v0_list"]
    for name in index["files"]:
        assert (out / name).read_text().startswith("t,u,")
    assert not (out / "maximal.csv").exists()


def test_modify_constants_are_flat(tmp_path):
    assert main(["run", "modify", str(PROBLEMS / "pendulum.toml"), "--out", str(tmp_path)]) == 0
    outputs = _report(tmp_path, "pendulum", "modify")["outputs"]
    assert outputs["K"] == pytest.approx(3.0)
    constants = json.loads((tmp_path / "pendulum" / "modify" / "constants.json").read_text())
    assert sorted(constants) == ["K", "M", "b_bound", "epsilon"]
    assert constants == {key: outputs[key] for key in constants}


def test_asymptotic_profile_files(tmp_path):
    overrides = ["solver.horizon=3", "solver.steps_per_period=1024", "solver.n_scan=256"]
    args = ["run", "asymptotic", str(PROBLEMS / "pendulum.toml"), "--out", str(tmp_path)]
    for item in overrides:
        args += ["--set", item]
    assert main(args) == 0
    profile = json.loads((tmp_path / "pendulum" / "asymptotic" / "profile_00_future.json").read_text())
    assert list(profile) == ["d"]
    assert len(profile["d"]) == 3
    assert profile["d"] == _report(tmp_path, "pendulum", "asymptotic")["outputs"]["runs"][0]["d"]


def test_missing_solution_is_a_negative_verdict(tmp_path):
    problem = tmp_path / "steep.toml"
    problem.write_text(STEEP_TOML)
    assert main(["run", "dirichlet", str(problem), "--out", str(tmp_path)]) == 2
    report = _report(tmp_path, "steep", "dirichlet")
    assert report["status"] == "negative"
    assert report["outputs"]["count"] == 0


def test_command_precondition_is_an_error(tmp_path, capsys):
    # free.toml declares no Nagumo function
    assert main(["run", "modify", str(PROBLEMS / "free.toml"), "--out", str(tmp_path)]) == 1
    report = _report(tmp_path, "free", "modify")
    assert report["status"] == "error"
    assert "nagumo" in report["error"]
    assert "nagumo" in capsys.readouterr().err


def test_broken_problem_file(tmp_path, capsys):
    problem = tmp_path / "broken.toml"
    problem.write_text('name = "broken"\nf = "u +"\nperiod = 1.0\n[alpha]\nexpr = "0"\n[beta]\nexpr = "1"\n')
    assert main(["run", "verify", str(problem), "--out", str(tmp_path)]) == 1
    assert "broken.toml:2" in capsys.readouterr().err


def test_bad_thread_count(tmp_path):
    assert main(["run", "verify", str(PROBLEMS / "free.toml"), "--threads", "0", "--out", str(tmp_path)]) == 1


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert "lusolve 1.0.0" in capsys.readouterr().out


def test_fixture_report(tmp_path):
    assert main(["run", "report", str(PROBLEMS / "free.toml"), "--out", str(tmp_path)]) == 0
    outputs = _report(tmp_path, "free", "report")["outputs"]
    assert outputs["passed"] == outputs["total"] == 4


def test_fixture_runner(tmp_path, capsys):
    assert run_fixtures([str(PROBLEMS / "free.toml"), "--out", str(tmp_path)]) == 0
    assert "4/4" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------

def test_plot_csv_in_band(tmp_path):
    main(["run", "dirichlet", str(PROBLEMS / "free.toml"), "--out", str(tmp_path)])
    csv = tmp_path / "free" / "dirichlet" / "solution_00.csv"
    svg = tmp_path / "plot.svg"
    assert main(["plot", str(PROBLEMS / "free.toml"), str(csv), "-o", str(svg)]) == 0
    assert svg.read_text().startswith("<?xml")


# ---------------------------------------------------------------------------
# Fixture lookups
# ---------------------------------------------------------------------------

def test_resolve_path():
    data = {"orbits": [{"u0": 1.5}], "status": "pass"}
    assert resolve_path(data, "orbits.0.u0") == 1.5
    assert resolve_path(data, "status") == "pass"
    with pytest.raises(PreconditionError):
        resolve_path(data, "orbits.3.u0")
    with pytest.raises(PreconditionError):
        resolve_path(data, "status.x")


@pytest.mark.parametrize("actual,expected,tol,result", [
    (1.0000001, 1.0, 1e-6, True),
    (1.1, 1.0, 1e-6, False),
    (True, True, 0.0, True),
    (1, True, 0.0, False),
    ("degenerate", "degenerate", 0.0, True),
    (None, 1.0, 1.0, False),
])
def test_fixture_matches(actual, expected, tol, result):
    assert fixture_matches(actual, expected, tol) is result
