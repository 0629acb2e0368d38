import math
from pathlib import Path

import pytest

from lusolve.errors import ProblemFileError
from lusolve.modify import ModifiedField
from lusolve.problem import apply_overrides, evaluate_scalar, load_problem, parse_problem

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"

PENDULUM_TOML = """\
name = "pendulum"
f = "c*v + a*sin(u)"
period = "2*pi"

[params]
c = 0.2
a = 1.0

[alpha]
expr = "pi/2"

[beta]
expr = "3*pi/2"

[solver]
velocity_bound = 3.0
"""


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------

def test_pendulum_problem_builds():
    problem = parse_problem(PENDULUM_TOML)
    assert problem.name == "pendulum"
    assert problem.field.period == pytest.approx(2 * math.pi)
    assert problem.field(0.0, math.pi / 2, 1.0) == pytest.approx(1.2)
    assert problem.band.width == pytest.approx(math.pi)
    assert problem.phi is None
    assert problem.working_field is problem.field
    assert problem.velocity_bound == 3.0
    assert problem.step == pytest.approx(2 * math.pi / 2048)


def test_nagumo_block_switches_to_modified_field():
    problem = parse_problem(PENDULUM_TOML + '\n[nagumo]\nphi = "c*v + a"\n')
    assert isinstance(problem.working_field, ModifiedField)
    assert problem.velocity_bound is None


def test_piecewise_barrier():
    text = PENDULUM_TOML.replace(
        '[alpha]\nexpr = "pi/2"',
        '[alpha]\npieces = [{start = 0, expr = "pi/2"}, {start = "pi", expr = "pi/2"}]',
    )
    problem = parse_problem(text)
    assert problem.band.lower(4.0) == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("value,expected", [
    (1.5, 1.5),
    ("2*pi", 2 * math.pi),
    ("k/2", 3.0),
])
def test_scalars(value, expected):
    assert evaluate_scalar(value, {"k": 6.0}) == pytest.approx(expected)


@pytest.mark.parametrize("path", sorted(PROBLEMS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_problems_load(path):
    problem = load_problem(path)
    assert problem.spec.fixtures
    assert problem.name == path.stem


# ---------------------------------------------------------------------------
# Overrides and digests
# ---------------------------------------------------------------------------

def test_overrides_are_read_as_toml_values():
    data = apply_overrides({"solver": {"horizon": 8}}, ["solver.horizon=6", "asymptotic.target=max", "f=u + v"])
    assert data["solver"]["horizon"] == 6
    assert data["asymptotic"]["target"] == "max"
    assert data["f"] == "u + v"


def test_override_without_value_rejected():
    with pytest.raises(ProblemFileError):
        apply_overrides({}, ["solver.horizon"])


def test_digest_tracks_overrides():
    plain = parse_problem(PENDULUM_TOML)
    again = parse_problem(PENDULUM_TOML)
    changed = parse_problem(PENDULUM_TOML, overrides=["solver.horizon=6"])
    assert plain.digest == again.digest
    assert plain.digest != changed.digest
    assert changed.solver.horizon == 6


# ---------------------------------------------------------------------------
# Errors carry a location
# ---------------------------------------------------------------------------

def test_unknown_key_reports_its_line():
    with pytest.raises(ProblemFileError) as info:
        parse_problem(PENDULUM_TOML + "horizn = 3\n", "p.toml")
    assert info.value.line == 17
    assert "horizn" in str(info.value)


def test_bad_expression_reports_line():
    with pytest.raises(ProblemFileError) as info:
        parse_problem(PENDULUM_TOML.replace('f = "c*v + a*sin(u)"', 'f = "c*v +"'))
    assert info.value.line == 2


def test_toml_syntax_error_reports_line():
    with pytest.raises(ProblemFileError) as info:
        parse_problem('name = "x"\nf = \n')
    assert info.value.line == 2


def test_crossing_barriers_rejected():
    with pytest.raises(ProblemFileError):
        parse_problem(PENDULUM_TOML.replace('expr = "3*pi/2"', 'expr = "0"'))


def test_curve_needs_exactly_one_form():
    with pytest.raises(ProblemFileError):
        parse_problem(PENDULUM_TOML.replace('[alpha]\nexpr = "pi/2"', "[alpha]\n"))


def test_fixture_cannot_run_report():
    with pytest.raises(ProblemFileError):
        parse_problem(PENDULUM_TOML + '\n[[fixtures]]\ncommand = "report"\npath = "x"\nexpected = 1.0\n')


def test_missing_file():
    with pytest.raises(ProblemFileError):
        load_problem(Path("does-not-exist.toml"))
