import math
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import PENDULUM_STEP
from lusolve import banddyn
from lusolve.asymptotic import asymptotic_future
from lusolve.banddyn import (
    Degeneracy,
    Reception,
    StabilityTag,
    check_neighboring,
    classify_neighboring,
    conservative_locator,
    default_eps_list,
    detect_degeneracy,
    stability_verdict,
)
from lusolve.errors import NonNeighboringError, PreconditionError
from lusolve.fieldspec import Field
from lusolve.periodic import make_orbit

TWO_PI = 2 * math.pi
COARSE = TWO_PI / 256


@pytest.fixture(scope="module")
def weak_pendulum():
    # u'' = -0.1 sin(u), conservative
    return Field.from_expression("a*sin(u)", 1.0, {"a": 0.1})


@pytest.fixture(scope="module")
def free_report(free):
    h = 1 / 64
    alpha, beta = make_orbit(free, 0.0, 0.0, h), make_orbit(free, 1.0, 0.0, h)
    return detect_degeneracy(free, alpha, beta, grid_s=17, v_bound=2.0, n_scan=64, h=h)


@pytest.fixture(scope="module")
def saddles(pendulum):
    return make_orbit(pendulum, -math.pi, 0.0, COARSE), make_orbit(pendulum, math.pi, 0.0, COARSE)


# ---------------------------------------------------------------------------
# Neighboring classification
# ---------------------------------------------------------------------------

def test_concave_returns_push_up_to_beta(weak_pendulum):
    h = 1 / 512
    alpha = make_orbit(weak_pendulum, 0.0, 0.0, h)
    beta = make_orbit(weak_pendulum, math.pi, 0.0, h)
    result = classify_neighboring(
        weak_pendulum, alpha, beta, eps_list=default_eps_list(alpha, beta, 2), grid=8, v_bound=2.0, n_scan=256, h=h
    )
    assert result.verdict is Reception.BETA
    assert [f.family_sign for f in result.families] == ["all-positive", "all-positive"]
    assert result.as_dict()["verdict"] == "beta-receives"
    assert result.barriers_ok


def test_damped_band_below_the_saddle_is_received_by_beta(pendulum):
    alpha = make_orbit(pendulum, 0.0, 0.0, PENDULUM_STEP)
    beta = make_orbit(pendulum, math.pi, 0.0, PENDULUM_STEP)
    result = classify_neighboring(
        pendulum, alpha, beta, eps_list=default_eps_list(alpha, beta, 2), grid=8, v_bound=3.0, n_scan=256,
        h=PENDULUM_STEP,
    )
    assert result.verdict is Reception.BETA
    assert result.barriers_ok


def test_failed_barrier_replay_downgrades_the_verdict(weak_pendulum, monkeypatch):
    monkeypatch.setattr(banddyn, "verify_lower", lambda curve, field: SimpleNamespace(passed=False))
    h = 1 / 512
    alpha = make_orbit(weak_pendulum, 0.0, 0.0, h)
    beta = make_orbit(weak_pendulum, math.pi, 0.0, h)
    result = classify_neighboring(
        weak_pendulum, alpha, beta, eps_list=default_eps_list(alpha, beta, 1), grid=4, v_bound=2.0, n_scan=256, h=h
    )
    assert result.verdict is Reception.INCONCLUSIVE
    assert not result.barriers_ok
    assert result.as_dict()["barriers_ok"] is False
    assert not any(e.barriers_ok for f in result.families for e in f.entries)


def test_default_epsilons_shrink():
    class End:
        def __init__(self, u0):
            self.u0 = u0

    assert default_eps_list(End(0.0), End(4.0), 3) == [0.5, 0.25, 0.125]


def test_orbit_between_endpoints_is_detected(pendulum, saddles):
    with pytest.raises(NonNeighboringError):
        check_neighboring(pendulum, *saddles, v_bound=3.0, grid=8, h=COARSE)


# ---------------------------------------------------------------------------
# Degeneracy
# ---------------------------------------------------------------------------

def test_linear_drag_band_is_degenerate():
    field = Field.from_expression("v", 1.0)
    h = 1 / 256
    alpha, beta = make_orbit(field, 0.0, 0.0, h), make_orbit(field, 1.0, 0.0, h)
    report = detect_degeneracy(field, alpha, beta, grid_s=17, v_bound=2.0, n_scan=128, h=h)
    assert report.verdict is Degeneracy.DEGENERATE
    # Psi(t, s) = s
    np.testing.assert_allclose(report.psi_matrix()[:, 0], report.s_grid, atol=1e-8)
    np.testing.assert_allclose(report.psi_matrix()[:, -1], report.s_grid, atol=1e-8)
    assert report.as_dict()["psi_u0"][8] == pytest.approx(0.5, abs=1e-8)


def test_gap_around_stable_equilibrium(pendulum, saddles):
    report = detect_degeneracy(pendulum, *saddles, grid_s=9, v_bound=3.0, n_scan=128, h=COARSE)
    assert report.verdict is Degeneracy.GAP_FOUND
    lower, upper = report.gap_bracket
    assert lower.u0 == pytest.approx(-math.pi, abs=1e-8)
    assert upper.u0 == pytest.approx(0.0, abs=1e-8)
    assert report.as_dict()["gap_bracket"] == pytest.approx([-math.pi, 0.0], abs=1e-8)


def test_degeneracy_needs_ordered_endpoints(pendulum, saddles):
    with pytest.raises(PreconditionError):
        detect_degeneracy(pendulum, saddles[1], saddles[0], grid_s=5, v_bound=3.0, h=COARSE)


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------

def test_saddle_without_witness_is_floquet_unstable(pendulum, saddle):
    verdict = stability_verdict(pendulum, saddle)
    assert verdict.tag is StabilityTag.FLOQUET_UNSTABLE
    assert verdict.as_dict()["witnesses"] == 0


def test_saddle_with_asymptotic_witness_is_certified(pendulum, narrow_band, saddle):
    run = asymptotic_future(pendulum, narrow_band, saddle, math.pi / 2, N=3, n_scan=256, v_bound=3.0)
    verdict = stability_verdict(pendulum, saddle, [run])
    assert verdict.tag is StabilityTag.UNSTABLE_CERTIFIED
    assert verdict.witnesses == [run]


def test_damped_equilibrium_is_numerically_stable(pendulum):
    orbit = make_orbit(pendulum, 0.0, 0.0, COARSE)
    verdict = stability_verdict(pendulum, orbit, count=16, periods=5)
    assert verdict.tag is StabilityTag.NUMERICALLY_STABLE
    assert verdict.max_multiplier == pytest.approx(math.exp(-0.2 * math.pi), rel=1e-5)


def test_parabolic_orbit_is_inconclusive(free):
    orbit = make_orbit(free, 0.5, 0.0, 1 / 64)
    assert stability_verdict(free, orbit).tag is StabilityTag.INCONCLUSIVE


# ---------------------------------------------------------------------------
# Conservative locator
# ---------------------------------------------------------------------------

def test_free_band_is_degenerate(free_report):
    assert free_report.verdict is Degeneracy.DEGENERATE
    assert len(free_report.psi_samples) == 17


@pytest.mark.parametrize("start", ["alpha", "beta"])
def test_push_off_drifts_across_the_band(free, free_report, start):
    trace, verdict = conservative_locator(free, free_report, start=start, epsilon=0.01, max_periods=200)
    assert trace.escaped
    assert trace.plateau is None
    assert trace.exit_time == pytest.approx(100.0, abs=1.0)
    assert np.all(np.diff(trace.s_of_t) >= -1e-8)
    assert verdict.tag is StabilityTag.UNSTABLE_CERTIFIED
    assert verdict.orbit is trace.start_orbit


@pytest.mark.parametrize("kwargs", [
    {"epsilon": 0.0},
    {"start": "gamma"},
])
def test_locator_rejects_bad_arguments(free, free_report, kwargs):
    with pytest.raises(PreconditionError):
        conservative_locator(free, free_report, **kwargs)


def test_locator_needs_conservative_field(pendulum, free_report):
    with pytest.raises(PreconditionError):
        conservative_locator(pendulum, free_report)
