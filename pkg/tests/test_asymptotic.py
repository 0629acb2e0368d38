import math

import numpy as np
import pytest

from conftest import LAMBDA_MINUS, LAMBDA_PLUS, PENDULUM_STEP, TWO_PI
from lusolve.asymptotic import asymptotic_future, asymptotic_past, lower_lift, manifold_sweep, reverse_orbit
from lusolve.curves import Band, Curve, verify_lower
from lusolve.errors import PreconditionError
from lusolve.fieldspec import Field
from lusolve.periodic import make_orbit

OPTIONS = {"n_scan": 256, "h": PENDULUM_STEP, "v_bound": 3.0}


@pytest.fixture(scope="module")
def future_run(pendulum, narrow_band, saddle):
    return asymptotic_future(pendulum, narrow_band, saddle, math.pi / 2, N=3, **OPTIONS)



@pytest.fixture(scope="module")
def lower_half():
    # alpha = 0 and the saddle beta = pi; the band classifies as beta-receives
    return Band(Curve.constant(0.0, TWO_PI, "alpha"), Curve.constant(math.pi, TWO_PI, "beta"))

# ---------------------------------------------------------------------------
# Future runs
# ---------------------------------------------------------------------------

def test_run_from_lower_barrier_converges(future_run):
    assert future_run.converged
    assert future_run.convergence_profile[-1] < 1e-4
    assert future_run.limit.u[0] == pytest.approx(math.pi / 2)
    assert future_run.direction == "future"
    assert not future_run.mirrored


def test_run_approaches_along_stable_direction(future_run):
    assert future_run.terminal_slope == pytest.approx(LAMBDA_MINUS, abs=1e-3)
    assert future_run.initial_velocity > 0


def test_run_is_monotone_in_n_and_phase(future_run):
    assert all(slack >= -1e-7 for slack in future_run.phase_slacks.values())
    assert [entry["n"] for entry in future_run.sequence_log] == [1, 2, 3]
    assert future_run.sequence_log[0]["distance"] is None


def test_run_certifies_saddle_instability(future_run):
    assert future_run.certifies_instability
    summary = future_run.as_dict()
    assert summary["certifies_instability"] is True
    assert summary["d"] == future_run.convergence_profile


def test_run_from_above_goes_through_the_mirror(pendulum, narrow_band, saddle, future_run):
    run = asymptotic_future(pendulum, narrow_band, saddle, 3 * math.pi / 2, N=3, **OPTIONS)
    assert run.mirrored
    assert run.limit.u[0] == pytest.approx(3 * math.pi / 2)
    # f(t, -u, -v) = -f(t, u, v) for the pendulum
    assert run.initial_velocity == pytest.approx(-future_run.initial_velocity, abs=1e-6)
    assert run.terminal_slope == pytest.approx(LAMBDA_MINUS, abs=1e-3)


def test_past_run_leaves_along_unstable_direction(pendulum, narrow_band, saddle):
    run = asymptotic_past(pendulum, narrow_band, saddle, math.pi / 2, N=4, **OPTIONS)
    assert run.direction == "past"
    assert run.converged
    assert run.limit.t[0] == 0.0
    assert run.limit.u[0] == pytest.approx(math.pi / 2)
    assert run.terminal_slope == pytest.approx(LAMBDA_PLUS, abs=1e-3)



def test_long_horizon_run(pendulum, narrow_band, saddle, future_run):
    run = asymptotic_future(pendulum, narrow_band, saddle, math.pi / 2, N=8, **OPTIONS)
    assert run.converged
    assert len(run.convergence_profile) == 8
    assert run.convergence_profile[-1] < 1e-4
    assert run.initial_velocity == pytest.approx(future_run.initial_velocity, abs=1e-6)
    assert all(slack >= -1e-7 for slack in run.phase_slacks.values())


def test_run_towards_the_receiving_endpoint_from_a_lift(pendulum, lower_half, saddle):
    # the lifted barrier is a quintic fit of samples on the test grid
    run = asymptotic_future(pendulum, lower_half, saddle, 0.5, N=4, **OPTIONS)
    assert run.converged
    assert run.barrier(0.0) == pytest.approx(0.5, abs=1e-9)
    assert run.limit.u[0] == pytest.approx(0.5, abs=1e-9)
    assert run.terminal_slope == pytest.approx(LAMBDA_MINUS, abs=1e-3)
    assert run.certifies_instability


def test_past_construction_inverts_the_future_one(pendulum, narrow_band, saddle, future_run):
    reversed_field = pendulum.reversed()
    run = asymptotic_past(
        reversed_field, narrow_band.reversed(), reverse_orbit(saddle, reversed_field), math.pi / 2, N=3, **OPTIONS
    )
    assert run.converged
    back = run.limit.time_reversed()
    np.testing.assert_allclose(back.t, future_run.limit.t, atol=1e-12)
    np.testing.assert_allclose(back.u, future_run.limit.u, atol=1e-6)
    assert run.terminal_slope == pytest.approx(-LAMBDA_MINUS, abs=1e-3)


def test_reversible_field_mirrors_past_and_future():
    # u'' = -sin u is invariant under t -> -t: the past branch is the future one run backwards
    field = Field.from_expression("sin(u)", TWO_PI)
    band = Band(Curve.constant(0.0, TWO_PI, "alpha"), Curve.constant(math.pi, TWO_PI, "beta"))
    top = make_orbit(field, math.pi, 0.0, PENDULUM_STEP)
    future = asymptotic_future(field, band, top, 0.0, N=3, **OPTIONS)
    past = asymptotic_past(field, band, top, 0.0, N=3, **OPTIONS)
    # separatrix through u = 0 with energy v^2/2 - cos u = 1
    assert future.initial_velocity == pytest.approx(2.0, abs=1e-4)
    assert past.initial_velocity == pytest.approx(-future.initial_velocity, abs=1e-6)
    np.testing.assert_allclose(past.limit.t, -future.limit.t, atol=1e-12)
    np.testing.assert_allclose(past.limit.u, future.limit.u, atol=1e-6)

@pytest.mark.parametrize("u0", [1.0, math.pi])
def test_inadmissible_start_rejected(pendulum, narrow_band, saddle, u0):
    with pytest.raises(PreconditionError):
        asymptotic_future(pendulum, narrow_band, saddle, u0, N=2, **OPTIONS)


def test_start_on_coinciding_barrier_and_orbit(free, unit_band):
    target = make_orbit(free, 0.0, 0.0, 1 / 64)
    run = asymptotic_future(free, unit_band, target, 0.0, N=3, n_scan=64, h=1 / 64, v_bound=1.0)
    assert run.converged
    assert run.terminal_slope is None
    assert not run.certifies_instability


# ---------------------------------------------------------------------------
# Lifted barriers
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("u0", [1.8, 2.4, 2.8])
def test_lift_is_a_corner_lower_solution(pendulum, narrow_band, saddle, u0):
    lifted = lower_lift(pendulum, narrow_band, saddle, u0, n_scan=256, h=PENDULUM_STEP, v_bound=3.0)
    assert lifted(0.0) == pytest.approx(u0, abs=1e-9)
    assert verify_lower(lifted, pendulum).passed
    corner = next(c for c in lifted.corners if abs(c.t) < 1e-9)
    assert corner.right_deriv > corner.left_deriv



def test_lift_passes_at_the_test_grid(pendulum, lower_half, saddle):
    lifted = lower_lift(pendulum, lower_half, saddle, 0.5, n_scan=256, h=PENDULUM_STEP, v_bound=3.0)
    verdict = verify_lower(lifted, pendulum)
    assert verdict.passed
    assert verdict.max_residual <= verdict.tol_res

@pytest.mark.parametrize("u0", [math.pi / 2, math.pi, 4.0])
def test_lift_outside_open_interval_rejected(pendulum, narrow_band, saddle, u0):
    with pytest.raises(PreconditionError):
        lower_lift(pendulum, narrow_band, saddle, u0, n_scan=256, h=PENDULUM_STEP, v_bound=3.0)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def test_sweep_keeps_job_order_and_collects_failures(pendulum, narrow_band, saddle):
    sample = manifold_sweep(
        pendulum, narrow_band, saddle, [math.pi / 2, 1.0, 3 * math.pi / 2], N=3,
        directions=("future",), threads=2, **OPTIONS,
    )
    assert [p[0] for p in sample.points] == [math.pi / 2, 3 * math.pi / 2]
    assert sample.points[0][1] == pytest.approx(-sample.points[1][1], abs=1e-6)
    assert [f[0] for f in sample.failures] == [1.0]
    assert sample.as_dict()["failures"][0]["direction"] == "future"


def test_empty_sweep(pendulum, narrow_band, saddle):
    sample = manifold_sweep(pendulum, narrow_band, saddle, [], N=3)
    assert sample.points == [] and sample.failures == []


def test_sweep_samples_a_monotone_branch(pendulum, narrow_band, saddle):
    positions = np.linspace(math.pi / 2, math.pi, 16, endpoint=False)
    sample = manifold_sweep(pendulum, narrow_band, saddle, positions, N=3, directions=("future",), **OPTIONS)
    assert sample.failures == []
    assert all(run.converged for run in sample.runs)
    v = np.array([p[1] for p in sample.points])
    assert len(v) == 16
    # the stable branch falls to zero velocity at the saddle
    assert np.all(np.diff(v) < 0)
    assert np.all(v > 0)
