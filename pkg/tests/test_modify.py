import math

import numpy as np
import pytest

from conftest import PENDULUM_STEP
from lusolve.curves import verify_lower, verify_upper
from lusolve.errors import PreconditionError
from lusolve.fieldspec import NagumoSpec
from lusolve.flow import integrate, integrate_batch
from lusolve.modify import MARGIN, SolutionKind, build_modified, delta, gamma, same_solution_filter
from lusolve.periodic import find_periodic

TWO_PI = 2 * math.pi


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

def test_speed_bound_is_the_smallest_admissible_on_the_grid(modified, phi):
    # integral of v/(0.2 v + 1) over [0, K] is 5K - 25 ln(1 + K/5); the exact minimum is about 2.943
    assert 3.0 <= modified.K <= 4.0
    assert modified.K == 3.0
    assert phi.integral(0.0, modified.K) >= math.pi * (1 + MARGIN)
    # one grid step (0.25) lower is not admissible
    assert phi.integral(0.0, modified.K - 0.25) < math.pi * (1 + MARGIN)


def test_epsilon_leaves_the_gap(modified, phi):
    assert 0 < modified.epsilon < modified.K
    assert phi.integral(modified.epsilon, modified.K) == pytest.approx(math.pi, rel=1e-4)


def test_suprema_bound_the_band(modified, narrow_band):
    t = 0.0
    u = np.linspace(narrow_band.lower(t), narrow_band.upper(t), 33)
    v = np.linspace(-modified.K, modified.K, 33)
    U, V = np.meshgrid(u, v)
    values = modified(t, U, V)
    assert np.max(np.abs(values)) <= modified.M
    assert np.max(np.abs(values + U)) <= modified.b_bound
    assert set(modified.constants()) == {"K", "epsilon", "M", "b_bound"}


def test_violated_nagumo_condition_rejected(pendulum, narrow_band):
    with pytest.raises(PreconditionError):
        build_modified(pendulum, narrow_band, NagumoSpec.from_expression("(1 + v)^3"))


# ---------------------------------------------------------------------------
# The truncated field
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("u,v", [(2.0, 1.0), (math.pi, 0.0), (4.5, -2.5), (1.6, 2.0)])
def test_agrees_with_base_inside(modified, pendulum, u, v):
    assert modified(0.0, u, v) == pytest.approx(pendulum(0.0, u, v))


def test_clamps_position_above_band(modified, pendulum):
    top = 3 * math.pi / 2
    assert modified(0.0, 10.0, 0.0) == pytest.approx(-10.0 + top + pendulum(0.0, top, 0.0))


def test_clamps_speed(modified):
    assert modified(0.0, math.pi, 100.0) == pytest.approx(0.6, abs=1e-12)
    assert modified(0.0, math.pi, -100.0) == pytest.approx(-0.2 * modified.K, abs=1e-12)


def test_clamp_helpers(narrow_band):
    np.testing.assert_allclose(gamma(narrow_band, 0.0, np.array([0.0, 2.0, 9.0])), [math.pi / 2, 2.0, 3 * math.pi / 2])
    np.testing.assert_allclose(delta(1.5, np.array([-4.0, 0.3, 4.0])), [-1.5, 0.3, 1.5])


@pytest.mark.parametrize("u,v", [(2.0, 1.0), (5.0, 4.0), (0.0, -9.0)])
def test_mirrored_modified_field(modified, u, v):
    assert modified.mirrored()(0.0, -u, -v) == pytest.approx(-modified(0.0, u, v))


def test_barriers_survive_the_modification(modified, narrow_band):
    assert verify_lower(narrow_band.lower, modified).passed
    assert verify_upper(narrow_band.upper, modified).passed


# ---------------------------------------------------------------------------
# Shared solutions
# ---------------------------------------------------------------------------

def test_equilibrium_is_an_original_solution(modified):
    traj = integrate(modified, 0.0, math.pi, 0.0, 1.0, PENDULUM_STEP)
    assert same_solution_filter(modified, traj) is SolutionKind.ORIGINAL


def test_escaping_trajectory_is_modified_only(modified):
    traj = integrate(modified, 0.0, 5.0, 0.0, 1.0, PENDULUM_STEP)
    assert same_solution_filter(modified, traj) is SolutionKind.MODIFIED_ONLY


def test_periodic_sets_coincide(pendulum, modified, narrow_band):
    h = TWO_PI / 256
    base = find_periodic(pendulum, narrow_band, grid_u=8, grid_v=8, h=h, v_bound=modified.K)
    truncated = find_periodic(modified, narrow_band, grid_u=8, grid_v=8, h=h)
    assert [o.u0 for o in base.orbits] == pytest.approx([o.u0 for o in truncated.orbits], abs=1e-8)
    assert base.x_max.u0 == pytest.approx(math.pi, abs=1e-8)


# ---------------------------------------------------------------------------
# Trap property
# ---------------------------------------------------------------------------

def _random_paths(modified, count=100, seed=7):
    rng = np.random.default_rng(seed)
    u0 = rng.uniform(math.pi / 2, 3 * math.pi / 2, count)
    v0 = rng.uniform(-modified.K, modified.K, count)
    res = integrate_batch(modified, 0.0, u0, v0, TWO_PI, PENDULUM_STEP, record=True)
    assert not res.diverged.any()
    return res.offsets, res.path_u, res.path_v


def test_no_interior_excursion_beyond_the_barriers(modified):
    _, u, _ = _random_paths(modified)
    inner = u[1:-1]
    minima = (inner <= u[:-2]) & (inner <= u[2:])
    maxima = (inner >= u[:-2]) & (inner >= u[2:])
    assert minima.any() and maxima.any()
    assert np.all(inner[minima] >= math.pi / 2 - 1e-6)
    assert np.all(inner[maxima] <= 3 * math.pi / 2 + 1e-6)


def test_truncation_is_invisible_inside_the_band(modified, pendulum):
    t, u, v = _random_paths(modified)
    T = np.broadcast_to(t[:, None], u.shape)
    inside = (u >= math.pi / 2) & (u <= 3 * math.pi / 2) & (np.abs(v) <= modified.K)
    assert inside.sum() > 100
    np.testing.assert_allclose(modified(T[inside], u[inside], v[inside]), pendulum(T[inside], u[inside], v[inside]))
