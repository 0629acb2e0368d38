import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lusolve.errors import InvalidNagumoSpec, PeriodMismatchError, PreconditionError
from lusolve.fieldspec import Field, NagumoSpec, NagumoStatus, nagumo_check


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

def test_flags_follow_free_variables(pendulum):
    assert pendulum.autonomous
    assert not pendulum.conservative
    assert Field.from_expression("sin(u)", 1.0).conservative


def test_declared_conservative_rejected_when_v_appears():
    with pytest.raises(PreconditionError):
        Field.from_expression("u + v", 1.0, conservative=True)


def test_non_periodic_time_dependence_rejected():
    with pytest.raises(PeriodMismatchError):
        Field.from_expression("t", 1.0)


def test_periodic_forcing_accepted():
    field = Field.from_expression("cos(2*pi*t) - u", 1.0)
    assert not field.autonomous
    assert field(0.25, 1.0, 0.0) == pytest.approx(-1.0)


def test_reversed_pendulum_is_anti_damped(pendulum):
    rev = pendulum.reversed()
    assert rev(0.0, 1.0, 2.0) == pytest.approx(-0.4 + math.sin(1.0))


def test_mirrored_field(pendulum):
    mir = pendulum.mirrored()
    assert mir(0.0, 1.0, 2.0) == pytest.approx(-(0.2 * -2.0 + math.sin(-1.0)))


def test_field_evaluates_arrays(pendulum):
    u = np.array([0.0, math.pi / 2])
    np.testing.assert_allclose(pendulum(0.0, u, 0.0), [0.0, 1.0], atol=1e-15)


def test_zero_field_is_conservative_and_autonomous():
    zero = Field.zero(2.0)
    assert zero.conservative and zero.autonomous
    assert np.all(zero(np.linspace(0, 2, 5), 1.0, 3.0) == 0)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(-10, 10, allow_nan=False),
    st.floats(-10, 10, allow_nan=False),
    st.floats(-10, 10, allow_nan=False),
)
def test_reversal_and_mirror_are_involutions(t, u, v):
    field = Field.from_expression("c*v + a*sin(u) + cos(t)", 2 * math.pi, {"c": 0.2, "a": 1.0})
    assert field.reversed().reversed()(t, u, v) == pytest.approx(field(t, u, v))
    assert field.mirrored().mirrored()(t, u, v) == pytest.approx(field(t, u, v))


# ---------------------------------------------------------------------------
# Nagumo condition
# ---------------------------------------------------------------------------

def test_constant_phi_closed_form():
    verdict = nagumo_check(NagumoSpec.from_expression("5"), 100.0)
    assert verdict.status is NagumoStatus.SATISFIED
    assert verdict.K_candidate == pytest.approx(math.sqrt(1000), rel=1e-5)


def test_quadratic_phi_closed_form():
    # integral of v/(1+v^2) is ln(1+K^2)/2
    verdict = nagumo_check(NagumoSpec.from_expression("1 + v^2"), 1.0)
    assert verdict.status is NagumoStatus.SATISFIED
    assert verdict.K_candidate == pytest.approx(math.sqrt(math.e ** 2 - 1), rel=1e-5)


def test_pendulum_phi_satisfied(phi):
    verdict = nagumo_check(phi, math.pi)
    assert verdict.status is NagumoStatus.SATISFIED
    assert verdict.integral > math.pi


def test_integrable_tail_is_violated():
    # the whole integral of v/(1+v)^3 is 1/2
    verdict = nagumo_check(NagumoSpec.from_expression("(1 + v)^3"), 1.0)
    assert verdict.status is NagumoStatus.VIOLATED
    assert verdict.tail_bound < 1.0


def test_zero_gap_is_trivially_satisfied(phi):
    assert nagumo_check(phi, 0.0).K_candidate == 0.0


def test_negative_gap_rejected(phi):
    with pytest.raises(PreconditionError):
        nagumo_check(phi, -1.0)


@pytest.mark.parametrize("source", ["v - 1", "-1", "0", "ln(v)"])
def test_non_positive_phi_rejected(source):
    with pytest.raises(InvalidNagumoSpec):
        NagumoSpec.from_expression(source)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 20.0), st.floats(0.1, 20.0))
def test_speed_bound_grows_with_gap(g1, g2):
    phi = NagumoSpec.from_expression("0.2*v + 1")
    lo, hi = sorted((g1, g2))
    k_lo = nagumo_check(phi, lo).K_candidate
    k_hi = nagumo_check(phi, hi).K_candidate
    assert k_lo <= k_hi * (1 + 1e-5)
