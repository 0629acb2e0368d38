import math

import pytest

from lusolve.curves import Band, Curve
from lusolve.fieldspec import Field, NagumoSpec
from lusolve.modify import build_modified
from lusolve.periodic import make_orbit

TWO_PI = 2 * math.pi
PENDULUM = {"c": 0.2, "a": 1.0}
# coarser than the CLI default
PENDULUM_STEP = TWO_PI / 1024

LAMBDA_MINUS = (-0.2 - math.sqrt(4.04)) / 2
LAMBDA_PLUS = (-0.2 + math.sqrt(4.04)) / 2
SADDLE_MULTIPLIER = math.exp(TWO_PI * LAMBDA_PLUS)


@pytest.fixture(scope="session")
def pendulum():
    return Field.from_expression("c*v + a*sin(u)", TWO_PI, PENDULUM, field_id="pendulum")


@pytest.fixture(scope="session")
def narrow_band():
    return Band(Curve.constant(math.pi / 2, TWO_PI, "alpha"), Curve.constant(3 * math.pi / 2, TWO_PI, "beta"))


@pytest.fixture(scope="session")
def phi():
    return NagumoSpec.from_expression("c*v + a", PENDULUM)


@pytest.fixture(scope="session")
def modified(pendulum, narrow_band, phi):
    return build_modified(pendulum, narrow_band, phi)


@pytest.fixture(scope="session")
def saddle(pendulum):
    return make_orbit(pendulum, math.pi, 0.0, PENDULUM_STEP)


@pytest.fixture(scope="session")
def free():
    return Field.zero(1.0)


@pytest.fixture(scope="session")
def unit_band():
    return Band(Curve.constant(0.0, 1.0, "alpha"), Curve.constant(1.0, 1.0, "beta"))
