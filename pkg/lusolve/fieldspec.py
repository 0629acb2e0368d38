"""Right-hand sides f(t, u, v) of -u'' = f(t, u, u') and Nagumo growth data."""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Optional

import numpy as np
import structlog
from scipy.integrate import quad

from lusolve.errors import ExpressionDomainError, InvalidNagumoSpec, PeriodMismatchError, PreconditionError
from lusolve.parser import parse_expr

logger = structlog.get_logger()

# Doubling cap for the Nagumo integral; reaching it means "inconclusive"
NAGUMO_V_CAP = 1e6
# Power-law tail extrapolation is only trusted from here on
NAGUMO_TAIL_START = 64.0
QUAD_EPSABS = 1e-10


def _broadcast(value, t, u, v):
    if np.ndim(value) == 0 and (np.ndim(t) or np.ndim(u) or np.ndim(v)):
        return np.full(np.broadcast(t, u, v).shape, float(value))
    return value


@dataclass(frozen=True, kw_only=True)
class Field:
    """
    The force f of -u'' = f(t, u, u').

    `rhs` must accept numpy arrays; `f_u` and `f_v` are optional partials with the
    same signature. `conservative` means f ignores v, `autonomous` means f ignores t.
    """

    rhs: Callable
    period: float
    f_u: Optional[Callable] = None
    f_v: Optional[Callable] = None
    conservative: bool = False
    autonomous: bool = False
    field_id: str = "f"
    source: str = ""

    def __post_init__(self) -> None:
        if not self.period > 0:
            raise PreconditionError(f"period must be positive, got {self.period}")

    def __call__(self, t, u, v):
        return _broadcast(self.rhs(t, u, v), t, u, v)

    @property
    def has_partials(self) -> bool:
        return self.f_u is not None and self.f_v is not None

    def partials(self, t, u, v):
        return _broadcast(self.f_u(t, u, v), t, u, v), _broadcast(self.f_v(t, u, v), t, u, v)

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def from_expression(
        cls,
        source: str,
        period: float,
        params: Optional[Mapping[str, float]] = None,
        partials: Optional[Mapping[str, str]] = None,
        field_id: str = "f",
        conservative: Optional[bool] = None,
        autonomous: Optional[bool] = None,
    ) -> "Field":
        """Build a Field from expression text.

        The flags default to what the free variables say. A declared flag that the
        expression contradicts is checked by sampling and rejected.
        """
        ast = parse_expr(source, params=params)
        free = ast.free_variables
        f_u = f_v = None
        if partials:
            f_u = parse_expr(partials["u"], params=params).compile()
            f_v = parse_expr(partials["v"], params=params).compile()
        result = cls(
            rhs=ast.compile(),
            period=float(period),
            f_u=f_u,
            f_v=f_v,
            conservative="v" not in free if conservative is None else conservative,
            autonomous="t" not in free if autonomous is None else autonomous,
            field_id=field_id,
            source=ast.pretty(),
        )
        if "t" in free or conservative or autonomous:
            result.check_invariants()
        return result

    @classmethod
    def zero(cls, period: float, field_id: str = "zero") -> "Field":
        return cls.from_expression("0", period, field_id=field_id)

    # ------------------------------------------------------------------
    # Transformations
    # ------------------------------------------------------------------

    def reversed(self) -> "Field":
        """f_rev(t, u, v) = f(-t, u, -v); w(t) = u(-t) solves f_rev iff u solves f."""
        rhs, f_u, f_v = self.rhs, self.f_u, self.f_v
        return replace(
            self,
            rhs=lambda t, u, v: rhs(-t, u, -v),
            f_u=None if f_u is None else (lambda t, u, v: f_u(-t, u, -v)),
            f_v=None if f_v is None else (lambda t, u, v: -f_v(-t, u, -v)),
            field_id=_toggle(self.field_id, "~rev"),
        )

    def mirrored(self) -> "Field":
        """The reflection u -> -u: f_m(t, u, v) = -f(t, -u, -v)."""
        rhs, f_u, f_v = self.rhs, self.f_u, self.f_v
        return replace(
            self,
            rhs=lambda t, u, v: -rhs(t, -u, -v),
            f_u=None if f_u is None else (lambda t, u, v: f_u(t, -u, -v)),
            f_v=None if f_v is None else (lambda t, u, v: f_v(t, -u, -v)),
            field_id=_toggle(self.field_id, "~mir"),
        )

    # ------------------------------------------------------------------
    # Sampled checks
    # ------------------------------------------------------------------

    def check_invariants(self, samples: int = 256, seed: int = 0, scale: float = 10.0) -> None:
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, self.period, samples)
        u = rng.uniform(-scale, scale, samples)
        v = rng.uniform(-scale, scale, samples)
        base = np.asarray(self(t, u, v), dtype=float)
        tol = 1e-9 * (1.0 + np.abs(base))

        shifted = np.asarray(self(t + self.period, u, v), dtype=float)
        if np.any(np.abs(shifted - base) > tol):
            raise PeriodMismatchError(f"field {self.field_id!r} is not {self.period}-periodic in t")
        if self.conservative:
            other = np.asarray(self(t, u, rng.uniform(-scale, scale, samples)), dtype=float)
            if np.any(np.abs(other - base) > tol):
                raise PreconditionError(f"field {self.field_id!r} declared conservative but depends on v")
        if self.autonomous:
            other = np.asarray(self(rng.uniform(0.0, self.period, samples), u, v), dtype=float)
            if np.any(np.abs(other - base) > tol):
                raise PreconditionError(f"field {self.field_id!r} declared autonomous but depends on t")


def _toggle(field_id: str, suffix: str) -> str:
    return field_id[: -len(suffix)] if field_id.endswith(suffix) else field_id + suffix


# ---------------------------------------------------------------------------
# Nagumo condition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NagumoSpec:
    phi: Callable
    description: str = ""

    def __call__(self, s):
        value = self.phi(0.0, 0.0, s)
        if np.ndim(value) == 0 and np.ndim(s):
            return np.full(np.shape(s), float(value))
        return value

    @classmethod
    def from_expression(cls, source: str, params: Optional[Mapping[str, float]] = None) -> "NagumoSpec":
        ast = parse_expr(source, allowed_vars={"v"}, params=params)
        spec = cls(phi=ast.compile(), description=ast.pretty())
        spec.validate()
        return spec

    def validate(self) -> None:
        samples = np.concatenate([[0.0], np.geomspace(1e-6, NAGUMO_V_CAP, 400)])
        try:
            values = np.asarray(self(samples), dtype=float)
        except ExpressionDomainError as exc:
            raise InvalidNagumoSpec(f"phi must be positive: {exc}") from exc
        bad = ~(np.isfinite(values) & (values > 0))
        if np.any(bad):
            s = float(samples[np.argmax(bad)])
            raise InvalidNagumoSpec(f"phi must be positive, phi({s:g}) = {float(values[np.argmax(bad)]):g}")

    def integral(self, lo: float, hi: float) -> float:
        """Integral of v/phi(v) over [lo, hi]."""
        if hi <= lo:
            return 0.0
        value, _ = quad(lambda s: s / float(self(s)), lo, hi, epsabs=QUAD_EPSABS, limit=200)
        return value


class NagumoStatus(str, Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class NagumoVerdict:
    status: NagumoStatus
    gap: float
    K_candidate: Optional[float] = None
    integral: float = 0.0
    # for VIOLATED: upper bound on the whole integral
    tail_bound: Optional[float] = None

    @property
    def margin(self) -> float:
        return self.integral - self.gap

    def as_dict(self) -> dict:
        return {
            "status": self.status.value,
            "gap": self.gap,
            "K_candidate": self.K_candidate,
            "integral": self.integral,
            "tail_bound": self.tail_bound,
        }


def smallest_speed(phi: NagumoSpec, gap: float, lo: float, hi: float, rtol: float = 1e-6) -> float:
    """Bisect for the smallest K in [lo, hi] with integral over [0, K] > gap.

    Assumes the integral already exceeds gap at hi. Returns the admissible end.
    """
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if phi.integral(0.0, mid) > gap:
            hi = mid
        else:
            lo = mid
    return hi


def nagumo_check(phi: NagumoSpec, gap: float) -> NagumoVerdict:
    """
    Decide whether the integral of v/phi(v) over [0, inf) exceeds `gap`.

    The upper limit doubles from 1 up to 1e6. "violated" relies on the tail being
    a decreasing power law beyond V = 64 with exponent estimated from g(V)/g(2V),
    g(v) = v/phi(v); without such evidence the answer is "inconclusive".
    """
    if gap < 0:
        raise PreconditionError(f"gap must be non-negative, got {gap}")
    phi.validate()
    if gap == 0:
        return NagumoVerdict(NagumoStatus.SATISFIED, gap, K_candidate=0.0, integral=0.0)

    g = lambda s: s / float(phi(s))  # noqa: E731
    lo, total = 0.0, 0.0
    V = 1.0
    while V <= NAGUMO_V_CAP:
        total += phi.integral(lo, V)
        if total > gap:
            K = smallest_speed(phi, gap, lo, V)
            logger.debug("Nagumo condition satisfied", gap=gap, K=K)
            return NagumoVerdict(NagumoStatus.SATISFIED, gap, K_candidate=K, integral=phi.integral(0.0, K))
        if V >= NAGUMO_TAIL_START:
            g1, g2 = g(V), g(2 * V)
            if 0 < g2 < g1:
                p = math.log2(g1 / g2)
                if p > 1:
                    bound = total + g1 * V / (p - 1)
                    if bound < gap:
                        return NagumoVerdict(NagumoStatus.VIOLATED, gap, integral=total, tail_bound=bound)
        lo, V = V, 2 * V

    logger.warning("Nagumo integral inconclusive at cap", gap=gap, integral=total, cap=NAGUMO_V_CAP)
    return NagumoVerdict(NagumoStatus.INCONCLUSIVE, gap, integral=total)
