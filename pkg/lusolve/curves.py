"""Piecewise-C2 periodic curves, bands between them, and lower/upper solution checks."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import structlog
from scipy.interpolate import BPoly

from lusolve.errors import BandOrderError, InconsistentCurveError, PeriodMismatchError
from lusolve.fieldspec import Field
from lusolve.parser import parse_expr

logger = structlog.get_logger()

CORNER_TOL = 1e-10
CONTINUITY_TOL = 1e-9
CONSISTENCY_POINTS = 10
BAND_ORDER_SLACK = 1e-12
RESIDUAL_RTOL = 1e-8
FIT_RESIDUAL_FACTOR = 200.0


def _as_array(value, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), shape)


def _richardson_d1(fn: Callable, t, h: float = 1e-3):
    def central(step):
        return (fn(t + step) - fn(t - step)) / (2 * step)
    return (4 * central(h / 2) - central(h)) / 3


def _richardson_d2(fn: Callable, t, h: float = 1e-2):
    def central(step):
        return (fn(t + step) - 2 * fn(t) + fn(t - step)) / (step * step)
    return (4 * central(h / 2) - central(h)) / 3


@dataclass(frozen=True)
class Segment:
    """Smooth piece of a curve on [start, end]; evaluators take absolute times."""

    start: float
    end: float
    value: Callable
    d1: Callable
    d2: Callable
    source: str = ""
    # sample spacing when fitted to a trajectory, 0 for exact expressions
    fit_step: float = 0.0

    def check_consistency(self) -> None:
        length = self.end - self.start
        h = min(1e-2, 0.05 * length)
        # interior points, away from the ends by more than the stencil
        t = np.linspace(self.start + 2 * h, self.end - 2 * h, CONSISTENCY_POINTS)
        value = _as_array(self.value(t), t.shape)
        scale = 1e-6 * (1 + np.abs(value))
        d1_fd = _richardson_d1(lambda s: _as_array(self.value(s), s.shape), t, h)
        d2_fd = _richardson_d2(lambda s: _as_array(self.value(s), s.shape), t, h)
        if np.any(np.abs(d1_fd - _as_array(self.d1(t), t.shape)) > scale):
            raise InconsistentCurveError(f"first derivative of segment {self.source!r} disagrees with its values")
        if np.any(np.abs(d2_fd - _as_array(self.d2(t), t.shape)) > scale):
            raise InconsistentCurveError(f"second derivative of segment {self.source!r} disagrees with its values")


@dataclass(frozen=True)
class Corner:
    t: float
    left_deriv: float
    right_deriv: float


@dataclass(frozen=True)
class Curve:
    """
    T-periodic curve made of smooth segments.

    Segments tile [0, T] and the curve is evaluated at t mod T. At each breakpoint
    the side derivatives come from the adjacent segments (the one ending at T for
    the breakpoint 0).
    """

    period: float
    segments: tuple
    name: str = ""
    _starts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        starts = np.array([s.start for s in self.segments], dtype=float)
        if len(starts) == 0 or starts[0] != 0.0 or np.any(np.diff(starts) <= 0):
            raise InconsistentCurveError("breakpoints must start at 0 and strictly increase")
        if abs(self.segments[-1].end - self.period) > 1e-12 * self.period:
            raise InconsistentCurveError("last segment must end at the period")
        object.__setattr__(self, "_starts", starts)

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    @property
    def breakpoints(self) -> list[float]:
        return [s.start for s in self.segments] + [self.period]

    def _evaluate(self, t, which: str):
        t_arr = np.asarray(t, dtype=float)
        tau = np.atleast_1d(np.mod(t_arr, self.period))
        if len(self.segments) == 1:
            out = np.array(_as_array(getattr(self.segments[0], which)(tau), tau.shape))
            return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)
        idx = np.clip(np.searchsorted(self._starts, tau, side="right") - 1, 0, len(self.segments) - 1)
        out = np.empty_like(tau)
        for i, seg in enumerate(self.segments):
            mask = idx == i
            if np.any(mask):
                sub = tau[mask]
                out[mask] = _as_array(getattr(seg, which)(sub), sub.shape)
        if t_arr.ndim == 0:
            return float(out[0])
        return out.reshape(t_arr.shape)

    def __call__(self, t):
        return self._evaluate(t, "value")

    def value(self, t):
        return self._evaluate(t, "value")

    def d1(self, t):
        return self._evaluate(t, "d1")

    def d2(self, t):
        return self._evaluate(t, "d2")

    @property
    def corners(self) -> list[Corner]:
        result = []
        for i, seg in enumerate(self.segments):
            prev = self.segments[i - 1]
            left = float(_as_array(prev.d1(np.array([prev.end])), (1,))[0])
            right = float(_as_array(seg.d1(np.array([seg.start])), (1,))[0])
            result.append(Corner(seg.start, left, right))
        return result

    def sample(self, n: int = 4096) -> tuple[np.ndarray, np.ndarray]:
        t = np.union1d(np.linspace(0.0, self.period, n + 1), self.breakpoints)
        return t, self.value(t)

    def sup_abs_d1(self, n: int = 4096) -> float:
        t = np.linspace(0.0, self.period, n + 1)
        sup = float(np.max(np.abs(self.d1(t))))
        for c in self.corners:
            sup = max(sup, abs(c.left_deriv), abs(c.right_deriv))
        return sup

    def check_consistency(self) -> None:
        for seg in self.segments:
            seg.check_consistency()
        for i, seg in enumerate(self.segments):
            prev = self.segments[i - 1]
            left = float(_as_array(prev.value(np.array([prev.end])), (1,))[0])
            right = float(_as_array(seg.value(np.array([seg.start])), (1,))[0])
            if abs(left - right) > CONTINUITY_TOL * (1 + abs(right)):
                raise InconsistentCurveError(f"curve {self.name!r} is discontinuous at t={seg.start}")

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def constant(cls, c: float, period: float, name: str = "") -> "Curve":
        c = float(c)
        seg = Segment(0.0, period, lambda t: np.full(np.shape(t), c), _zeros, _zeros, source=repr(c))
        return cls(period, (seg,), name=name or repr(c))

    @classmethod
    def from_expression(
        cls,
        source: str,
        period: float,
        params: Optional[Mapping[str, float]] = None,
        name: str = "",
        d1: Optional[str] = None,
        d2: Optional[str] = None,
    ) -> "Curve":
        return cls.piecewise([(0.0, source, d1, d2)], period, params=params, name=name)

    @classmethod
    def piecewise(
        cls,
        pieces: Sequence[tuple],
        period: float,
        params: Optional[Mapping[str, float]] = None,
        name: str = "",
    ) -> "Curve":
        """Build from (start, expression[, d1, d2]) tuples; each piece runs to the next start."""
        starts = [float(p[0]) for p in pieces] + [float(period)]
        segments = []
        for i, piece in enumerate(pieces):
            source = piece[1]
            value = _expression_in_t(source, params)
            d1_src = piece[2] if len(piece) > 2 else None
            d2_src = piece[3] if len(piece) > 3 else None
            d1 = _expression_in_t(d1_src, params) if d1_src else (lambda t, fn=value: _richardson_d1(fn, t))
            d2 = _expression_in_t(d2_src, params) if d2_src else (lambda t, fn=value: _richardson_d2(fn, t))
            segments.append(Segment(starts[i], starts[i + 1], value, d1, d2, source=source))
        curve = cls(float(period), tuple(segments), name=name or " | ".join(p[1] for p in pieces))
        curve.check_consistency()
        return curve

    @classmethod
    def from_trajectory(cls, traj, field: Field, name: str = "") -> "Curve":
        """Quintic Hermite fit through (u, v, -f) at the samples of a trajectory on [0, T]."""
        order = np.argsort(traj.t)
        t, u, v = traj.t[order], traj.u[order], traj.v[order]
        if abs(t[0]) > 1e-12 or abs(t[-1] - field.period) > 1e-9 * field.period:
            raise PeriodMismatchError(f"trajectory spans [{t[0]}, {t[-1]}], expected [0, {field.period}]")
        t = t.copy()
        t[-1] = field.period
        accel = -np.asarray(field(t, u, v), dtype=float)
        poly = BPoly.from_derivatives(t, np.column_stack([u, v, accel]))
        seg = Segment(
            0.0,
            field.period,
            poly,
            poly.derivative(1),
            poly.derivative(2),
            source="trajectory",
            fit_step=float(np.max(np.diff(t))),
        )
        return cls(field.period, (seg,), name=name or f"traj:{traj.field_id}")

    @classmethod
    def from_orbit(cls, orbit, field: Field, name: str = "") -> "Curve":
        return cls.from_trajectory(orbit.orbit, field, name=name)

    # ------------------------------------------------------------------
    # Transformations
    # ------------------------------------------------------------------

    def reflected(self) -> "Curve":
        """u -> -u. Lower solutions of f become upper solutions of the mirrored field."""
        segs = tuple(
            Segment(
                s.start,
                s.end,
                lambda t, fn=s.value: -np.asarray(fn(t)),
                lambda t, fn=s.d1: -np.asarray(fn(t)),
                lambda t, fn=s.d2: -np.asarray(fn(t)),
                source=f"-({s.source})",
                fit_step=s.fit_step,
            )
            for s in self.segments
        )
        return Curve(self.period, segs, name=_toggle(self.name, "-"))

    def reversed(self) -> "Curve":
        """t -> -t, i.e. c(T - t); side derivatives swap and change sign."""
        T = self.period
        segs = tuple(
            Segment(
                T - s.end,
                T - s.start,
                lambda t, fn=s.value: fn(T - np.asarray(t)),
                lambda t, fn=s.d1: -np.asarray(fn(T - np.asarray(t))),
                lambda t, fn=s.d2: fn(T - np.asarray(t)),
                source=f"({s.source})(-t)",
                fit_step=s.fit_step,
            )
            for s in reversed(self.segments)
        )
        # floating T - end may not be exactly 0
        first = segs[0]
        segs = (Segment(0.0, first.end, first.value, first.d1, first.d2, first.source, first.fit_step),) + segs[1:]
        last = segs[-1]
        segs = segs[:-1] + (Segment(last.start, T, last.value, last.d1, last.d2, last.source, last.fit_step),)
        return Curve(T, segs, name=_toggle(self.name, "~"))


def _zeros(t):
    return np.zeros(np.shape(t))


def _toggle(name: str, prefix: str) -> str:
    return name[len(prefix):] if name.startswith(prefix) else prefix + name


def _expression_in_t(source: str, params: Optional[Mapping[str, float]]) -> Callable:
    fn = parse_expr(source, allowed_vars={"t"}, params=params).compile()

    def evaluate(t):
        t = np.asarray(t, dtype=float)
        return _as_array(fn(t, 0.0, 0.0), t.shape)

    return evaluate


# ---------------------------------------------------------------------------
# Band
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Band:
    lower: Curve
    upper: Curve

    def __post_init__(self) -> None:
        if abs(self.lower.period - self.upper.period) > 1e-12 * self.lower.period:
            raise PeriodMismatchError(f"band curves have periods {self.lower.period} and {self.upper.period}")
        t, gap = self.gap_profile
        if np.min(gap) < -BAND_ORDER_SLACK:
            worst = int(np.argmin(gap))
            raise BandOrderError(f"lower curve exceeds upper curve at t={t[worst]:.6g} by {-gap[worst]:.3g}")

    @property
    def period(self) -> float:
        return self.lower.period

    @property
    def gap_profile(self) -> tuple[np.ndarray, np.ndarray]:
        t = np.union1d(np.linspace(0.0, self.period, 1025), self.lower.breakpoints + self.upper.breakpoints)
        return t, self.upper(t) - self.lower(t)

    @property
    def width(self) -> float:
        """max beta - min alpha."""
        _, lo = self.lower.sample()
        _, hi = self.upper.sample()
        return float(np.max(hi) - np.min(lo))

    @property
    def gap0(self) -> float:
        return self.upper(0.0) - self.lower(0.0)

    def contains(self, t, u, slack: float = 0.0):
        return (u >= self.lower(t) - slack) & (u <= self.upper(t) + slack)

    def reflected(self) -> "Band":
        return Band(lower=self.upper.reflected(), upper=self.lower.reflected())

    def reversed(self) -> "Band":
        return Band(lower=self.lower.reversed(), upper=self.upper.reversed())


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurveVerdict:
    passed: bool
    kind: str  # "lower" or "upper"
    max_residual: float
    tol_res: float
    t: Optional[float] = None
    residual: Optional[float] = None
    at_corner: bool = False

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "kind": self.kind,
            "max_residual": self.max_residual,
            "tol_res": self.tol_res,
            "t": self.t,
            "residual": self.residual,
            "at_corner": self.at_corner,
        }


def _chebyshev_points(a: float, b: float, n: int) -> np.ndarray:
    k = np.arange(n)
    x = np.cos((2 * k + 1) * np.pi / (2 * n))[::-1]
    return 0.5 * (a + b) + 0.5 * (b - a) * x


def _verify(curve: Curve, field: Field, n_samples: int, sign: float, kind: str) -> CurveVerdict:
    if abs(curve.period - field.period) > 1e-12 * field.period:
        raise PeriodMismatchError(f"curve period {curve.period} != field period {field.period}")
    curve.check_consistency()

    ts, residuals, forces, steps = [], [], [], []
    for seg in curve.segments:
        t = _chebyshev_points(seg.start, seg.end, n_samples)
        u = _as_array(seg.value(t), t.shape)
        v = _as_array(seg.d1(t), t.shape)
        a = _as_array(seg.d2(t), t.shape)
        f = np.asarray(field(t, u, v), dtype=float)
        ts.append(t)
        forces.append(f)
        steps.append(np.full(t.shape, seg.fit_step))
        # sign * (-u'' - f) <= tol for a lower (sign=+1) or upper (sign=-1) solution
        residuals.append(sign * (-a - f))
    t = np.concatenate(ts)
    residual = np.concatenate(residuals)
    scale = 1 + float(np.max(np.abs(np.concatenate(forces))))
    # fitted segments only match -u'' = f at their nodes; in between the
    # quintic fit of RK4 samples is off by O(h^4)
    tolerance = scale * (RESIDUAL_RTOL + FIT_RESIDUAL_FACTOR * np.concatenate(steps) ** 4)
    tol_res = float(np.max(tolerance))
    excess = residual - tolerance
    worst = int(np.argmax(excess))
    max_residual = float(np.max(residual))

    if excess[worst] > 0:
        return CurveVerdict(False, kind, max_residual, tol_res, t=float(t[worst]), residual=float(residual[worst]))
    for corner in curve.corners:
        jump = sign * (corner.left_deriv - corner.right_deriv)
        if jump > CORNER_TOL:
            return CurveVerdict(False, kind, max_residual, tol_res, t=corner.t, residual=jump, at_corner=True)
    return CurveVerdict(True, kind, max_residual, tol_res)


def verify_lower(curve: Curve, field: Field, n_samples: int = 64) -> CurveVerdict:
    """-c'' <= f(t, c, c') on every segment and left_deriv <= right_deriv at every corner."""
    return _verify(curve, field, n_samples, 1.0, "lower")


def verify_upper(curve: Curve, field: Field, n_samples: int = 64) -> CurveVerdict:
    """-c'' >= f(t, c, c') on every segment and left_deriv >= right_deriv at every corner."""
    return _verify(curve, field, n_samples, -1.0, "upper")


class Ordering(str, Enum):
    STRICT = "strictly ordered"
    IDENTICAL = "identical"
    INCONSISTENT = "INCONSISTENT"


def ordering_gap_check(band: Band, field: Field, n: int = 8192) -> Ordering:
    if abs(band.period - field.period) > 1e-12 * field.period:
        raise PeriodMismatchError(f"band period {band.period} != field period {field.period}")
    t = np.union1d(np.linspace(0.0, band.period, n + 1), band.lower.breakpoints + band.upper.breakpoints)
    upper = band.upper(t)
    gap = upper - band.lower(t)
    tol = 1e-9 * (1 + float(np.max(np.abs(upper))))
    if np.min(gap) > tol:
        return Ordering.STRICT
    if np.max(gap) < tol:
        return Ordering.IDENTICAL
    logger.warning(
        "Barriers touch without coinciding",
        min_gap=float(np.min(gap)),
        max_gap=float(np.max(gap)),
        field=field.field_id,
    )
    return Ordering.INCONSISTENT


def maximum_principle_holds(curve: Curve, segment: int, n: int = 257) -> bool:
    """Self-test: a concave segment with an interior local minimum is constant on it."""
    seg = curve.segments[segment]
    t = np.linspace(seg.start, seg.end, n)
    values = _as_array(seg.value(t), t.shape)
    if np.any(_as_array(seg.d2(t), t.shape) > 1e-10):
        return True
    interior = values[1:-1]
    minima = (interior <= values[:-2]) & (interior <= values[2:])
    if not np.any(minima):
        return True
    return float(np.ptp(values)) <= 1e-8
