"""Fixed-step RK4 integration of u' = v, v' = -f(t, u, v), time reversal and the time-T map."""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import structlog
from scipy.interpolate import CubicHermiteSpline

from lusolve.errors import BlowUpError, NonFiniteFieldError, PreconditionError
from lusolve.fieldspec import Field

logger = structlog.get_logger()

BLOW_UP = 1e9
DEFAULT_STEPS_PER_PERIOD = 2048


def default_step(field: Field, steps_per_period: int = DEFAULT_STEPS_PER_PERIOD) -> float:
    return field.period / steps_per_period


def _rk4_step(f, t, u, v, dt):
    k1u = v
    k1v = -f(t, u, v)
    k2u = v + 0.5 * dt * k1v
    k2v = -f(t + 0.5 * dt, u + 0.5 * dt * k1u, k2u)
    k3u = v + 0.5 * dt * k2v
    k3v = -f(t + 0.5 * dt, u + 0.5 * dt * k2u, k3u)
    k4u = v + dt * k3v
    k4v = -f(t + dt, u + dt * k3u, k4u)
    return (
        u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u),
        v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
    )


def _mesh(t0: float, t1: float, h: float) -> np.ndarray:
    """t_i = t0 + i*h*sign, with a final partial step landing on t1."""
    if not h > 0:
        raise PreconditionError(f"step must be positive, got {h}")
    span = abs(t1 - t0)
    n = max(1, math.ceil(span / h - 1e-9))
    sign = 1.0 if t1 >= t0 else -1.0
    mesh = t0 + sign * h * np.arange(n + 1, dtype=float)
    mesh[-1] = t1
    return mesh


# ---------------------------------------------------------------------------
# Trajectory
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Samples (t_i, u_i, v_i) of a solution, with a_i = u''(t_i) = -f(t_i, u_i, v_i).

    Times follow t_i = t_start + i*h (decreasing for backward runs) except possibly
    the last one.
    """

    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    step: float
    field_id: str = "f"
    residual_max: float = 0.0

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def __len__(self) -> int:
        return len(self.t)

    def at(self, t):
        """(u, v) at arbitrary times by cubic Hermite interpolation."""
        order = np.argsort(self.t)
        ts = self.t[order]
        u = CubicHermiteSpline(ts, self.u[order], self.v[order])(t)
        v = CubicHermiteSpline(ts, self.v[order], self.a[order])(t)
        if np.ndim(t) == 0:
            return float(u), float(v)
        return u, v

    def state(self, index: int = -1) -> tuple[float, float]:
        return float(self.u[index]), float(self.v[index])

    def residual_against(self, field: Field) -> float:
        return trajectory_residual(self.t, self.v, field(self.t, self.u, self.v), self.step)

    def reflected(self) -> "Trajectory":
        """u -> -u; maps runs of a mirrored field back."""
        return Trajectory(self.t, -self.u, -self.v, -self.a, self.step, _toggle(self.field_id, "~mir"), self.residual_max)

    def time_reversed(self) -> "Trajectory":
        """w(t) -> w(-t): t -> -t, v -> -v, a unchanged."""
        return Trajectory(-self.t, self.u, -self.v, self.a, self.step, _toggle(self.field_id, "~rev"), self.residual_max)

    def window(self, t_a: float, t_b: float) -> "Trajectory":
        """Samples with t_a <= t <= t_b (up to rounding of the mesh)."""
        slack = 1e-9 * self.step
        keep = (self.t >= t_a - slack) & (self.t <= t_b + slack)
        return Trajectory(
            self.t[keep], self.u[keep], self.v[keep], self.a[keep], self.step, self.field_id, self.residual_max
        )

    def with_field_id(self, field_id: str) -> "Trajectory":
        return Trajectory(self.t, self.u, self.v, self.a, self.step, field_id, self.residual_max)

    @classmethod
    def concatenate(cls, parts: Sequence["Trajectory"]) -> "Trajectory":
        """Join consecutive trajectories that share their junction times."""
        t = np.concatenate([parts[0].t] + [p.t[1:] for p in parts[1:]])
        u = np.concatenate([parts[0].u] + [p.u[1:] for p in parts[1:]])
        v = np.concatenate([parts[0].v] + [p.v[1:] for p in parts[1:]])
        a = np.concatenate([parts[0].a] + [p.a[1:] for p in parts[1:]])
        residual = max(p.residual_max for p in parts)
        return cls(t, u, v, a, parts[0].step, parts[0].field_id, residual)


def _toggle(field_id: str, suffix: str) -> str:
    return field_id[: -len(suffix)] if field_id.endswith(suffix) else field_id + suffix


def trajectory_residual(t: np.ndarray, v: np.ndarray, f: np.ndarray, h: float) -> float:
    """max |v' + f| over interior samples, v' from the five-point stencil."""
    dt = np.diff(t)
    uniform = np.abs(np.abs(dt) - h) <= 1e-9 * h
    # drop a trailing partial step
    n = len(t) if uniform.all() else int(np.argmin(uniform)) + 1
    if n < 5:
        return 0.0
    sign = 1.0 if t[1] > t[0] else -1.0
    vv = v[:n]
    dv = (-vv[4:] + 8 * vv[3:-1] - 8 * vv[1:-3] + vv[:-4]) / (12 * h * sign)
    return float(np.max(np.abs(dv + np.asarray(f)[2 : n - 2])))


# ---------------------------------------------------------------------------
# Single trajectories
# ---------------------------------------------------------------------------


def integrate(field: Field, t0: float, u0: float, v0: float, t1: float, h: float) -> Trajectory:
    """Classical RK4 from (t0, u0, v0) to t1 (t1 < t0 integrates backward)."""
    mesh = _mesh(t0, t1, h)
    n = len(mesh)
    u = np.empty(n)
    v = np.empty(n)
    a = np.empty(n)
    f = field.rhs
    uu, vv = float(u0), float(v0)
    u[0], v[0] = uu, vv
    for i in range(n - 1):
        ti = float(mesh[i])
        uu, vv = _rk4_step(f, ti, uu, vv, float(mesh[i + 1]) - ti)
        uu, vv = float(uu), float(vv)
        if not (math.isfinite(uu) and math.isfinite(vv)):
            raise NonFiniteFieldError(f"non-finite state at t={mesh[i + 1]:.6g} in field {field.field_id!r}")
        if abs(uu) + abs(vv) > BLOW_UP:
            raise BlowUpError(f"|u|+|v| exceeded {BLOW_UP:g} at t={mesh[i + 1]:.6g}")
        u[i + 1], v[i + 1] = uu, vv
    with np.errstate(all="ignore"):
        a[:] = -np.asarray(field(mesh, u, v), dtype=float)
    if not np.all(np.isfinite(a)):
        raise NonFiniteFieldError(f"non-finite field value along trajectory of {field.field_id!r}")
    return Trajectory(mesh, u, v, a, float(h), field.field_id, trajectory_residual(mesh, v, -a, float(h)))


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BatchResult:
    """Final states of a batch; `diverged` marks entries that blew up or went non-finite."""

    u: np.ndarray
    v: np.ndarray
    diverged: np.ndarray
    jacobian: Optional[np.ndarray] = None  # (B, 2, 2)
    path_u: Optional[np.ndarray] = None  # (n_steps + 1, B) when recorded
    path_v: Optional[np.ndarray] = None
    offsets: Optional[np.ndarray] = None  # sample times relative to t0


def _batch_times(t0, t1, h: float):
    """Offsets of a shared mesh; t0 and t1 may be arrays with one common span."""
    span = np.asarray(t1, dtype=float) - np.asarray(t0, dtype=float)
    s = float(np.max(span)) if span.ndim else float(span)
    if span.ndim and np.ptp(span) > 1e-9 * (1 + abs(s)):
        raise PreconditionError("batch entries must share the same time span")
    return _mesh(0.0, s, h)


def integrate_batch(field: Field, t0, u0, v0, t1, h: float, record: bool = False) -> BatchResult:
    """RK4 over many initial states; entry j runs on t0[j] + offsets."""
    offsets = _batch_times(t0, t1, h)
    base = np.asarray(t0, dtype=float)
    u = np.array(u0, dtype=float, copy=True).ravel()
    v = np.array(v0, dtype=float, copy=True).ravel()
    diverged = np.zeros(u.shape, dtype=bool)
    path_u = path_v = None
    if record:
        path_u = np.empty((len(offsets), u.size))
        path_v = np.empty((len(offsets), u.size))
        path_u[0], path_v[0] = u, v
    f = field.__call__
    with np.errstate(all="ignore"):
        for i in range(len(offsets) - 1):
            u, v = _rk4_step(f, base + offsets[i], u, v, offsets[i + 1] - offsets[i])
            bad = ~np.isfinite(u) | ~np.isfinite(v) | (np.abs(u) + np.abs(v) > BLOW_UP)
            if bad.any():
                diverged |= bad
                u = np.where(bad, np.nan, u)
                v = np.where(bad, np.nan, v)
            if record:
                path_u[i + 1], path_v[i + 1] = u, v
    if diverged.any():
        logger.debug("Batch entries diverged", count=int(diverged.sum()), total=int(u.size))
    return BatchResult(u, v, diverged, path_u=path_u, path_v=path_v, offsets=offsets if record else None)


def propagate(field: Field, t0, u0, v0, t1, h: float) -> BatchResult:
    """
    Final states plus jacobians d(u(t1), v(t1)) / d(u0, v0).

    Integrates the variational equations when the field has partials, otherwise
    uses central differences with increment 1e-6*(1+|x|).
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    if field.has_partials:
        return _propagate_variational(field, t0, u0, v0, t1, h)

    B = u0.size
    du = 1e-6 * (1 + np.abs(u0))
    dv = 1e-6 * (1 + np.abs(v0))
    U = np.concatenate([u0, u0 + du, u0 - du, u0, u0])
    V = np.concatenate([v0, v0, v0, v0 + dv, v0 - dv])
    T0 = np.tile(np.broadcast_to(np.asarray(t0, dtype=float), (B,)), 5)
    T1 = np.tile(np.broadcast_to(np.asarray(t1, dtype=float), (B,)), 5)
    res = integrate_batch(field, T0, U, V, T1, h)
    uu = res.u.reshape(5, B)
    vv = res.v.reshape(5, B)
    jac = np.empty((B, 2, 2))
    jac[:, 0, 0] = (uu[1] - uu[2]) / (2 * du)
    jac[:, 1, 0] = (vv[1] - vv[2]) / (2 * du)
    jac[:, 0, 1] = (uu[3] - uu[4]) / (2 * dv)
    jac[:, 1, 1] = (vv[3] - vv[4]) / (2 * dv)
    diverged = res.diverged.reshape(5, B).any(axis=0)
    return BatchResult(uu[0], vv[0], diverged, jacobian=jac)


def _propagate_variational(field: Field, t0, u0, v0, t1, h: float) -> BatchResult:
    offsets = _batch_times(t0, t1, h)
    base = np.asarray(t0, dtype=float)
    B = u0.size
    # state layout: u, v, then the 2x2 fundamental matrix row-major
    y = np.zeros((6, B))
    y[0], y[1] = u0, v0
    y[2], y[5] = 1.0, 1.0

    def rhs(t, y):
        u, v = y[0], y[1]
        fu, fv = field.partials(t, u, v)
        out = np.empty_like(y)
        out[0] = v
        out[1] = -field(t, u, v)
        # d/dt [p q; r s] = [0 1; -fu -fv] [p q; r s]
        out[2], out[3] = y[4], y[5]
        out[4] = -fu * y[2] - fv * y[4]
        out[5] = -fu * y[3] - fv * y[5]
        return out

    diverged = np.zeros(B, dtype=bool)
    with np.errstate(all="ignore"):
        for i in range(len(offsets) - 1):
            t, dt = base + offsets[i], offsets[i + 1] - offsets[i]
            k1 = rhs(t, y)
            k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
            k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
            k4 = rhs(t + dt, y + dt * k3)
            y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            bad = ~np.all(np.isfinite(y), axis=0) | (np.abs(y[0]) + np.abs(y[1]) > BLOW_UP)
            if bad.any():
                diverged |= bad
                y[:, bad] = np.nan
    jac = np.stack([np.stack([y[2], y[3]], axis=-1), np.stack([y[4], y[5]], axis=-1)], axis=1)
    return BatchResult(y[0], y[1], diverged, jacobian=jac)


# ---------------------------------------------------------------------------
# Poincare map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoincareResult:
    start_state: tuple[float, float]
    end_state: tuple[float, float]
    jacobian: np.ndarray

    @property
    def multipliers(self) -> np.ndarray:
        return np.linalg.eigvals(self.jacobian)

    @property
    def displacement(self) -> np.ndarray:
        return np.array(self.end_state) - np.array(self.start_state)


def poincare(field: Field, u0: float, v0: float, h: Optional[float] = None) -> PoincareResult:
    h = h or default_step(field)
    res = propagate(field, 0.0, u0, v0, field.period, h)
    if res.diverged[0]:
        raise BlowUpError(f"Poincare map diverged from ({u0}, {v0})")
    return PoincareResult((float(u0), float(v0)), (float(res.u[0]), float(res.v[0])), res.jacobian[0])


def poincare_batch(field: Field, u0, v0, h: Optional[float] = None, t0: float = 0.0) -> BatchResult:
    h = h or default_step(field)
    return propagate(field, t0, u0, v0, t0 + field.period, h)
