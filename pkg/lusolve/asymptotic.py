"""
Solutions asymptotic to a minimal periodic orbit, built as limits of maximal
Dirichlet solutions y_n with y_n(0) on the lower barrier and y_n(nT) on the orbit.

Orbits approached from below are handled directly; orbits approached from above
go through the reflection u -> -u, and the past through t -> -t.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import structlog

from lusolve.config import settings
from lusolve.curves import Band, Curve, verify_lower
from lusolve.dirichlet import DirichletSpec, shoot_all, solve_long, straight_seeds
from lusolve.errors import (
    InternalConsistencyError,
    LiftError,
    LusolveError,
    NotConvergedError,
    PreconditionError,
)
from lusolve.fieldspec import Field
from lusolve.flow import Trajectory, default_step, poincare
from lusolve.modify import ModifiedField, same_solution_filter
from lusolve.periodic import PeriodicOrbit, _sorted_multipliers

logger = structlog.get_logger()

ORDER_SLACK = 1e-7
NOISE_FLOOR = 1e-8
SLOPE_FLOOR = 1e-5
CERTIFICATE_OFFSET = 1e-3
CORNER_GAP_TOL = 1e-10
EDGE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AsymptoticRun:
    u0: float
    target: PeriodicOrbit
    direction: str  # "future" | "past"
    limit: Trajectory
    barrier: Curve
    sequence_log: list
    convergence_profile: list
    phase_slacks: dict
    terminal_slope: Optional[float] = None
    rate: Optional[float] = None
    solution_kind: Optional[str] = None
    tol_conv: float = 1e-4
    mirrored: bool = False

    @property
    def converged(self) -> bool:
        return self.convergence_profile[-1] < self.tol_conv

    @property
    def initial_velocity(self) -> float:
        return float(self.limit.v[0])

    @property
    def certifies_instability(self) -> bool:
        """A solution distinct from the orbit at t=0 that still converges to it."""
        return self.converged and abs(float(self.limit.u[0]) - self.target(0.0)) >= CERTIFICATE_OFFSET

    def as_dict(self) -> dict:
        return {
            "u0": self.u0,
            "direction": self.direction,
            "mirrored": self.mirrored,
            "d": list(self.convergence_profile),
            "sequence": list(self.sequence_log),
            "phase_slacks": dict(self.phase_slacks),
            "terminal_slope": self.terminal_slope,
            "rate": self.rate,
            "v0": self.initial_velocity,
            "certifies_instability": self.certifies_instability,
            "solution_kind": self.solution_kind,
        }


@dataclass(frozen=True, eq=False)
class ManifoldSample:
    points: list = field(default_factory=list)  # (u0, v, direction)
    runs: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (u0, direction, message)

    def rows(self) -> list[tuple[float, float, str]]:
        return list(self.points)

    def as_dict(self) -> dict:
        return {
            "points": [{"u0": u, "v": v, "direction": d} for u, v, d in self.points],
            "failures": [{"u0": u, "direction": d, "error": e} for u, d, e in self.failures],
        }


# ---------------------------------------------------------------------------
# Orbit and run transformations
# ---------------------------------------------------------------------------


def mirror_orbit(orbit: PeriodicOrbit) -> PeriodicOrbit:
    # the time-T map of the reflected field is conjugate by -I, same jacobian
    return PeriodicOrbit(orbit.orbit.reflected(), orbit.closure_residual, orbit.floquet, orbit.jacobian)


def reverse_orbit(orbit: PeriodicOrbit, reversed_field: Field) -> PeriodicOrbit:
    """x(t) -> x(T - t), sampled on [0, T] for the reversed field."""
    o = orbit.orbit
    T = orbit.period
    traj = Trajectory(T - o.t[::-1], o.u[::-1].copy(), -o.v[::-1], o.a[::-1].copy(), o.step, reversed_field.field_id)
    jac = poincare(reversed_field, float(traj.u[0]), float(traj.v[0]), o.step).jacobian
    return PeriodicOrbit(traj, orbit.closure_residual, _sorted_multipliers(jac), jac)


def _shifted(orbit: PeriodicOrbit, offset: float) -> Trajectory:
    o = orbit.orbit
    return Trajectory(o.t + offset, o.u, o.v, o.a, o.step, o.field_id)


def _mirror_run(run: AsymptoticRun, target: PeriodicOrbit) -> AsymptoticRun:
    log = [dict(entry, v0=-entry["v0"]) for entry in run.sequence_log]
    return replace(
        run,
        u0=-run.u0,
        target=target,
        limit=run.limit.reflected(),
        barrier=run.barrier.reflected(),
        sequence_log=log,
        mirrored=not run.mirrored,
    )


# ---------------------------------------------------------------------------
# Lifted corner barrier
# ---------------------------------------------------------------------------


def lower_lift(
    field: Field,
    band: Band,
    target: PeriodicOrbit,
    u0: float,
    n_scan: int = 512,
    h: Optional[float] = None,
    v_bound: Optional[float] = None,
) -> Curve:
    """
    Corner lower barrier through u0: the periodic extension of the maximal
    solution of y(0) = y(T) = u0 between alpha and the target.
    """
    T = field.period
    if not (band.lower(0.0) < u0 < target(0.0)):
        raise PreconditionError(f"lift needs alpha(0) < u0 < target(0), got u0={u0}")
    h = h or target.orbit.step
    upper = target.as_curve(field)
    spec = DirichletSpec(0.0, T, u0, u0, Band(band.lower, upper))
    v_lo, v_hi = (-v_bound, v_bound) if v_bound is not None else (None, None)
    y = shoot_all(field, spec, v_lo, v_hi, n_scan=n_scan, h=h).maximal

    gap = float(y.v[0] - y.v[-1])
    if abs(gap) <= CORNER_GAP_TOL:
        raise InternalConsistencyError(f"u0={u0} lies on a periodic solution; minimality of target violated")
    if gap < 0:
        raise LiftError(f"upper-type return solution at u0={u0}; minimality of target violated")

    lifted = Curve.from_trajectory(y, field, name=f"lift({u0:.6g})")
    verdict = verify_lower(lifted, field)
    if not verdict.passed:
        raise LiftError(f"lifted barrier at u0={u0} is not a lower solution: residual {verdict.residual:.3g} at t={verdict.t}")
    logger.debug("Lower barrier lifted", u0=u0, v_right=float(y.v[0]), v_left=float(y.v[-1]))
    return lifted


# ---------------------------------------------------------------------------
# Dirichlet sequence
# ---------------------------------------------------------------------------


def _period_index(traj: Trajectory, T: float) -> int:
    return int(round(T / traj.step))


def _profile(limit: Trajectory, target: PeriodicOrbit, N: int, T: float) -> list[float]:
    m = _period_index(limit, T)
    x_u, x_v = target.state(limit.t[: m + 1] - limit.t[0])
    profile = []
    for n in range(N):
        u = limit.u[n * m : (n + 1) * m + 1]
        v = limit.v[n * m : (n + 1) * m + 1]
        k = len(u)
        profile.append(float(np.max(np.abs(u - x_u[:k]) + np.abs(v - x_v[:k]))))
    return profile


def _terminal_slope(limit: Trajectory, target: PeriodicOrbit) -> Optional[float]:
    x_u, x_v = target.state(limit.t)
    offset = limit.u - x_u
    far = np.flatnonzero(np.abs(offset) >= SLOPE_FLOOR)
    if far.size == 0:
        return None
    i = int(far[-1])
    return float((limit.v[i] - x_v[i]) / offset[i])


def _rate(profile: Sequence[float]) -> Optional[float]:
    for n in range(len(profile) - 1, 0, -1):
        if profile[n] > NOISE_FLOOR and profile[n - 1] > NOISE_FLOOR:
            return profile[n] / profile[n - 1]
    return None


def _check_profile(profile: Sequence[float]) -> None:
    peak = int(np.argmax(profile))
    for n in range(peak + 1, len(profile)):
        if profile[n - 1] > NOISE_FLOOR and profile[n] > profile[n - 1] * (1 + 1e-9) + NOISE_FLOOR:
            raise InternalConsistencyError(f"convergence profile increases after its peak at n={n}: {profile}")


def asymptotic_future(
    field: Field,
    band: Band,
    target: PeriodicOrbit,
    u0: float,
    N: int = 8,
    tol_conv: float = 1e-4,
    n_scan: int = 512,
    segments_per_period: int = 4,
    h: Optional[float] = None,
    v_bound: Optional[float] = None,
) -> AsymptoticRun:
    """
    Build the solution from u0 asymptotic to `target` as t -> +inf.

    For n = 1..N solves y(0) = barrier(0), y(nT) = target(nT) and keeps the maximal
    in-band solution. The barrier is alpha, or the lifted corner barrier through u0
    when u0 > alpha(0). Targets above u0 are handled in the mirrored problem.
    """
    x0 = target(0.0)
    if u0 > x0 + EDGE_TOL:
        mirrored_field = field.mirrored()
        run = asymptotic_future(
            mirrored_field, band.reflected(), mirror_orbit(target), -u0, N, tol_conv,
            n_scan=n_scan, segments_per_period=segments_per_period, h=h, v_bound=v_bound,
        )
        return _mirror_run(run, target)

    T = field.period
    alpha0 = band.lower(0.0)
    if u0 < alpha0 - EDGE_TOL:
        raise PreconditionError(f"u0={u0} lies below alpha(0)={alpha0}")
    if abs(u0 - x0) <= EDGE_TOL and alpha0 < x0 - EDGE_TOL:
        raise PreconditionError(f"u0={u0} is on the target; the admissible set is [alpha(0), x(0))")
    h = h or target.orbit.step or default_step(field)
    v_lo, v_hi = (-v_bound, v_bound) if v_bound is not None else (None, None)

    if u0 > alpha0 + EDGE_TOL:
        barrier = lower_lift(field, band, target, u0, n_scan=n_scan, h=h, v_bound=v_bound)
    else:
        barrier = band.lower
    trap = Band(barrier, target.as_curve(field))
    start = barrier(0.0)

    log = logger.bind(u0=u0, direction="future", target=target.u0)
    sequence: list[Trajectory] = []
    sequence_log: list[dict] = []
    for n in range(1, N + 1):
        spec = DirichletSpec(0.0, n * T, start, target(n * T), trap)
        if n == 1:
            solutions = shoot_all(field, spec, v_lo, v_hi, n_scan=n_scan, h=h)
        else:
            # every solution of stage n-1 continued along the orbit, then the straight seeds
            tail = _shifted(target, (n - 1) * T)
            seeds = [Trajectory.concatenate([y, tail]) for y in solutions.solutions]
            seeds += straight_seeds(field, spec, h)
            solutions = solve_long(field, spec, seeds, segments_per_period=segments_per_period, h=h)
        y = solutions.maximal
        distance = None
        if sequence:
            k = len(sequence[-1])
            distance = float(np.max(np.abs(y.u[:k] - sequence[-1].u)))
        sequence.append(y)
        sequence_log.append({"n": n, "v0": float(y.v[0]), "distance": distance, "count": len(solutions)})
        log.debug("Dirichlet sequence step", n=n, v0=float(y.v[0]), distance=distance, count=len(solutions))

    slacks = _phase_slacks(sequence, T)
    for name, slack in slacks.items():
        if slack < -ORDER_SLACK:
            raise InternalConsistencyError(f"{name} ordering violated by {-slack:.3g}")

    limit = sequence[-1]
    profile = _profile(limit, target, N, T)
    if not profile[-1] < tol_conv:
        log.warning("Run not converged at horizon", d_last=profile[-1], N=N)
        raise NotConvergedError(f"not converged at horizon N={N}: d={profile[-1]:.3g} >= {tol_conv:g}", profile)
    _check_profile(profile)

    kind = same_solution_filter(field, limit).value if isinstance(field, ModifiedField) else None
    run = AsymptoticRun(
        u0=float(u0),
        target=target,
        direction="future",
        limit=limit,
        barrier=barrier,
        sequence_log=sequence_log,
        convergence_profile=profile,
        phase_slacks=slacks,
        terminal_slope=_terminal_slope(limit, target),
        rate=_rate(profile),
        solution_kind=kind,
        tol_conv=tol_conv,
    )
    log.info("Asymptotic run converged", d_last=profile[-1], rate=run.rate, slope=run.terminal_slope)
    return run


def _phase_slacks(sequence: Sequence[Trajectory], T: float) -> dict:
    """Smallest margins of y_n(t-T) <= y_n(t), y_{n+1} <= y_n and u(t) <= u(t+T)."""
    slack_1a = np.inf
    for y in sequence[1:]:
        m = _period_index(y, T)
        slack_1a = min(slack_1a, float(np.min(y.u[m:] - y.u[:-m])))
    slack_1b = np.inf
    for prev, nxt in zip(sequence, sequence[1:]):
        k = len(prev)
        slack_1b = min(slack_1b, float(np.min(prev.u - nxt.u[:k])))
    limit = sequence[-1]
    m = _period_index(limit, T)
    ladder = float(np.min(limit.u[m:] - limit.u[:-m])) if len(limit) > m else np.inf
    return {
        "phase_1a": _finite(slack_1a),
        "phase_1b": _finite(slack_1b),
        "ladder": _finite(ladder),
    }


def _finite(x: float) -> float:
    return float(x) if np.isfinite(x) else 0.0


def asymptotic_past(
    field: Field,
    band: Band,
    target: PeriodicOrbit,
    u0: float,
    N: int = 8,
    tol_conv: float = 1e-4,
    n_scan: int = 512,
    segments_per_period: int = 4,
    h: Optional[float] = None,
    v_bound: Optional[float] = None,
) -> AsymptoticRun:
    """The t -> -inf counterpart: run the future construction for f(-t, u, -v) and map back."""
    reversed_field = field.reversed()
    run = asymptotic_future(
        reversed_field, band.reversed(), reverse_orbit(target, reversed_field), u0, N, tol_conv,
        n_scan=n_scan, segments_per_period=segments_per_period, h=h, v_bound=v_bound,
    )
    log = [dict(entry, v0=-entry["v0"]) for entry in run.sequence_log]
    return replace(
        run,
        target=target,
        direction="past",
        limit=run.limit.time_reversed(),
        barrier=run.barrier.reversed(),
        sequence_log=log,
        terminal_slope=None if run.terminal_slope is None else -run.terminal_slope,
    )


def manifold_sweep(
    field: Field,
    band: Band,
    target: PeriodicOrbit,
    u0_list: Sequence[float],
    N: int = 8,
    tol_conv: float = 1e-4,
    directions: Sequence[str] = ("future", "past"),
    threads: Optional[int] = None,
    **options,
) -> ManifoldSample:
    """Independent runs per (u0, direction); failures are collected, not raised."""
    jobs = [(float(u0), d) for u0 in u0_list for d in directions]
    if not jobs:
        return ManifoldSample()
    runner = {"future": asymptotic_future, "past": asymptotic_past}

    def run_one(job):
        u0, direction = job
        try:
            return runner[direction](field, band, target, u0, N, tol_conv, **options), None
        except LusolveError as exc:
            return None, str(exc)

    workers = threads or settings.threads
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(run_one, jobs))

    sample = ManifoldSample()
    for (u0, direction), (run, error) in zip(jobs, outcomes):
        if run is None:
            logger.warning("Manifold run failed", u0=u0, direction=direction, error=error)
            sample.failures.append((u0, direction, error))
        else:
            sample.points.append((u0, run.initial_velocity, direction))
            sample.runs.append(run)
    logger.info("Manifold sweep complete", points=len(sample.points), failures=len(sample.failures))
    return sample
