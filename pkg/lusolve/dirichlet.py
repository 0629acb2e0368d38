"""Dirichlet problems y(a) = y_a, y(b) = y_b between two barriers, solved by shooting."""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import structlog

from lusolve.curves import Band
from lusolve.errors import (
    IntegrationError,
    InternalConsistencyError,
    NoSolutionFound,
    PreconditionError,
)
from lusolve.fieldspec import Field
from lusolve.flow import Trajectory, default_step, integrate, integrate_batch, propagate, trajectory_residual

logger = structlog.get_logger()

N_SCAN = 512
NEAR_ZERO = 1e-10
IN_BAND_SLACK = 1e-9
TIE_TOL = 1e-9
DOMINANCE_SLACK = 1e-7
MAX_REFINE = 200
MAX_NEWTON = 50
MAX_HALVINGS = 30


@dataclass(frozen=True)
class DirichletSpec:
    a: float
    b: float
    y_a: float
    y_b: float
    band: Band

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise PreconditionError(f"need a < b, got a={self.a}, b={self.b}")
        for t, y, name in ((self.a, self.y_a, "y_a"), (self.b, self.y_b, "y_b")):
            lo, hi = self.band.lower(t), self.band.upper(t)
            if not (lo - IN_BAND_SLACK <= y <= hi + IN_BAND_SLACK):
                raise PreconditionError(f"{name}={y} outside the band [{lo}, {hi}] at t={t}")

    @property
    def tol_bc(self) -> float:
        return 1e-10 * (1 + abs(self.y_b))

    def restricted(self, sub_a: float, sub_b: float, y_a: float, y_b: float) -> "DirichletSpec":
        return DirichletSpec(sub_a, sub_b, y_a, y_b, self.band)


@dataclass(frozen=True, eq=False)
class SolutionSet:
    """In-band solutions of one Dirichlet problem, sorted by initial velocity."""

    spec: DirichletSpec
    solutions: list
    extremal_max: int
    extremal_min: int
    field: Field
    v_bracket: tuple = (-math.inf, math.inf)
    h: float = 0.0

    @property
    def v0_list(self) -> list[float]:
        return [float(s.v[0]) for s in self.solutions]

    @property
    def maximal(self) -> Trajectory:
        return self.solutions[self.extremal_max]

    @property
    def minimal(self) -> Trajectory:
        return self.solutions[self.extremal_min]

    def __len__(self) -> int:
        return len(self.solutions)

    def as_dict(self) -> dict:
        return {
            "count": len(self.solutions),
            "extremal_max": self.extremal_max,
            "extremal_min": self.extremal_min,
            "v0_list": self.v0_list,
        }


def default_bracket(field: Field, v_lo: Optional[float], v_hi: Optional[float]) -> tuple[float, float]:
    if v_lo is None or v_hi is None:
        K = getattr(field, "K", None)
        if K is None:
            raise PreconditionError("a velocity bracket is required for an unmodified field")
        v_lo = -K if v_lo is None else v_lo
        v_hi = K if v_hi is None else v_hi
    if not v_hi > v_lo:
        raise PreconditionError(f"empty velocity bracket [{v_lo}, {v_hi}]")
    return float(v_lo), float(v_hi)


# ---------------------------------------------------------------------------
# Single shooting
# ---------------------------------------------------------------------------


def _miss(field: Field, spec: DirichletSpec, v0: np.ndarray, h: float) -> np.ndarray:
    res = integrate_batch(field, spec.a, np.full(v0.shape, spec.y_a), v0, spec.b, h)
    return np.where(res.diverged, np.nan, res.u - spec.y_b)


def _refine(field: Field, spec: DirichletSpec, lo, hi, m_lo, m_hi, h: float) -> list[float]:
    """Illinois false position on all brackets at once, bisection when it stalls."""
    a, b = np.array(lo, dtype=float), np.array(hi, dtype=float)
    fa, fb = np.array(m_lo, dtype=float), np.array(m_hi, dtype=float)
    roots = np.full(a.shape, np.nan)
    active = np.ones(a.shape, dtype=bool)
    tol = spec.tol_bc
    for it in range(MAX_REFINE):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        with np.errstate(all="ignore"):
            c = b[idx] - fb[idx] * (b[idx] - a[idx]) / (fb[idx] - fa[idx])
        left, right = np.minimum(a[idx], b[idx]), np.maximum(a[idx], b[idx])
        bisect = ~np.isfinite(c) | (c <= left) | (c >= right) | (it % 4 == 3)
        c = np.where(bisect, 0.5 * (a[idx] + b[idx]), c)
        fc = _miss(field, spec, c, h)

        converged = np.isfinite(fc) & (np.abs(fc) < tol)
        roots[idx[converged]] = c[converged]
        active[idx[converged]] = False

        go = ~converged & np.isfinite(fc)
        flip = go & (np.sign(fc) != np.sign(fb[idx]))
        stay = go & ~flip
        # Illinois: the retained end has its value halved
        fa_new, a_new = fa[idx].copy(), a[idx].copy()
        a_new[flip], fa_new[flip] = b[idx][flip], fb[idx][flip]
        fa_new[stay] *= 0.5
        a[idx], fa[idx] = a_new, fa_new
        b[idx[go]], fb[idx[go]] = c[go], fc[go]

        collapsed = go & (np.abs(b[idx] - a[idx]) <= 4 * np.finfo(float).eps * (1 + np.abs(c)))
        lost = ~np.isfinite(fc) | collapsed
        if lost.any():
            logger.warning("Bracket refinement abandoned", count=int(lost.sum()), brackets=c[lost].tolist())
            active[idx[lost]] = False
    if active.any():
        logger.warning("Bracket refinement hit the iteration cap", count=int(active.sum()))
    return [float(r) for r in roots if np.isfinite(r)]


def shoot_all(
    field: Field,
    spec: DirichletSpec,
    v_lo: Optional[float] = None,
    v_hi: Optional[float] = None,
    n_scan: int = N_SCAN,
    h: Optional[float] = None,
) -> SolutionSet:
    """
    Enumerate in-band solutions by scanning the miss function
    m(v0) = u(b; a, y_a, v0) - y_b on n_scan velocities and refining every sign
    change. An empty result means none was found, not that none exists.
    """
    v_lo, v_hi = default_bracket(field, v_lo, v_hi)
    h = h or default_step(field)
    grid = np.linspace(v_lo, v_hi, n_scan)
    m = _miss(field, spec, grid, h)
    if not (np.isfinite(m[0]) and np.isfinite(m[-1])):
        raise IntegrationError(f"miss function is not finite at the bracket ends [{v_lo}, {v_hi}]")

    near = np.isfinite(m) & (np.abs(m) < NEAR_ZERO)
    candidates = [float(v) for v in grid[near]]
    finite_pair = np.isfinite(m[:-1]) & np.isfinite(m[1:])
    change = finite_pair & (np.sign(m[:-1]) * np.sign(m[1:]) < 0) & ~near[:-1] & ~near[1:]
    cells = np.flatnonzero(change)
    candidates += _refine(field, spec, grid[cells], grid[cells + 1], m[cells], m[cells + 1], h)
    logger.debug("Dirichlet scan", sign_changes=len(cells), near_zero=int(near.sum()), n_scan=n_scan)

    trajectories = []
    for v0 in sorted(candidates):
        try:
            trajectories.append(integrate(field, spec.a, spec.y_a, v0, spec.b, h))
        except IntegrationError as exc:
            logger.warning("Candidate discarded", v0=v0, error=str(exc))
    result = _finalize(field, spec, trajectories, (v_lo, v_hi), h)
    logger.info("Dirichlet scan complete", count=len(result), bracket=[v_lo, v_hi], a=spec.a, b=spec.b)
    return result


def _finalize(field: Field, spec: DirichletSpec, trajectories: Sequence[Trajectory], bracket, h) -> SolutionSet:
    kept: list[Trajectory] = []
    for traj in trajectories:
        if not np.all(spec.band.contains(traj.t, traj.u, IN_BAND_SLACK)):
            continue
        if any(np.max(np.abs(traj.u - other.u)) <= TIE_TOL for other in kept if len(other) == len(traj)):
            continue
        kept.append(traj)
    if not kept:
        raise NoSolutionFound(f"no in-band solution found in bracket [{bracket[0]}, {bracket[1]}]")
    kept.sort(key=lambda s: float(s.v[0]))

    mid = int(np.argmin(np.abs(kept[0].t - 0.5 * (spec.a + spec.b))))
    values = [float(s.u[mid]) for s in kept]
    i_max, i_min = int(np.argmax(values)), int(np.argmin(values))
    for i, s in enumerate(kept):
        if np.min(kept[i_max].u - s.u) < -DOMINANCE_SLACK or np.min(s.u - kept[i_min].u) < -DOMINANCE_SLACK:
            raise InternalConsistencyError(
                f"no pointwise extremal among {len(kept)} solutions on [{spec.a}, {spec.b}]; "
                "the scan likely missed a solution"
            )
    return SolutionSet(spec, kept, i_max, i_min, field=field, v_bracket=tuple(bracket), h=h)


# ---------------------------------------------------------------------------
# Multiple shooting
# ---------------------------------------------------------------------------


def _segment_layout(field: Field, spec: DirichletSpec, segments_per_period: int, h: float):
    length = spec.b - spec.a
    count = max(1, math.ceil(length / field.period * segments_per_period - 1e-9))
    seg_len = length / count
    steps = max(1, round(seg_len / h))
    return count, seg_len, seg_len / steps


def _newton_long(field: Field, spec: DirichletSpec, starts, seg_len, h, x0) -> Optional[np.ndarray]:
    S = len(starts)
    tol = spec.tol_bc

    def residual(x):
        u = np.concatenate([[spec.y_a], x[1::2]])
        v = x[0::2]
        res = propagate(field, starts, u, v, starts + seg_len, h)
        if res.diverged.any():
            return None, None
        F = np.empty(2 * S - 1)
        J = np.zeros((2 * S - 1, 2 * S - 1))
        for k in range(S):
            # column of v_k is 2k, column of u_k is 2k-1 (u_0 fixed)
            rows = [2 * k, 2 * k + 1] if k < S - 1 else [2 * k]
            end = (res.u[k], res.v[k])
            for r, comp in zip(rows, range(2)):
                J[r, 2 * k] = res.jacobian[k, comp, 1]
                if k > 0:
                    J[r, 2 * k - 1] = res.jacobian[k, comp, 0]
            if k < S - 1:
                F[2 * k] = end[0] - x[2 * k + 1]
                F[2 * k + 1] = end[1] - x[2 * k + 2]
                J[2 * k, 2 * k + 1] -= 1.0
                J[2 * k + 1, 2 * k + 2] -= 1.0
            else:
                F[2 * k] = end[0] - spec.y_b
        return F, J

    x = np.array(x0, dtype=float)
    F, J = residual(x)
    if F is None:
        return None
    for _ in range(MAX_NEWTON):
        norm = float(np.max(np.abs(F)))
        if norm < tol:
            return x
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, -F, rcond=None)[0]
        step = 1.0
        for _ in range(MAX_HALVINGS):
            F_new, J_new = residual(x + step * dx)
            if F_new is not None and float(np.max(np.abs(F_new))) < norm:
                break
            step *= 0.5
        else:
            logger.warning("Multiple shooting stalled", residual=norm)
            return None
        x, F, J = x + step * dx, F_new, J_new
    logger.warning("Multiple shooting did not converge", residual=float(np.max(np.abs(F))))
    return None


def solve_long(
    field: Field,
    spec: DirichletSpec,
    seeds: Sequence[Trajectory],
    segments_per_period: int = 4,
    h: Optional[float] = None,
) -> SolutionSet:
    """
    Multiple shooting for intervals longer than a period.

    Each seed supplies the states at the segment starts; damped Newton then closes
    the junctions and the far boundary condition. Converged solutions are filtered
    and extremal-marked like shoot_all's.
    """
    if not seeds:
        raise PreconditionError("solve_long needs at least one seed trajectory")
    h = h or default_step(field)
    S, seg_len, h_seg = _segment_layout(field, spec, segments_per_period, h)
    starts = spec.a + seg_len * np.arange(S)

    trajectories = []
    for seed in seeds:
        u_seed, v_seed = seed.at(starts)
        x0 = np.empty(2 * S - 1)
        x0[0::2] = v_seed
        x0[1::2] = u_seed[1:]
        x = _newton_long(field, spec, starts, seg_len, h_seg, x0)
        if x is None:
            continue
        trajectories.append(_assemble(field, spec, starts, seg_len, h_seg, x))

    bracket = tuple(float(s.v[0]) for s in (min(seeds, key=lambda s: s.v[0]), max(seeds, key=lambda s: s.v[0])))
    result = _finalize(field, spec, trajectories, bracket, h_seg)
    logger.info("Multiple shooting complete", count=len(result), seeds=len(seeds), segments=S, a=spec.a, b=spec.b)
    return result


def straight_seeds(field: Field, spec: DirichletSpec, h: Optional[float] = None) -> list[Trajectory]:
    """Boundary-matching seeds for multiple shooting: the chord, and the band midline bent onto the data."""
    h = h or default_step(field)
    t = np.append(np.arange(spec.a, spec.b - 0.5 * h, h), spec.b)
    w = (t - spec.a) / (spec.b - spec.a)
    chord = spec.y_a + w * (spec.y_b - spec.y_a)

    mid = 0.5 * (spec.band.lower(t) + spec.band.upper(t))
    bent = mid + (1 - w) * (spec.y_a - mid[0]) + w * (spec.y_b - mid[-1])

    seeds = []
    for u in (chord, bent):
        v = np.gradient(u, t)
        seeds.append(Trajectory(t, u, v, np.gradient(v, t), h, field.field_id))
    return seeds


def _assemble(field: Field, spec: DirichletSpec, starts, seg_len, h, x) -> Trajectory:
    u0 = np.concatenate([[spec.y_a], x[1::2]])
    res = integrate_batch(field, starts, u0, x[0::2], starts + seg_len, h, record=True)
    S = len(starts)
    t = (starts[None, :] + res.offsets[:, None]).T
    # drop each junction's duplicate sample
    t = np.concatenate([t[0]] + [t[k, 1:] for k in range(1, S)])
    u = np.concatenate([res.path_u[:, 0]] + [res.path_u[1:, k] for k in range(1, S)])
    v = np.concatenate([res.path_v[:, 0]] + [res.path_v[1:, k] for k in range(1, S)])
    t[-1] = spec.b
    a = -np.asarray(field(t, u, v), dtype=float)
    return Trajectory(t, u, v, a, h, field.field_id, trajectory_residual(t, v, -a, h))


def solve_family(
    field: Field,
    spec: DirichletSpec,
    seeds: Optional[Sequence[Trajectory]] = None,
    v_lo: Optional[float] = None,
    v_hi: Optional[float] = None,
    n_scan: int = N_SCAN,
    segments_per_period: int = 4,
    h: Optional[float] = None,
) -> SolutionSet:
    """shoot_all up to one period, multiple shooting beyond."""
    if spec.b - spec.a <= field.period * (1 + 1e-9):
        return shoot_all(field, spec, v_lo, v_hi, n_scan=n_scan, h=h)
    seeds = seeds or straight_seeds(field, spec, h)
    return solve_long(field, spec, seeds, segments_per_period=segments_per_period, h=h)


# ---------------------------------------------------------------------------
# Restriction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RestrictionVerdict:
    passed: bool
    distance_max: float
    distance_min: float


def restriction_check(solutions: SolutionSet, sub_a: float, sub_b: float, tol: float = 1e-6) -> RestrictionVerdict:
    """Re-solve on [sub_a, sub_b] with boundary values read off the extremals and compare."""
    spec = solutions.spec
    if not (spec.a <= sub_a < sub_b <= spec.b):
        raise PreconditionError(f"[{sub_a}, {sub_b}] is not inside [{spec.a}, {spec.b}]")

    distances = []
    for extremal, pick in ((solutions.maximal, "maximal"), (solutions.minimal, "minimal")):
        y_a, _ = extremal.at(sub_a)
        y_b, _ = extremal.at(sub_b)
        sub_spec = spec.restricted(sub_a, sub_b, y_a, y_b)
        restriction = extremal.window(sub_a, sub_b)
        v_lo, v_hi = solutions.v_bracket
        if not (math.isfinite(v_lo) and v_lo < restriction.v[0] < v_hi):
            pad = 1.0 + abs(float(restriction.v[0]))
            v_lo, v_hi = float(restriction.v[0]) - pad, float(restriction.v[0]) + pad
        sub = solve_family(
            solutions.field, sub_spec, seeds=[restriction], v_lo=v_lo, v_hi=v_hi, h=solutions.h
        )
        candidate = sub.maximal if pick == "maximal" else sub.minimal
        u_ref, _ = extremal.at(candidate.t)
        distances.append(float(np.max(np.abs(candidate.u - u_ref))))
    passed = max(distances) <= tol
    if not passed:
        logger.warning("Restriction differs from the restricted extremal", distances=distances)
    return RestrictionVerdict(passed, distances[0], distances[1])
