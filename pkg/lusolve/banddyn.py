"""
Dynamics between two ordered periodic solutions: which endpoint receives the
asymptotic solutions, whether the band is filled by a monotone family of
periodic orbits, and stability verdicts.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
import structlog

from lusolve.asymptotic import AsymptoticRun
from lusolve.config import settings
from lusolve.curves import Band, Curve, verify_lower, verify_upper
from lusolve.dirichlet import DirichletSpec, shoot_all
from lusolve.errors import (
    InternalConsistencyError,
    NonNeighboringError,
    NoSolutionFound,
    PreconditionError,
)
from lusolve.fieldspec import Field
from lusolve.flow import default_step, integrate, integrate_batch
from lusolve.periodic import PeriodicOrbit, _newton_batch, find_periodic, floquet_multipliers, make_orbit

logger = structlog.get_logger()

SAME_ORBIT_TOL = 1e-6
CLOSURE_TOL = 1e-8
GAP_SUBGRID = 64
MAX_BRACKET_ROUNDS = 8
TRACE_SLACK = 1e-8
PLATEAU_TOL = 1e-4
PLATEAU_PERIODS = 5
EDGE_S = 1e-4
FLOQUET_MARGIN = 1e-6


def _pool_map(fn, items):
    with ThreadPoolExecutor(max_workers=settings.threads) as pool:
        return list(pool.map(fn, items))


def _orbit_band(alpha: PeriodicOrbit, beta: PeriodicOrbit, field: Field) -> Band:
    return Band(alpha.as_curve(field), beta.as_curve(field))


def _velocity_bracket(v_bound: Optional[float]):
    if v_bound is not None:
        return -v_bound, v_bound
    return None, None


# ---------------------------------------------------------------------------
# Neighboring classification
# ---------------------------------------------------------------------------


class Reception(str, Enum):
    BETA = "beta-receives"
    ALPHA = "alpha-receives"
    MIXED = "mixed"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True, eq=False)
class ReturnEntry:
    u0: float
    gaps: list
    solutions: list
    error: Optional[str] = None
    barriers_ok: bool = True

    @property
    def has_positive(self) -> bool:
        return any(g > 0 for g in self.gaps)

    @property
    def has_negative(self) -> bool:
        return any(g < 0 for g in self.gaps)

    def as_dict(self) -> dict:
        return {"u0": self.u0, "gaps": list(self.gaps), "error": self.error, "barriers_ok": self.barriers_ok}


@dataclass(frozen=True, eq=False)
class ReturnFamily:
    """Return solutions u(0) = u(T) = u0 for u0 on [alpha(0)+eps, beta(0)-eps]."""

    epsilon: float
    entries: list

    @property
    def family_sign(self) -> str:
        if any(e.error or not e.gaps for e in self.entries):
            return "incomplete"
        gaps = [g for e in self.entries for g in e.gaps]
        if all(g > 0 for g in gaps):
            return "all-positive"
        if all(g < 0 for g in gaps):
            return "all-negative"
        return "mixed"

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "family_sign": self.family_sign,
            "entries": [e.as_dict() for e in self.entries],
        }


@dataclass(frozen=True, eq=False)
class Classification:
    families: list
    verdict: Reception
    barriers_ok: bool = True

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "barriers_ok": self.barriers_ok,
            "families": [f.as_dict() for f in self.families],
        }


def default_eps_list(alpha: PeriodicOrbit, beta: PeriodicOrbit, count: int = 4) -> list[float]:
    gap = beta.u0 - alpha.u0
    return [gap * 2.0 ** (-k - 2) for k in range(1, count + 1)]


def check_neighboring(
    field: Field,
    alpha: PeriodicOrbit,
    beta: PeriodicOrbit,
    v_bound: Optional[float] = None,
    grid: int = 32,
    h: Optional[float] = None,
) -> None:
    """Raise NonNeighboringError when a third periodic orbit lies between alpha and beta."""
    pair = find_periodic(field, _orbit_band(alpha, beta, field), grid_u=grid, grid_v=grid, h=h, v_bound=v_bound)
    for orbit in pair.orbits:
        if not any(_same_orbit(orbit, end) for end in (alpha, beta)):
            raise NonNeighboringError(
                f"periodic orbit through u0={orbit.u0:.6g} lies between the endpoints "
                f"({len(pair.orbits)} found{', continuum suspected' if pair.degenerate_suspect else ''})"
            )


def _same_orbit(a: PeriodicOrbit, b: PeriodicOrbit) -> bool:
    u, _ = b.state(a.orbit.t)
    return float(np.max(np.abs(a.orbit.u - u))) <= SAME_ORBIT_TOL


def _return_entry(field: Field, band: Band, u0: float, v_lo, v_hi, n_scan: int, h: float) -> ReturnEntry:
    T = field.period
    spec = DirichletSpec(0.0, T, u0, u0, band)
    try:
        solutions = shoot_all(field, spec, v_lo, v_hi, n_scan=n_scan, h=h)
    except NoSolutionFound as exc:
        logger.warning("No return solution", u0=u0, error=str(exc))
        return ReturnEntry(u0, [], [], error=str(exc))

    gaps, kept, barriers_ok = [], [], True
    for y in solutions.solutions:
        if abs(float(y.u[-1] - y.u[0])) > 1e-10 * (1 + abs(u0)):
            continue
        g = float(y.v[0] - y.v[-1])
        gaps.append(g)
        kept.append(y)
        # the periodic extension is a corner barrier of the matching kind
        if g != 0:
            curve = Curve.from_trajectory(y, field, name=f"return({u0:.6g})")
            verdict = (verify_lower if g > 0 else verify_upper)(curve, field)
            barriers_ok &= verdict.passed
    return ReturnEntry(u0, gaps, kept, barriers_ok=barriers_ok)


def classify_neighboring(
    field: Field,
    alpha: PeriodicOrbit,
    beta: PeriodicOrbit,
    eps_list: Optional[Sequence[float]] = None,
    grid: int = 16,
    v_bound: Optional[float] = None,
    n_scan: int = 512,
    h: Optional[float] = None,
) -> Classification:
    """
    Sweep return families between two neighboring orbits and read off which
    endpoint the asymptotic solutions reach. Positive derivative gaps give corner
    lower barriers, so they push the asymptotics up to beta.
    """
    h = h or alpha.orbit.step or default_step(field)
    check_neighboring(field, alpha, beta, v_bound=v_bound, h=h)
    band = _orbit_band(alpha, beta, field)
    v_lo, v_hi = _velocity_bracket(v_bound)
    eps_list = list(eps_list) if eps_list else default_eps_list(alpha, beta)

    families = []
    for eps in eps_list:
        positions = np.linspace(alpha.u0 + eps, beta.u0 - eps, grid)
        entries = _pool_map(lambda u0: _return_entry(field, band, float(u0), v_lo, v_hi, n_scan, h), positions)
        families.append(ReturnFamily(float(eps), entries))
        logger.debug("Return family swept", epsilon=eps, sign=families[-1].family_sign)

    entries = [e for fam in families for e in fam.entries]
    positive = all(e.has_positive for e in entries)
    negative = all(e.has_negative for e in entries)
    if positive and not negative:
        verdict = Reception.BETA
    elif negative and not positive:
        verdict = Reception.ALPHA
    else:
        verdict = Reception.MIXED
    failed = [e.u0 for e in entries if not e.barriers_ok]
    if failed:
        # a gap sign is only a reception verdict once its corner barrier is confirmed
        logger.warning("Return solutions failed the barrier replay", positions=failed, verdict=verdict.value)
        verdict = Reception.INCONCLUSIVE
    logger.info("Neighboring classification complete", verdict=verdict.value, families=len(families))
    return Classification(families, verdict, barriers_ok=not failed)


# ---------------------------------------------------------------------------
# Degeneracy
# ---------------------------------------------------------------------------


class Degeneracy(str, Enum):
    DEGENERATE = "degenerate"
    GAP_FOUND = "gap-found"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True, eq=False)
class DegeneracyReport:
    verdict: Degeneracy
    s_grid: np.ndarray
    psi_samples: list = dc_field(default_factory=list)  # PeriodicOrbit per s when degenerate
    gap_bracket: Optional[tuple] = None
    failures: list = dc_field(default_factory=list)

    def psi_matrix(self) -> np.ndarray:
        """Psi[k, i] = x_{s_k}(t_i) on the common orbit mesh."""
        return np.stack([o.orbit.u for o in self.psi_samples])

    def as_dict(self) -> dict:
        out = {"verdict": self.verdict.value, "grid_s": len(self.s_grid), "failures": list(self.failures)}
        if self.psi_samples:
            out["psi_u0"] = [o.u0 for o in self.psi_samples]
        if self.gap_bracket is not None:
            out["gap_bracket"] = [o.u0 for o in self.gap_bracket]
        return out


def _orbit_through(field: Field, band: Band, u0: float, v_lo, v_hi, n_scan: int, h: float) -> Optional[PeriodicOrbit]:
    spec = DirichletSpec(0.0, field.period, u0, u0, band)
    try:
        solutions = shoot_all(field, spec, v_lo, v_hi, n_scan=n_scan, h=h)
    except NoSolutionFound:
        return None
    for y in solutions.solutions:
        if abs(float(y.v[-1] - y.v[0])) <= CLOSURE_TOL:
            return make_orbit(field, float(y.u[0]), float(y.v[0]), h)
    return None


def detect_degeneracy(
    field: Field,
    alpha: PeriodicOrbit,
    beta: PeriodicOrbit,
    grid_s: int = 129,
    v_bound: Optional[float] = None,
    n_scan: int = 128,
    h: Optional[float] = None,
) -> DegeneracyReport:
    """
    Look for a periodic orbit through every x(0) = (1-s) alpha(0) + s beta(0).
    All found and strictly increasing in s: degenerate. A failing position whose
    neighbourhood holds no orbit on a 64-point sub-grid: gap-found.
    """
    if not alpha.u0 < beta.u0:
        raise PreconditionError("degeneracy needs alpha(0) < beta(0)")
    h = h or alpha.orbit.step or default_step(field)
    band = _orbit_band(alpha, beta, field)
    v_lo, v_hi = _velocity_bracket(v_bound)
    s_grid = np.linspace(0.0, 1.0, grid_s)

    def at(s):
        return _orbit_through(field, band, (1 - s) * alpha.u0 + s * beta.u0, v_lo, v_hi, n_scan, h)

    found = _pool_map(at, s_grid)
    failures = [float(s) for s, o in zip(s_grid, found) if o is None]
    log = logger.bind(field=field.field_id, grid_s=grid_s)

    if not failures:
        psi = np.stack([o.orbit.u for o in found])
        ends_ok = _same_orbit(found[0], alpha) and _same_orbit(found[-1], beta)
        increasing = bool(np.all(np.diff(psi, axis=0) > 0))
        if ends_ok and increasing:
            log.info("Band is degenerate")
            return DegeneracyReport(Degeneracy.DEGENERATE, s_grid, psi_samples=list(found))
        log.warning("Orbits through every position but not a monotone family", ends_ok=ends_ok)
        return DegeneracyReport(Degeneracy.INCONCLUSIVE, s_grid, psi_samples=list(found))

    # bracket the first failure by the nearest successes and look between them
    first = int(np.flatnonzero([o is None for o in found])[0])
    below = found[first - 1] if first > 0 else alpha
    above = next((found[i] for i in range(first, len(found)) if found[i] is not None), beta)
    for _ in range(MAX_BRACKET_ROUNDS):
        sub = np.linspace(below.u0, above.u0, GAP_SUBGRID + 2)[1:-1]
        hits = [o for o in _pool_map(lambda u0: _orbit_through(field, band, float(u0), v_lo, v_hi, n_scan, h), sub) if o]
        if not hits:
            log.info("Gap between periodic orbits", lower=below.u0, upper=above.u0)
            return DegeneracyReport(Degeneracy.GAP_FOUND, s_grid, gap_bracket=(below, above), failures=failures)
        above = min(hits, key=lambda o: o.u0)
    log.warning("Gap bracket did not settle", lower=below.u0, upper=above.u0)
    return DegeneracyReport(Degeneracy.INCONCLUSIVE, s_grid, failures=failures)


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------


class StabilityTag(str, Enum):
    UNSTABLE_CERTIFIED = "unstable-certified"
    FLOQUET_UNSTABLE = "floquet-unstable"
    NUMERICALLY_STABLE = "numerically-stable"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True, eq=False)
class ConservativeTrace:
    """s(t) with u(t) = Psi(t, s(t)), measured from the start orbit (s = 0 at the start)."""

    epsilon: float
    start: str
    t: np.ndarray
    s_of_t: np.ndarray
    start_orbit: PeriodicOrbit
    plateau: Optional[float] = None
    exit_time: Optional[float] = None
    certified_orbit: Optional[PeriodicOrbit] = None

    @property
    def escaped(self) -> bool:
        return self.plateau is None and (self.exit_time is not None or float(self.s_of_t[-1]) >= 1 - EDGE_S)

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "start": self.start,
            "plateau": self.plateau,
            "exit_time": self.exit_time,
            "escaped": self.escaped,
            "s_final": float(self.s_of_t[-1]),
        }


@dataclass(frozen=True, eq=False)
class StabilityVerdict:
    orbit: PeriodicOrbit
    tag: StabilityTag
    multipliers: np.ndarray
    witnesses: list = dc_field(default_factory=list)

    @property
    def max_multiplier(self) -> float:
        return float(np.max(np.abs(self.multipliers)))

    def as_dict(self) -> dict:
        return {
            "u0": self.orbit.u0,
            "tag": self.tag.value,
            "max_abs_multiplier": self.max_multiplier,
            "floquet": [[float(mu.real), float(mu.imag)] for mu in self.multipliers],
            "witnesses": len(self.witnesses),
        }


Witness = Union[AsymptoticRun, ConservativeTrace]


def _certifies(orbit: PeriodicOrbit, witness: Witness) -> bool:
    if isinstance(witness, AsymptoticRun):
        return witness.certifies_instability and _same_orbit(witness.target, orbit)
    if isinstance(witness, ConservativeTrace):
        if witness.escaped:
            return _same_orbit(witness.start_orbit, orbit)
        return witness.certified_orbit is not None and _same_orbit(witness.certified_orbit, orbit)
    return False


def _perturbations_stay_close(
    field: Field, orbit: PeriodicOrbit, perturbation: float, count: int, periods: int, h: float
) -> bool:
    theta = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
    u = orbit.u0 + perturbation * np.cos(theta)
    v = orbit.v0 + perturbation * np.sin(theta)
    T = field.period
    for k in range(periods):
        res = integrate_batch(field, k * T, u, v, (k + 1) * T, h, record=True)
        if res.diverged.any():
            return False
        x_u, x_v = orbit.state(res.offsets)
        dist = np.hypot(res.path_u - x_u[:, None], res.path_v - x_v[:, None])
        if float(np.max(dist)) > 10 * perturbation:
            return False
        u, v = res.u, res.v
    return True


def stability_verdict(
    field: Field,
    orbit: PeriodicOrbit,
    witnesses: Sequence[Witness] = (),
    perturbation: float = 1e-4,
    count: int = 100,
    periods: int = 20,
    h: Optional[float] = None,
) -> StabilityVerdict:
    h = h or orbit.orbit.step or default_step(field)
    multipliers = floquet_multipliers(field, orbit, h)
    modulus = float(np.max(np.abs(multipliers)))
    valid = [w for w in witnesses if _certifies(orbit, w)]

    if valid:
        tag = StabilityTag.UNSTABLE_CERTIFIED
    elif modulus > 1 + FLOQUET_MARGIN:
        tag = StabilityTag.FLOQUET_UNSTABLE
    elif modulus < 1 - FLOQUET_MARGIN and _perturbations_stay_close(field, orbit, perturbation, count, periods, h):
        tag = StabilityTag.NUMERICALLY_STABLE
    else:
        tag = StabilityTag.INCONCLUSIVE
    logger.info("Stability verdict", u0=orbit.u0, tag=tag.value, max_multiplier=modulus, witnesses=len(valid))
    return StabilityVerdict(orbit, tag, multipliers, valid)


# ---------------------------------------------------------------------------
# Conservative instability locator
# ---------------------------------------------------------------------------


def _invert_psi(psi: np.ndarray, s_grid: np.ndarray, column: np.ndarray, u: np.ndarray) -> np.ndarray:
    """s with Psi(t_i, s) = u_i over the monotone columns, linear in s; NaN outside the family."""
    cols = psi[:, column]
    k = np.clip((cols <= u[None, :]).sum(axis=0) - 1, 0, len(s_grid) - 2)
    idx = np.arange(u.size)
    lo, hi = cols[k, idx], cols[k + 1, idx]
    w = (u - lo) / (hi - lo)
    s = s_grid[k] + w * (s_grid[k + 1] - s_grid[k])
    return np.where((u < cols[0]) | (u > cols[-1]), np.nan, s)


def conservative_locator(
    field: Field,
    report: DegeneracyReport,
    start: str = "alpha",
    epsilon: float = 1e-3,
    max_periods: int = 2000,
) -> tuple[ConservativeTrace, StabilityVerdict]:
    """
    Push off the start orbit by epsilon in velocity and follow s(t). A plateau
    at an interior level certifies the orbit there; reaching the far end
    certifies the start orbit.
    """
    if not field.conservative:
        raise PreconditionError(f"field {field.field_id!r} is not conservative")
    if report.verdict is not Degeneracy.DEGENERATE:
        raise PreconditionError(f"locator needs a degenerate band, got {report.verdict.value}")
    if not epsilon > 0:
        raise PreconditionError("epsilon must be positive; an unperturbed start stays on its orbit")
    if start not in ("alpha", "beta"):
        raise PreconditionError(f"start must be alpha or beta, got {start!r}")

    psi = report.psi_matrix()
    s_grid = np.asarray(report.s_grid)
    orbits = report.psi_samples
    origin = orbits[0] if start == "alpha" else orbits[-1]
    h = origin.orbit.step
    m = len(origin.orbit.t) - 1
    T = field.period
    sign = 1.0 if start == "alpha" else -1.0

    u, v = origin.u0, origin.v0 + sign * epsilon
    times, trace = [np.array([0.0])], [np.array([0.0])]
    plateau = exit_time = None
    log = logger.bind(start=start, epsilon=epsilon)
    for k in range(max_periods):
        traj = integrate(field, k * T, u, v, (k + 1) * T, h)
        column = np.arange(1, len(traj.t)) % m
        s = _invert_psi(psi, s_grid, column, traj.u[1:])
        progress = s if start == "alpha" else 1.0 - s
        outside = np.flatnonzero(np.isnan(progress))
        if outside.size:
            cut = int(outside[0])
            times.append(traj.t[1 : 1 + cut])
            trace.append(progress[:cut])
            exit_time = float(traj.t[1 + cut])
            break
        times.append(traj.t[1:])
        trace.append(progress)
        u, v = traj.state(-1)
        if k + 1 >= PLATEAU_PERIODS:
            window = np.concatenate(trace[-PLATEAU_PERIODS:])
            level = float(window[-1])
            if np.ptp(window) < PLATEAU_TOL:
                # settled next to the far orbit counts as an escape
                if EDGE_S < level < 1 - EDGE_S:
                    plateau = level
                break

    t_all, s_all = np.concatenate(times), np.concatenate(trace)
    if np.any(np.diff(s_all) < -TRACE_SLACK):
        raise InternalConsistencyError("locator trace s(t) decreases while inside the band")

    certified = None
    if plateau is not None:
        level = plateau if start == "alpha" else 1.0 - plateau
        u0 = float(np.interp(level, s_grid, psi[:, 0]))
        v0 = float(np.interp(level, s_grid, [o.v0 for o in orbits]))
        pu, pv, ok = _newton_batch(field, np.array([u0]), np.array([v0]), h)
        certified = make_orbit(field, float(pu[0]), float(pv[0]), h) if ok[0] else None
    trace_ = ConservativeTrace(epsilon, start, t_all, s_all, origin, plateau, exit_time, certified)

    subject = certified or origin
    verdict = stability_verdict(field, subject, [trace_], h=h)
    log.info("Locator finished", plateau=plateau, exit_time=exit_time, tag=verdict.tag.value)
    return trace_, verdict
