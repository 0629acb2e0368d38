"""T-periodic solutions inside a band: fixed points of the time-T map."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import structlog

from lusolve.curves import Band, Curve
from lusolve.decorators import refine_on
from lusolve.errors import InternalConsistencyError, NotConvergedError, PreconditionError
from lusolve.fieldspec import Field
from lusolve.flow import Trajectory, default_step, integrate, integrate_batch, poincare, poincare_batch

logger = structlog.get_logger()

NEWTON_TOL = 1e-10
MAX_NEWTON = 50
MAX_HALVINGS = 30
DEDUP_TOL = 1e-7
IN_BAND_SLACK = 1e-9
DOMINANCE_SLACK = 1e-7
CONTINUUM_CELL_SHARE = 0.25


@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    orbit: Trajectory
    closure_residual: float
    floquet: np.ndarray
    jacobian: np.ndarray

    @property
    def u0(self) -> float:
        return float(self.orbit.u[0])

    @property
    def v0(self) -> float:
        return float(self.orbit.v[0])

    @property
    def period(self) -> float:
        return self.orbit.t_end - self.orbit.t_start

    @property
    def max_multiplier(self) -> float:
        return float(np.max(np.abs(self.floquet)))

    def __call__(self, t):
        """Position at any time through the periodic extension."""
        u, _ = self.orbit.at(np.mod(t, self.period))
        return u

    def state(self, t):
        return self.orbit.at(np.mod(t, self.period))

    def as_curve(self, field: Field) -> Curve:
        return Curve.from_orbit(self, field)

    def as_dict(self) -> dict:
        return {
            "u0": self.u0,
            "v0": self.v0,
            "closure_residual": self.closure_residual,
            "floquet": [[float(mu.real), float(mu.imag)] for mu in self.floquet],
        }


@dataclass(frozen=True, eq=False)
class ExtremalPair:
    orbits: list
    x_min_index: int
    x_max_index: int
    degenerate_suspect: bool = False
    cells_with_roots: int = 0
    cells_total: int = 0

    @property
    def x_min(self) -> PeriodicOrbit:
        return self.orbits[self.x_min_index]

    @property
    def x_max(self) -> PeriodicOrbit:
        return self.orbits[self.x_max_index]

    @property
    def others(self) -> list:
        return [o for i, o in enumerate(self.orbits) if i not in (self.x_min_index, self.x_max_index)]

    def as_dict(self) -> dict:
        return {
            "orbits": [o.as_dict() for o in self.orbits],
            "x_min_index": self.x_min_index,
            "x_max_index": self.x_max_index,
            "degenerate_suspect": self.degenerate_suspect,
        }


def _sorted_multipliers(jacobian: np.ndarray) -> np.ndarray:
    mu = np.linalg.eigvals(jacobian)
    # deterministic order: largest modulus first, then by phase
    return np.array(sorted(mu, key=lambda z: (-abs(z), np.angle(z))))


def floquet_multipliers(field: Field, orbit: PeriodicOrbit, h: Optional[float] = None) -> np.ndarray:
    return _sorted_multipliers(poincare(field, orbit.u0, orbit.v0, h or orbit.orbit.step).jacobian)


# ---------------------------------------------------------------------------
# Newton on the displacement map
# ---------------------------------------------------------------------------


def _newton_batch(field: Field, u: np.ndarray, v: np.ndarray, h: float, tol: float = NEWTON_TOL):
    """Damped Newton on P(x) - x for many seeds at once; returns (u, v, converged)."""
    u, v = np.array(u, dtype=float), np.array(v, dtype=float)
    converged = np.zeros(u.size, dtype=bool)
    failed = np.zeros(u.size, dtype=bool)
    T = field.period
    for _ in range(MAX_NEWTON):
        idx = np.flatnonzero(~(converged | failed))
        if idx.size == 0:
            break
        res = poincare_batch(field, u[idx], v[idx], h)
        D = np.stack([res.u - u[idx], res.v - v[idx]], axis=1)
        norm = np.abs(D).sum(axis=1)
        bad = res.diverged | ~np.isfinite(norm)
        done = ~bad & (norm < tol)
        converged[idx[done]] = True
        failed[idx[bad]] = True
        work = ~bad & ~done
        if not work.any():
            continue

        w = idx[work]
        G = res.jacobian[work] - np.eye(2)
        step = -np.einsum("bij,bj->bi", np.linalg.pinv(G), D[work])
        base_norm = norm[work]
        lam = np.ones(w.size)
        pending = np.ones(w.size, dtype=bool)
        new_u, new_v = u[w].copy(), v[w].copy()
        for _ in range(MAX_HALVINGS):
            pid = np.flatnonzero(pending)
            tu = u[w[pid]] + lam[pid] * step[pid, 0]
            tv = v[w[pid]] + lam[pid] * step[pid, 1]
            trial = integrate_batch(field, 0.0, tu, tv, T, h)
            with np.errstate(invalid="ignore"):
                tn = np.abs(trial.u - tu) + np.abs(trial.v - tv)
                ok = np.isfinite(tn) & (tn < base_norm[pid])
            new_u[pid[ok]], new_v[pid[ok]] = tu[ok], tv[ok]
            pending[pid[ok]] = False
            if not pending.any():
                break
            lam[pending] *= 0.5
        if pending.any():
            logger.warning("Newton stalled, cells skipped", count=int(pending.sum()))
            failed[w[pending]] = True
        u[w], v[w] = new_u, new_v
    return u, v, converged


def make_orbit(field: Field, u0: float, v0: float, h: float) -> PeriodicOrbit:
    traj = integrate(field, 0.0, u0, v0, field.period, h)
    closure = abs(traj.u[-1] - traj.u[0]) + abs(traj.v[-1] - traj.v[0])
    jac = poincare(field, u0, v0, h).jacobian
    return PeriodicOrbit(traj, float(closure), _sorted_multipliers(jac), jac)


def orbit_from_curve(field: Field, curve: Curve, h: Optional[float] = None) -> PeriodicOrbit:
    """Polish a declared periodic solution into a PeriodicOrbit."""
    h = h or default_step(field)
    u, v, ok = _newton_batch(field, np.array([curve(0.0)]), np.array([curve.d1(0.0)]), h)
    if not ok[0]:
        raise NotConvergedError(f"curve {curve.name!r} does not polish to a periodic orbit")
    orbit = make_orbit(field, float(u[0]), float(v[0]), h)
    drift = float(np.max(np.abs(orbit.orbit.u - curve(orbit.orbit.t))))
    if drift > 1e-6 * (1 + float(np.max(np.abs(orbit.orbit.u)))):
        logger.warning("Polished orbit drifts from its declared curve", curve=curve.name, drift=drift)
    return orbit


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


def _seeds(D_u: np.ndarray, D_v: np.ndarray, U: np.ndarray, V: np.ndarray):
    """Cell centres where both components change sign, plus local minima of |D|."""

    def straddles(D):
        corners = np.stack([D[:-1, :-1], D[1:, :-1], D[:-1, 1:], D[1:, 1:]])
        finite = np.isfinite(corners)
        low = np.min(np.where(finite, corners, np.inf), axis=0)
        high = np.max(np.where(finite, corners, -np.inf), axis=0)
        return (low <= 0) & (high >= 0)

    cells = straddles(D_u) & straddles(D_v)
    cu = 0.25 * (U[:-1, :-1] + U[1:, :-1] + U[:-1, 1:] + U[1:, 1:])
    cv = 0.25 * (V[:-1, :-1] + V[1:, :-1] + V[:-1, 1:] + V[1:, 1:])

    norm = np.abs(D_u) + np.abs(D_v)
    padded = np.pad(np.where(np.isfinite(norm), norm, np.inf), 1, constant_values=np.inf)
    minima = np.isfinite(norm)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                minima &= norm <= padded[1 + di : padded.shape[0] - 1 + di, 1 + dj : padded.shape[1] - 1 + dj]
    seed_u = np.concatenate([cu[cells], U[minima]])
    seed_v = np.concatenate([cv[cells], V[minima]])
    cell_of_seed = np.concatenate([np.flatnonzero(cells.ravel()), np.full(int(minima.sum()), -1)])
    return seed_u, seed_v, cell_of_seed, int(cells.size)


def _dedupe(u: np.ndarray, v: np.ndarray) -> list[tuple[float, float]]:
    roots: list[tuple[float, float]] = []
    for a, b in sorted(zip(u.tolist(), v.tolist())):
        if all(max(abs(a - r[0]), abs(b - r[1])) > DEDUP_TOL for r in roots):
            roots.append((a, b))
    return roots


@refine_on(InternalConsistencyError, attempts=3, factor=2, keys=("grid_u", "grid_v"))
def find_periodic(
    field: Field,
    band: Band,
    grid_u: int = 32,
    grid_v: int = 32,
    h: Optional[float] = None,
    v_bound: Optional[float] = None,
) -> ExtremalPair:
    """
    Sweep (u0, v0) over [alpha(0), beta(0)] x [-K, K], polish every candidate by
    damped Newton on the displacement P(x) - x, and keep the in-band orbits.
    """
    K = v_bound if v_bound is not None else getattr(field, "K", None)
    if K is None:
        raise PreconditionError("a velocity bound is required for an unmodified field")
    h = h or default_step(field)

    u_axis = np.linspace(band.lower(0.0), band.upper(0.0), grid_u + 1)
    v_axis = np.linspace(-K, K, grid_v + 1)
    U, V = np.meshgrid(u_axis, v_axis, indexing="ij")
    sweep = integrate_batch(field, 0.0, U.ravel(), V.ravel(), field.period, h)
    D_u = (sweep.u - U.ravel()).reshape(U.shape)
    D_v = (sweep.v - V.ravel()).reshape(U.shape)
    seed_u, seed_v, seed_cell, cells_total = _seeds(D_u, D_v, U, V)
    logger.debug("Displacement grid scanned", seeds=int(seed_u.size), grid_u=grid_u, grid_v=grid_v)

    ru, rv, ok = _newton_batch(field, seed_u, seed_v, h)
    orbits: list[PeriodicOrbit] = []
    for u0, v0 in _dedupe(ru[ok], rv[ok]):
        orbit = make_orbit(field, u0, v0, h)
        if np.all(band.contains(orbit.orbit.t, orbit.orbit.u, IN_BAND_SLACK)):
            orbits.append(orbit)
    if not orbits:
        raise InternalConsistencyError(
            f"no periodic orbit found in the band on a {grid_u}x{grid_v} grid although one must exist"
        )

    def lands_in_band(u0, v0):
        return any(abs(u0 - o.u0) <= DEDUP_TOL and abs(v0 - o.v0) <= DEDUP_TOL for o in orbits)

    cells_with_roots = len(
        {int(c) for u0, v0, c in zip(ru[ok], rv[ok], seed_cell[ok]) if c >= 0 and lands_in_band(u0, v0)}
    )
    degenerate = len(orbits) >= grid_u or cells_with_roots > CONTINUUM_CELL_SHARE * cells_total

    values = [o.u0 for o in orbits]
    i_min, i_max = int(np.argmin(values)), int(np.argmax(values))
    for o in orbits:
        if np.min(orbits[i_max].orbit.u - o.orbit.u) < -DOMINANCE_SLACK or np.min(
            o.orbit.u - orbits[i_min].orbit.u
        ) < -DOMINANCE_SLACK:
            raise InternalConsistencyError("found periodic orbits have no pointwise extremal pair")

    if degenerate:
        logger.warning("Periodic orbits form a continuum", count=len(orbits), cells=cells_with_roots)
    logger.info(
        "Periodic search complete",
        count=len(orbits),
        x_min=orbits[i_min].u0,
        x_max=orbits[i_max].u0,
        degenerate_suspect=degenerate,
    )
    return ExtremalPair(orbits, i_min, i_max, degenerate, cells_with_roots, cells_total)
