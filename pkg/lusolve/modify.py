"""Truncated field f~ = -u + gamma(t, u) + f(t, gamma(t, u), delta(v)) between two barriers."""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import structlog

from lusolve.curves import Band
from lusolve.errors import InternalConsistencyError, PreconditionError
from lusolve.fieldspec import Field, NagumoSpec, NagumoStatus, nagumo_check
from lusolve.flow import Trajectory

logger = structlog.get_logger()

MARGIN = 1e-3
EPS_RTOL = 1e-6
SUP_GRID = 64
SUP_INFLATE = 1.1
IN_BAND_SLACK = 1e-9


@dataclass(frozen=True, kw_only=True)
class ModifiedField(Field):
    """
    Field clamped onto the band in u and onto [-K, K] in v.

    Inside the band and below speed K it coincides with `base`; it is bounded by M
    on the band and b = f~ + u is bounded by b_bound everywhere.
    """

    base: Field
    band: Band
    K: float
    epsilon: float
    M: float = math.inf
    b_bound: float = math.inf
    phi: Optional[NagumoSpec] = None

    @classmethod
    def wrap(
        cls,
        base: Field,
        band: Band,
        K: float,
        epsilon: float,
        M: float = math.inf,
        b_bound: float = math.inf,
        phi: Optional[NagumoSpec] = None,
    ) -> "ModifiedField":
        lower, upper = band.lower, band.upper

        def rhs(t, u, v):
            g = np.minimum(np.maximum(u, lower(t)), upper(t))
            d = np.minimum(np.maximum(v, -K), K)
            return -u + g + base(t, g, d)

        f_u = f_v = None
        if base.has_partials:
            def f_u(t, u, v):
                lo, hi = lower(t), upper(t)
                g = np.minimum(np.maximum(u, lo), hi)
                d = np.minimum(np.maximum(v, -K), K)
                inside = (u >= lo) & (u <= hi)
                return -1.0 + np.where(inside, 1.0 + base.partials(t, g, d)[0], 0.0)

            def f_v(t, u, v):
                g = np.minimum(np.maximum(u, lower(t)), upper(t))
                d = np.minimum(np.maximum(v, -K), K)
                return np.where(np.abs(v) <= K, base.partials(t, g, d)[1], 0.0)

        return cls(
            rhs=rhs,
            period=base.period,
            f_u=f_u,
            f_v=f_v,
            conservative=base.conservative,
            autonomous=base.autonomous and _is_constant(band),
            field_id=f"{base.field_id}~mod",
            source=base.source,
            base=base,
            band=band,
            K=float(K),
            epsilon=float(epsilon),
            M=float(M),
            b_bound=float(b_bound),
            phi=phi,
        )

    def reversed(self) -> "ModifiedField":
        return ModifiedField.wrap(
            self.base.reversed(), self.band.reversed(), self.K, self.epsilon, self.M, self.b_bound, self.phi
        )

    def mirrored(self) -> "ModifiedField":
        return ModifiedField.wrap(
            self.base.mirrored(), self.band.reflected(), self.K, self.epsilon, self.M, self.b_bound, self.phi
        )

    def constants(self) -> dict:
        return {"K": self.K, "epsilon": self.epsilon, "M": self.M, "b_bound": self.b_bound}


def _is_constant(band: Band) -> bool:
    return all(np.ptp(c.sample(256)[1]) == 0 for c in (band.lower, band.upper))


def gamma(band: Band, t, u):
    """Vertical clamp of u onto [alpha(t), beta(t)]."""
    return np.minimum(np.maximum(u, band.lower(t)), band.upper(t))


def delta(K: float, v):
    return np.minimum(np.maximum(v, -K), K)


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def _admissible_K(phi: NagumoSpec, gap0: float, deriv_bound: float, K: float) -> bool:
    return K > deriv_bound * (1 + MARGIN) + 1e-9 and phi.integral(0.0, K) > gap0 * (1 + MARGIN)


def _smallest_K(phi: NagumoSpec, gap0: float, deriv_bound: float) -> float:
    hi = max(1.0, 2 * deriv_bound)
    while not _admissible_K(phi, gap0, deriv_bound, hi):
        hi *= 2
        if hi > 1e6:
            raise PreconditionError("no admissible speed bound K below 1e6")
    lo = 0.0
    while hi - lo > EPS_RTOL * hi:
        mid = 0.5 * (lo + hi)
        if _admissible_K(phi, gap0, deriv_bound, mid):
            hi = mid
        else:
            lo = mid
    return hi


def _round_up_dyadic(K: float) -> float:
    """Round K up to a multiple of 2^(floor(log2 K) - 3), at most 12.5% above K."""
    step = 2.0 ** (math.floor(math.log2(K)) - 3)
    return math.ceil(K / step - 1e-12) * step


def _largest_epsilon(phi: NagumoSpec, gap0: float, K: float) -> float:
    """Largest eps with the integral of v/phi over [eps, K] still above gap0."""
    lo, hi = 0.0, K
    while hi - lo > EPS_RTOL * K:
        mid = 0.5 * (lo + hi)
        if phi.integral(mid, K) > gap0:
            lo = mid
        else:
            hi = mid
    return lo


def _suprema(field: ModifiedField, band: Band) -> tuple[float, float]:
    T = field.period
    t = np.linspace(0.0, T, SUP_GRID)
    s = np.linspace(0.0, 1.0, SUP_GRID)
    w = np.linspace(-field.K, field.K, SUP_GRID)
    tt, ss, vv = np.meshgrid(t, s, w, indexing="ij")
    lo, hi = band.lower(tt), band.upper(tt)
    uu = lo + ss * (hi - lo)
    values = np.asarray(field(tt, uu, vv), dtype=float)
    M = float(np.max(np.abs(values)))
    b = float(np.max(np.abs(values + uu)))
    return SUP_INFLATE * M, SUP_INFLATE * b


def build_modified(field: Field, band: Band, phi: NagumoSpec) -> ModifiedField:
    """
    Pick K, epsilon and the suprema M, b_bound for the truncated field.

    K is the smallest speed (doubling then bisection) with K above every barrier
    slope and the Nagumo integral over [0, K] above beta(0) - alpha(0), both with
    relative margin 1e-3, rounded up to a dyadic grid one eighth of its octave.
    """
    verdict = nagumo_check(phi, band.width)
    if verdict.status is not NagumoStatus.SATISFIED:
        raise PreconditionError(f"Nagumo condition not satisfied for gap {band.width:g}: {verdict.status.value}")

    gap0 = band.gap0
    deriv_bound = max(band.lower.sup_abs_d1(), band.upper.sup_abs_d1())
    if gap0 <= 0:
        K = max(deriv_bound * (1 + MARGIN), MARGIN)
        logger.warning("Degenerate band at t=0, any K above the barrier slopes works", K=K)
        epsilon = K / 2
    else:
        K = _round_up_dyadic(_smallest_K(phi, gap0, deriv_bound))
        epsilon = _largest_epsilon(phi, gap0, K)

    provisional = ModifiedField.wrap(field, band, K, epsilon, phi=phi)
    M, b_bound = _suprema(provisional, band)
    modified = ModifiedField.wrap(field, band, K, epsilon, M, b_bound, phi)
    logger.info("Modified field built", field=field.field_id, **modified.constants())
    return modified


# ---------------------------------------------------------------------------
# Solutions shared with the base field
# ---------------------------------------------------------------------------


class SolutionKind(str, Enum):
    ORIGINAL = "original-equation solution"
    MODIFIED_ONLY = "modified-only"


def residual_tolerance(field: Field, traj: Trajectory) -> float:
    f = np.asarray(field(traj.t, traj.u, traj.v), dtype=float)
    return 1e-6 * (1 + float(np.max(np.abs(f))))


def same_solution_filter(mod: ModifiedField, traj: Trajectory) -> SolutionKind:
    """
    A trajectory of f~ that stays in the band and is slower than epsilon somewhere
    solves the base equation. Its base-field residual is checked, not assumed.
    """
    if len(traj) < 2:
        raise PreconditionError("trajectory has fewer than two samples")
    in_band = bool(np.all(mod.band.contains(traj.t, traj.u, IN_BAND_SLACK)))
    slow = bool(np.any(np.abs(traj.v) < mod.epsilon))
    if not (in_band and slow):
        return SolutionKind.MODIFIED_ONLY

    residual = traj.residual_against(mod.base)
    tol = residual_tolerance(mod.base, traj)
    if residual > tol:
        raise InternalConsistencyError(
            f"in-band slow trajectory fails the base equation: residual {residual:.3g} > {tol:.3g}"
        )
    return SolutionKind.ORIGINAL
