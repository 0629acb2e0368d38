import json
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable

import numpy as np
import structlog

from lusolve.artifacts import (
    MANIFOLD_HEADER,
    dumps,
    plot_band,
    write_json,
    write_rows_csv,
    write_trajectory_csv,
)
from lusolve.asymptotic import asymptotic_future, manifold_sweep
from lusolve.banddyn import (
    Degeneracy,
    Reception,
    classify_neighboring,
    conservative_locator,
    default_eps_list,
    detect_degeneracy,
    stability_verdict,
)
from lusolve.curves import Ordering, ordering_gap_check, verify_lower, verify_upper
from lusolve.dirichlet import DirichletSpec, solve_family, straight_seeds
from lusolve.errors import LusolveError, NoSolutionFound, PreconditionError
from lusolve.fieldspec import NagumoStatus, nagumo_check
from lusolve.models import Command, Report, Status
from lusolve.periodic import ExtremalPair, PeriodicOrbit, find_periodic, orbit_from_curve
from lusolve.problem import Problem

logger = structlog.get_logger()

# distinct orbits closer than this at t = 0 are one orbit
SAME_START_TOL = 1e-9


@dataclass
class Outcome:
    status: Status
    outputs: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Public entry points, called from main.py and utils/run_fixtures.py
# ---------------------------------------------------------------------------


def command_dir(problem: Problem, command: Command, out_root: Path) -> Path:
    return Path(out_root) / problem.name / command.value


def run_command(command: Command, problem: Problem, out_root: Path) -> Report:
    """Run one command, write report.json and timing.json, and return the report."""
    out_dir = command_dir(problem, command, out_root)
    log = logger.bind(command=command.value, problem=problem.name)
    log.info("Running command", out=str(out_dir))

    started = time.perf_counter()
    try:
        with structlog.contextvars.bound_contextvars(command=command.value, problem=problem.name):
            outcome = _HANDLERS[command](problem, out_dir, out_root)
        # plain JSON data, so fixture lookups see exactly what report.json holds
        report = Report(
            command=command,
            problem=problem.name,
            inputs_digest=problem.digest,
            status=outcome.status,
            outputs=json.loads(dumps(outcome.outputs)),
        )
    except LusolveError as exc:
        log.error("Command failed", error=str(exc))
        report = Report(
            command=command,
            problem=problem.name,
            inputs_digest=problem.digest,
            status=Status.ERROR,
            error=str(exc),
        )
    elapsed = time.perf_counter() - started

    write_json(out_dir / "report.json", report)
    write_json(out_dir / "timing.json", {"command": command.value, "wall_seconds": elapsed})
    log.info("Command finished", status=report.status.value, wall_seconds=round(elapsed, 3))
    return report


def resolve_path(data: Any, path: str) -> Any:
    """Follow a dotted path through dicts and lists ("orbits.0.u0")."""
    node = data
    for part in path.split("."):
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError) as exc:
                raise PreconditionError(f"path {path!r}: no list entry {part!r}") from exc
        elif isinstance(node, dict):
            if part not in node:
                raise PreconditionError(f"path {path!r}: no key {part!r}")
            node = node[part]
        else:
            raise PreconditionError(f"path {path!r}: cannot descend into {type(node).__name__} at {part!r}")
    return node


def fixture_matches(actual: Any, expected: Any, tol: float) -> bool:
    if isinstance(expected, bool) or isinstance(actual, bool):
        return actual is expected
    if isinstance(expected, (int, float)) and isinstance(actual, (int, float)):
        return abs(float(actual) - float(expected)) <= tol
    return actual == expected


# ---------------------------------------------------------------------------
# Shared, cached per loaded problem
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _extremal_pair(problem: Problem) -> ExtremalPair:
    s = problem.solver
    return find_periodic(
        problem.working_field,
        problem.band,
        grid_u=s.grid_u,
        grid_v=s.grid_v,
        h=problem.step,
        v_bound=problem.velocity_bound,
    )


@lru_cache(maxsize=8)
def _barrier_orbits(problem: Problem) -> tuple[PeriodicOrbit, PeriodicOrbit]:
    """alpha and beta polished into periodic orbits, for the two-orbit commands."""
    field_ = problem.working_field
    return (
        orbit_from_curve(field_, problem.band.lower, problem.step),
        orbit_from_curve(field_, problem.band.upper, problem.step),
    )


def _orbit_summary(orbit: PeriodicOrbit) -> dict:
    return {
        "u0": orbit.u0,
        "v0": orbit.v0,
        "sup_u": float(np.max(orbit.orbit.u)),
        "inf_u": float(np.min(orbit.orbit.u)),
        "max_abs_multiplier": orbit.max_multiplier,
    }


def _sweep_options(problem: Problem) -> dict:
    s = problem.solver
    return {
        "n_scan": s.n_scan,
        "segments_per_period": s.segments_per_period,
        "h": problem.step,
        "v_bound": problem.velocity_bound,
    }


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_verify(problem: Problem, out_dir: Path, out_root: Path) -> Outcome:
    field_, band = problem.field, problem.band
    lower = verify_lower(band.lower, field_)
    upper = verify_upper(band.upper, field_)
    ordering = ordering_gap_check(band, field_)
    nagumo = nagumo_check(problem.phi, band.width) if problem.phi is not None else None

    passed = lower.passed and upper.passed and ordering is not Ordering.INCONSISTENT
    if nagumo is not None:
        passed = passed and nagumo.status is NagumoStatus.SATISFIED
    outputs = {
        "alpha": lower.as_dict(),
        "beta": upper.as_dict(),
        "ordering": ordering.value,
        "nagumo": nagumo.as_dict() if nagumo else None,
        "uniqueness": problem.spec.uniqueness,
        "field": {
            "source": field_.source,
            "period": field_.period,
            "conservative": field_.conservative,
            "autonomous": field_.autonomous,
        },
        "passed": passed,
    }
    plot_band(out_dir / "band.svg", band, title=f"{problem.name}: barriers")
    return Outcome(Status.PASS if passed else Status.NEGATIVE, outputs)


def _cmd_modify(problem: Problem, out_dir: Path, out_root: Path) -> Outcome:
    if problem.phi is None:
        raise PreconditionError("the modify command needs a [nagumo] block")
    mod = problem.working_field
    lower = verify_lower(problem.band.lower, mod)
    upper = verify_upper(problem.band.upper, mod)
    preserved = lower.passed and upper.passed
    write_json(out_dir / "constants.json", mod.constants())
    outputs = {
        **mod.constants(),
        "alpha_preserved": lower.as_dict(),
        "beta_preserved": upper.as_dict(),
        "passed": preserved,
    }
    return Outcome(Status.PASS if preserved else Status.NEGATIVE, outputs)


def _cmd_dirichlet(problem: Problem, out_dir: Path, out_root: Path) -> Outcome:
    decl = problem.spec.dirichlet
    if decl is None:
        raise PreconditionError("the dirichlet command needs a [dirichlet] block")
    spec = DirichletSpec(
        problem.scalar(decl.a),
        problem.scalar(decl.b),
        problem.scalar(decl.y_a),
        problem.scalar(decl.y_b),
        problem.band,
    )
    field_ = problem.working_field
    vb = problem.velocity_bound
    s = problem.solver
    try:
        solutions = solve_family(
            field_,
            spec,
            seeds=straight_seeds(field_, spec, problem.step),
            v_lo=-vb if vb is not None else None,
            v_hi=vb,
            n_scan=s.n_scan,
            segments_per_period=s.segments_per_period,
            h=problem.step,
        )
    except NoSolutionFound as exc:
        logger.warning("No Dirichlet solution", error=str(exc))
        return Outcome(Status.NEGATIVE, {"count": 0, "error": str(exc)})

    files = [f"solution_{k:02d}.csv" for k in range(len(solutions))]
    for name, y in zip(files, solutions.solutions):
        write_trajectory_csv(out_dir / name, y)
    write_json(out_dir / "index.json", {**solutions.as_dict(), "files": files})
    plot_band(
        out_dir / "dirichlet.svg",
        problem.band,
        trajectories=[(y.t, y.u) for y in solutions.solutions],
        title=f"{problem.name}: Dirichlet solutions",
    )
    return Outcome(Status.PASS, solutions.as_dict())


def _cmd_periodic(problem: Problem, out_dir: Path, out_root: Path) -> Outcome:
    pair = _extremal_pair(problem)
    write_trajectory_csv(out_dir / "x_min.csv", pair.x_min.orbit)
    write_trajectory_csv(out_dir / "x_max.csv", pair.x_max.orbit)
    plot_band(
        out_dir / "periodic.svg",
        problem.band,
        orbits=[(o.orbit.t, o.orbit.u) for o in pair.orbits],
        title=f"{problem.name}: periodic orbits",
    )
    outputs = pair.as_dict()
    outputs.update(
        count=len(pair.orbits),
        x_min=_orbit_summary(pair.x_min),
        x_max=_orbit_summary(pair.x_max),
    )
    return Outcome(Status.PASS, outputs)


def _default_positions(problem: Problem, target: PeriodicOrbit, towards: str) -> list[float]:
    """sweep_count starts on the half-open segment from the barrier at t = 0 towards the orbit."""
    edge = problem.band.lower(0.0) if towards == "min" else problem.band.upper(0.0)
    return [float(u) for u in np.linspace(edge, target.u0, problem.solver.sweep_count, endpoint=False)]


def _cmd_asymptotic(problem: Problem, out_dir: Path, out_root: Path) -> Outcome:
    decl = problem.spec.asymptotic
    pair = _extremal_pair(problem)
    target = pair.x_min if decl.target == "min" else pair.x_max
    if decl.u0:
        positions = [problem.scalar(u) for u in decl.u0]
    else:
        positions = _default_positions(problem, target, decl.target)

    s = problem.solver
    sample = manifold_sweep(
        problem.working_field,
        problem.band,
        target,
        positions,
        N=s.horizon,
        tol_conv=s.tol_conv,
        directions=tuple(decl.directions),
        **_sweep_options(problem),
    )

    for k, run in enumerate(sample.runs):
        write_trajectory_csv(out_dir / f"run_{k:02d}_{run.direction}.csv", run.limit)
        write_json(out_dir / f"profile_{k:02d}_{run.direction}.json", {"d": run.convergence_profile})
    write_rows_csv(out_dir / "manifold.csv", MANIFOLD_HEADER, sample.rows())
    plot_band(
        out_dir / "asymptotic.svg",
        problem.band,
        trajectories=[(r.limit.t, r.limit.u) for r in sample.runs],
        orbits=[(target.orbit.t, target.orbit.u)],
        title=f"{problem.name}: solutions asymptotic to x_{decl.target}",
    )

    outputs = sample.as_dict()
    outputs.update(
        target=_orbit_summary(target),
        runs=[r.as_dict() for r in sample.runs],
        converged=all(r.converged for r in sample.runs),
    )
    status = Status.PASS if not sample.failures and outputs["converged"] else Status.NEGATIVE
    return Outcome(status, outputs)


def _cmd_classify(problem: Problem, out_dir: Path, out_root: Path) -> Outcome:
    alpha, beta = _barrier_orbits(problem)
    s = problem.solver
    classification = classify_neighboring(
        problem.working_field,
        alpha,
        beta,
        eps_list=default_eps_list(alpha, beta, s.eps_count),
        grid=s.return_grid,
        v_bound=problem.velocity_bound,
        n_scan=s.n_scan,
        h=problem.step,
    )
    outputs = classification.as_dict()
    outputs.update(alpha=_orbit_summary(alpha), beta=_orbit_summary(beta))
    decided = classification.verdict in (Reception.BETA, Reception.ALPHA)
    status = Status.PASS if decided else Status.NEGATIVE
    return Outcome(status, outputs)


def _cmd_degeneracy(problem: Problem, out_dir: Path, out_root: Path) -> Outcome:
    alpha, beta = _barrier_orbits(problem)
    field_ = problem.working_field
    s = problem.solver
    report = detect_degeneracy(
        field_,
        alpha,
        beta,
        grid_s=s.grid_s,
        v_bound=problem.velocity_bound,
        n_scan=s.degeneracy_scan,
        h=problem.step,
    )
    outputs = report.as_dict()
    if report.psi_samples:
        write_rows_csv(out_dir / "psi.csv", ("s", "u0"), zip(report.s_grid.tolist(), outputs["psi_u0"]))

    if report.verdict is Degeneracy.DEGENERATE and field_.conservative:
        trace, verdict = conservative_locator(
            field_,
            report,
            start=s.locator_start,
            epsilon=s.locator_epsilon,
            max_periods=s.locator_max_periods,
        )
        write_rows_csv(out_dir / "locator.csv", ("t", "s"), zip(trace.t.tolist(), trace.s_of_t.tolist()))
        outputs["locator"] = dict(trace.as_dict(), verdict=verdict.as_dict())

    status = Status.NEGATIVE if report.verdict is Degeneracy.INCONCLUSIVE else Status.PASS
    return Outcome(status, outputs)


def _witness_runs(problem: Problem, orbit: PeriodicOrbit) -> list:
    """Asymptotic runs from the barriers at t = 0 onto `orbit`, where a barrier is strictly off it."""
    runs = []
    s = problem.solver
    for edge in (problem.band.lower(0.0), problem.band.upper(0.0)):
        if abs(edge - orbit.u0) <= SAME_START_TOL:
            continue
        try:
            run = asymptotic_future(
                problem.working_field,
                problem.band,
                orbit,
                float(edge),
                N=s.horizon,
                tol_conv=s.tol_conv,
                **_sweep_options(problem),
            )
        except LusolveError as exc:
            logger.warning("Witness run failed", u0=float(edge), orbit=orbit.u0, error=str(exc))
            continue
        runs.append(run)
        if run.certifies_instability:
            break
    return runs


def _cmd_stability(problem: Problem, out_dir: Path, out_root: Path) -> Outcome:
    pair = _extremal_pair(problem)
    subjects = [pair.x_min]
    if abs(pair.x_max.u0 - pair.x_min.u0) > SAME_START_TOL:
        subjects.append(pair.x_max)

    verdicts = []
    for orbit in subjects:
        witnesses = _witness_runs(problem, orbit)
        verdict = stability_verdict(
            problem.working_field,
            orbit,
            witnesses,
            perturbation=problem.solver.stability_perturbation,
            h=problem.step,
        )
        verdicts.append(dict(verdict.as_dict(), runs=[w.as_dict() for w in witnesses]))
    return Outcome(Status.PASS, {"orbits": verdicts})


def _cmd_report(problem: Problem, out_dir: Path, out_root: Path) -> Outcome:
    """Run every command the fixtures mention and compare the values they name."""
    fixtures = problem.spec.fixtures
    if not fixtures:
        raise PreconditionError(f"problem {problem.name!r} declares no fixtures")

    reports: dict[Command, Report] = {}
    results = []
    for fixture in fixtures:
        if fixture.command not in reports:
            reports[fixture.command] = run_command(fixture.command, problem, out_root)
        report = reports[fixture.command]

        entry = {
            "command": fixture.command.value,
            "path": fixture.path,
            "expected": fixture.expected,
            "tol": fixture.tol,
            "actual": None,
            "passed": False,
        }
        if report.status is Status.ERROR:
            entry["error"] = report.error
        else:
            try:
                entry["actual"] = resolve_path({"status": report.status.value, **report.outputs}, fixture.path)
                entry["passed"] = fixture_matches(entry["actual"], fixture.expected, fixture.tol)
            except PreconditionError as exc:
                entry["error"] = str(exc)
        if not entry["passed"]:
            logger.warning("Fixture failed", command=entry["command"], path=fixture.path, actual=entry["actual"])
        results.append(entry)

    passed = sum(1 for r in results if r["passed"])
    outputs = {"fixtures": results, "passed": passed, "total": len(results)}
    return Outcome(Status.PASS if passed == len(results) else Status.NEGATIVE, outputs)


_HANDLERS: dict[Command, Callable[[Problem, Path, Path], Outcome]] = {
    Command.VERIFY: _cmd_verify,
    Command.MODIFY: _cmd_modify,
    Command.DIRICHLET: _cmd_dirichlet,
    Command.PERIODIC: _cmd_periodic,
    Command.ASYMPTOTIC: _cmd_asymptotic,
    Command.CLASSIFY: _cmd_classify,
    Command.DEGENERACY: _cmd_degeneracy,
    Command.STABILITY: _cmd_stability,
    Command.REPORT: _cmd_report,
}
