"""Problem files: TOML text -> validated ProblemFile -> ready-to-use field, band and Nagumo function."""

import hashlib
import json
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Optional, Sequence

import structlog
from pydantic import ValidationError

from lusolve.curves import Band, Curve
from lusolve.errors import LusolveError, ProblemFileError
from lusolve.fieldspec import Field, NagumoSpec
from lusolve.models import CurveDecl, ProblemFile, Scalar
from lusolve.modify import build_modified
from lusolve.parser import parse_expr

logger = structlog.get_logger()

_SECTION = re.compile(r"^\s*\[\[?\s*([^\]]+?)\s*\]\]?\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")
_TOML_LINE = re.compile(r"at line (\d+)")


@dataclass(frozen=True, eq=False)
class Problem:
    spec: ProblemFile
    path: Path
    digest: str
    field: Field
    band: Band
    phi: Optional[NagumoSpec] = None

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def solver(self):
        return self.spec.solver

    @property
    def step(self) -> float:
        return self.field.period / self.solver.steps_per_period

    @cached_property
    def working_field(self) -> Field:
        """The modified field when a Nagumo function is declared, else the field itself."""
        if self.phi is None:
            return self.field
        return build_modified(self.field, self.band, self.phi)

    @property
    def velocity_bound(self) -> Optional[float]:
        # a modified field carries its own bound K
        return None if self.phi is not None else self.solver.velocity_bound

    def scalar(self, value: Scalar) -> float:
        return evaluate_scalar(value, self.spec.params)


def evaluate_scalar(value: Scalar, params: Optional[Mapping[str, float]] = None) -> float:
    if isinstance(value, str):
        return float(parse_expr(value, allowed_vars=(), params=params).evaluate(0.0, 0.0, 0.0))
    return float(value)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def load_problem(path: Path, overrides: Sequence[str] = ()) -> Problem:
    """Parse, validate and build every object a problem file declares."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ProblemFileError(f"cannot read problem file: {exc.strerror}", str(path)) from exc
    return parse_problem(text, str(path), overrides)


def parse_problem(text: str, origin: str = "<problem>", overrides: Sequence[str] = ()) -> Problem:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = _TOML_LINE.search(str(exc))
        raise ProblemFileError(str(exc), origin, int(match.group(1)) if match else None) from exc

    data = apply_overrides(data, overrides)
    try:
        spec = ProblemFile.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = first["loc"]
        where = ".".join(str(part) for part in loc)
        raise ProblemFileError(f"{where}: {first['msg']}", origin, _line_of(text, loc)) from exc

    digest = hashlib.sha256((text + json.dumps(sorted(overrides))).encode("utf-8")).hexdigest()
    field, band, phi = _build(spec, text, origin)
    if not spec.uniqueness:
        logger.warning("Initial value problems declared non-unique; extremal selection assumes uniqueness")
    logger.info("Problem loaded", name=spec.name, field=field.source, period=field.period)
    return Problem(spec, Path(origin), digest, field, band, phi)


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Apply `dotted.key=value` strings; values are read as TOML, falling back to plain strings."""
    data = json.loads(json.dumps(data, default=str))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ProblemFileError(f"override {item!r} is not of the form key=value", "--set")
        try:
            value = tomllib.loads(f"v = {raw.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw.strip()
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ProblemFileError(f"override {key!r} does not name a table entry", "--set")
        node[parts[-1]] = value
    return data


def _build(spec: ProblemFile, text: str, origin: str):
    params = spec.params

    def located(loc: tuple, build):
        try:
            return build()
        except LusolveError as exc:
            raise ProblemFileError(f"{'.'.join(loc)}: {exc}", origin, _line_of(text, loc)) from exc

    period = located(("period",), lambda: evaluate_scalar(spec.period, params))
    if not period > 0:
        raise ProblemFileError(f"period must be positive, got {period}", origin, _line_of(text, ("period",)))
    partials = spec.partials.model_dump() if spec.partials else None
    field = located(
        ("f",),
        lambda: Field.from_expression(
            spec.f, period, params, partials=partials, field_id=spec.name,
            conservative=spec.conservative, autonomous=spec.autonomous,
        ),
    )
    lower = located(("alpha",), lambda: _curve(spec.alpha, period, params, "alpha"))
    upper = located(("beta",), lambda: _curve(spec.beta, period, params, "beta"))
    band = located(("beta",), lambda: Band(lower, upper))
    phi = located(("nagumo", "phi"), lambda: NagumoSpec.from_expression(spec.nagumo.phi, params)) if spec.nagumo else None
    if spec.dirichlet is not None:
        for key in ("a", "b", "y_a", "y_b"):
            located(("dirichlet", key), lambda key=key: evaluate_scalar(getattr(spec.dirichlet, key), params))
    for value in spec.asymptotic.u0 or []:
        located(("asymptotic", "u0"), lambda value=value: evaluate_scalar(value, params))
    return field, band, phi


def _curve(decl: CurveDecl, period: float, params, name: str) -> Curve:
    if decl.expr is not None:
        return Curve.from_expression(decl.expr, period, params, name=name, d1=decl.d1, d2=decl.d2)
    pieces = [(evaluate_scalar(p.start, params), p.expr, p.d1, p.d2) for p in decl.pieces]
    return Curve.piecewise(pieces, period, params, name=name)


def _line_of(text: str, loc: tuple) -> Optional[int]:
    """Best-effort line of a validation location, dropping trailing parts (union tags) until one matches."""
    for end in range(len(loc), 0, -1):
        line = _line_in_scope(text, loc[:end])
        if line is not None:
            return line
    return None


def _line_in_scope(text: str, loc: tuple) -> Optional[int]:
    """The key inside its table, else the table header."""
    keys = [str(k) for k in loc if isinstance(k, str)]
    if not keys:
        return None
    scope, key = ".".join(keys[:-1]), keys[-1]
    current, header, fallback = "", None, None
    for number, line in enumerate(text.splitlines(), start=1):
        section = _SECTION.match(line)
        if section:
            current = section.group(1)
            if current == ".".join(keys):
                return number
            if current == scope and header is None:
                header = number
            continue
        match = _KEY.match(line)
        if match and match.group(1) == key:
            if current == scope:
                return number
            fallback = fallback or number
    return header or fallback
