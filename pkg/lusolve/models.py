from enum import Enum
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from lusolve.utils.version import get_version

# Numbers in problem files may be literals or constant expressions ("2*pi").
Scalar = Union[float, str]


class Command(str, Enum):
    VERIFY = "verify"
    MODIFY = "modify"
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"
    ASYMPTOTIC = "asymptotic"
    CLASSIFY = "classify"
    DEGENERACY = "degeneracy"
    STABILITY = "stability"
    REPORT = "report"


class Status(str, Enum):
    PASS = "pass"
    NEGATIVE = "negative"
    ERROR = "error"


EXIT_CODES: dict[Status, int] = {
    Status.PASS: 0,
    Status.ERROR: 1,
    Status.NEGATIVE: 2,
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SolverConfig(_Strict):
    """Numerical knobs; every value can be overridden with --set solver.<key>=<value>."""

    steps_per_period: int = Field(2048, ge=16)
    n_scan: int = Field(512, ge=8)
    grid_u: int = Field(32, ge=2)
    grid_v: int = Field(32, ge=2)
    segments_per_period: int = Field(4, ge=1)
    horizon: int = Field(8, ge=1)
    tol_conv: float = Field(1e-4, gt=0)
    return_grid: int = Field(16, ge=2)
    eps_count: int = Field(4, ge=1)
    grid_s: int = Field(129, ge=3)
    degeneracy_scan: int = Field(128, ge=8)
    sweep_count: int = Field(16, ge=1)
    locator_epsilon: float = 1e-3
    locator_start: Literal["alpha", "beta"] = "alpha"
    locator_max_periods: int = Field(2000, ge=1)
    velocity_bound: Optional[float] = Field(None, gt=0)
    stability_perturbation: float = Field(1e-4, gt=0)


class PieceDecl(_Strict):
    start: Scalar
    expr: str
    d1: Optional[str] = None
    d2: Optional[str] = None


class CurveDecl(_Strict):
    """Either a single expression in t or a list of pieces starting at their `start`."""

    expr: Optional[str] = None
    d1: Optional[str] = None
    d2: Optional[str] = None
    pieces: Optional[list[PieceDecl]] = None

    @model_validator(mode="after")
    def _one_form(self) -> "CurveDecl":
        if (self.expr is None) == (self.pieces is None):
            raise ValueError("declare exactly one of 'expr' or 'pieces'")
        if self.pieces is not None and not self.pieces:
            raise ValueError("'pieces' must not be empty")
        return self


class PartialsDecl(_Strict):
    u: str
    v: str


class NagumoDecl(_Strict):
    phi: str


class DirichletDecl(_Strict):
    a: Scalar = 0.0
    b: Scalar
    y_a: Scalar
    y_b: Scalar


class AsymptoticDecl(_Strict):
    target: Literal["min", "max"] = "min"
    u0: Optional[list[Scalar]] = None
    directions: list[Literal["future", "past"]] = ["future"]

    @field_validator("u0", mode="before")
    @classmethod
    def _listify(cls, v):
        if v is None or isinstance(v, list):
            return v
        return [v]


class FixtureSpec(_Strict):
    """Expected value at a dotted path into one command's report outputs."""

    command: Command
    path: str
    expected: Union[bool, float, str]
    tol: float = Field(0.0, ge=0)

    @field_validator("command")
    @classmethod
    def _not_report(cls, v: Command) -> Command:
        if v is Command.REPORT:
            raise ValueError("fixtures cannot run the report command")
        return v


class ProblemFile(_Strict):
    name: str = Field(pattern=r"^[A-Za-z0-9_.-]+$")
    f: str
    period: Scalar
    params: dict[str, float] = {}
    partials: Optional[PartialsDecl] = None
    conservative: Optional[bool] = None
    autonomous: Optional[bool] = None
    uniqueness: bool = True
    nagumo: Optional[NagumoDecl] = None
    alpha: CurveDecl
    beta: CurveDecl
    dirichlet: Optional[DirichletDecl] = None
    asymptotic: AsymptoticDecl = AsymptoticDecl()
    solver: SolverConfig = SolverConfig()
    fixtures: list[FixtureSpec] = []


class Report(BaseModel):
    """Contents of report.json; wall time goes to timing.json so this stays reproducible."""

    command: Command
    problem: str
    inputs_digest: str
    status: Status
    outputs: dict = {}
    error: Optional[str] = None
    version: str = Field(default_factory=get_version)
    note: str = "deterministic: fixed meshes, grids and sampling seeds"
