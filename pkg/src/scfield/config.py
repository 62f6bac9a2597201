"""Scenario files: TOML documents validated before any computation.

Unknown keys are rejected. Sections: top-level ``mode`` and ``seed``;
``[body]``, ``[ensemble]``, ``[density]``, ``[physics]``, ``[numerics]``,
``[output]``. See the README for an annotated example.
"""

from __future__ import annotations

import math
import sys
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

Mode = Literal["polarizability", "acoustic-discrete", "acoustic-continuum", "em-discrete", "em-continuum", "compare"]
Vec3 = tuple[float, float, float]


class ConfigError(ValueError):
    """Scenario file cannot be read or fails validation."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _unit_or_fail(v: Vec3, name: str) -> Vec3:
    n = math.sqrt(sum(x * x for x in v))
    if n == 0.0:
        raise ValueError(f"{name} must be nonzero")
    return tuple(x / n for x in v)


class BodySection(_Section):
    shape: Literal["sphere", "ellipsoid", "box", "mesh"] = "sphere"
    radius: float = Field(1.0, gt=0)
    semiaxes: Optional[Vec3] = None
    sides: Optional[Vec3] = None
    refinement: int = Field(2, ge=0, le=5)
    divisions: int = Field(4, ge=1, le=64)
    mesh: Optional[str] = None
    scale: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _shape_params(self):
        if self.shape == "ellipsoid" and (self.semiaxes is None or min(self.semiaxes) <= 0):
            raise ValueError("ellipsoid needs semiaxes > 0")
        if self.shape == "box" and self.sides is not None and min(self.sides) <= 0:
            raise ValueError("box sides must be > 0")
        if self.shape == "mesh" and not self.mesh:
            raise ValueError("shape 'mesh' needs a mesh path")
        return self


class RegionSection(_Section):
    lower: Vec3 = (-5.0, -5.0, -5.0)
    upper: Vec3 = (5.0, 5.0, 5.0)

    @model_validator(mode="after")
    def _ordered(self):
        if any(h <= l for l, h in zip(self.lower, self.upper)):
            raise ValueError("region upper must exceed lower on every axis")
        return self

    @property
    def volume(self) -> float:
        return math.prod(h - l for l, h in zip(self.lower, self.upper))


class EnsembleSection(_Section):
    count: int = Field(0, ge=0)
    region: RegionSection = RegionSection()
    min_separation: float = Field(1.0, gt=0)
    placement: Literal["dart", "stratified"] = "dart"
    file: Optional[str] = None
    counts: list[int] = [250, 500, 1000, 2000]
    seeds: int = Field(5, ge=1)

    @field_validator("counts")
    @classmethod
    def _positive_counts(cls, v):
        if not v or min(v) < 1:
            raise ValueError("counts must be a nonempty list of integers >= 1")
        return v

    @model_validator(mode="after")
    def _feasible(self):
        if self.placement == "dart" and self.count * self.min_separation**3 >= 0.3 * self.region.volume:
            raise ValueError(
                f"infeasible packing: count*min_separation^3 = {self.count * self.min_separation**3:.4g} "
                f">= 0.3*volume = {0.3 * self.region.volume:.4g}"
            )
        return self


class DensitySection(_Section):
    kind: Literal["binned", "uniform", "gaussian"] = "binned"
    amplitude: float = Field(0.0, ge=0)
    width: float = Field(1.0, gt=0)
    center: Vec3 = (0.0, 0.0, 0.0)


class PhysicsSection(_Section):
    k: float = Field(1.0, gt=0)
    direction: Vec3 = (0.0, 0.0, 1.0)
    polarization: Optional[Vec3] = None
    boundary: Literal["dirichlet", "neumann", "impedance"] = "dirichlet"
    h: float = Field(0.0, ge=0)
    gamma: float = Field(0.0, ge=-1, lt=1)
    eps: float = Field(1.0, gt=0)
    mu: float = Field(1.0, gt=0)
    eps0: float = Field(1.0, gt=0)
    mu0: float = Field(1.0, gt=0)
    sigma: float = Field(0.0, ge=0)
    omega: Optional[float] = Field(None, gt=0)
    use_conductivity: bool = False

    @field_validator("direction")
    @classmethod
    def _direction(cls, v):
        return _unit_or_fail(v, "direction")

    @model_validator(mode="after")
    def _consistent(self):
        if self.polarization is not None:
            p = _unit_or_fail(self.polarization, "polarization")
            if abs(sum(a * b for a, b in zip(p, self.direction))) > 1e-10:
                raise ValueError("polarization must be orthogonal to direction")
        if self.use_conductivity and self.omega is None:
            raise ValueError("use_conductivity needs omega")
        return self


class NumericsSection(_Section):
    order: int = Field(4, ge=1, le=12)
    grid: tuple[int, int, int] = (16, 16, 16)
    tol: float = Field(1e-10, gt=0, lt=1)
    continuum_tol: float = Field(1e-8, gt=0, lt=1)
    dense_limit: int = Field(1000, ge=0)
    a_safety: float = Field(10.0, gt=0)
    em_safety: float = Field(2.0 * math.pi, gt=0)
    small_ratio: float = Field(0.1, gt=0)
    allow_near_zone: bool = False
    separation_fraction: float = Field(0.3, ge=0, lt=1)

    @field_validator("grid")
    @classmethod
    def _grid(cls, v):
        if min(v) < 1:
            raise ValueError("grid dimensions must be >= 1")
        return v


class LineOut(_Section):
    start: Vec3
    end: Vec3
    samples: int = Field(200, ge=2)
    name: str = "line"


class PlaneOut(_Section):
    axis: Literal[0, 1, 2] = 2
    value: float = 0.0
    shape: tuple[int, int] = (50, 50)
    lower: Optional[tuple[float, float]] = None
    upper: Optional[tuple[float, float]] = None
    name: str = "plane"


class OutputSection(_Section):
    directory: str = "out"
    formats: list[Literal["json", "csv"]] = ["json", "csv"]
    probes: list[Vec3] = []
    probe_faces: bool = False
    probe_offset: Optional[float] = Field(None, gt=0)
    lines: list[LineOut] = []
    planes: list[PlaneOut] = []


class Scenario(_Section):
    mode: Mode
    seed: int = Field(0, ge=0)
    body: BodySection = BodySection()
    ensemble: EnsembleSection = EnsembleSection()
    density: DensitySection = DensitySection()
    physics: PhysicsSection = PhysicsSection()
    numerics: NumericsSection = NumericsSection()
    output: OutputSection = OutputSection()

    @model_validator(mode="after")
    def _mode_requirements(self):
        region = self.ensemble.region
        lo, hi = region.lower, region.upper

        def inside(p):
            return all(l - 1e-12 <= x <= h + 1e-12 for x, l, h in zip(p, lo, hi))

        for line in self.output.lines:
            if not (inside(line.start) and inside(line.end)):
                raise ValueError(f"output line {line.name!r} leaves the region")
        for plane in self.output.planes:
            if not lo[plane.axis] <= plane.value <= hi[plane.axis]:
                raise ValueError(f"output plane {plane.name!r} lies outside the region")
        if self.mode == "compare":
            if self.physics.boundary != "dirichlet":
                raise ValueError("compare runs soft (dirichlet) media only")
            if self.density.kind == "binned" or self.density.amplitude <= 0:
                raise ValueError("compare needs a uniform or gaussian density with amplitude > 0")
        if self.mode in ("em-discrete", "em-continuum") and self.ensemble.file is not None:
            raise ValueError("EM modes build body tensors from [body]; ensemble files are acoustic only")
        return self

    def with_seed(self, seed: Optional[int]) -> "Scenario":
        return self if seed is None else self.model_copy(update={"seed": seed})


def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "\n".join(lines)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: invalid scenario\n{_format_error(exc)}") from exc


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    scenario = parse_scenario(text, str(path))
    return _resolve_paths(scenario, path.parent)


def _resolve_paths(scenario: Scenario, base: Path) -> Scenario:
    body, ens = scenario.body, scenario.ensemble
    updates = {}
    if body.mesh and not Path(body.mesh).is_absolute():
        updates["body"] = body.model_copy(update={"mesh": str(base / body.mesh)})
    if ens.file and not Path(ens.file).is_absolute():
        updates["ensemble"] = ens.model_copy(update={"file": str(base / ens.file)})
    return scenario.model_copy(update=updates) if updates else scenario
