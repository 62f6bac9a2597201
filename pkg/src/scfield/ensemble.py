"""Random configurations of small bodies and their continuum densities."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal, Optional, Sequence, Union

import numpy as np

from .electrostatics import PolarizabilityResult

logger = logging.getLogger(__name__)

BoundaryKind = Literal["dirichlet", "neumann", "impedance"]
BOUNDARY_KINDS = ("dirichlet", "neumann", "impedance")

DEFAULT_SMALL_RATIO = 0.1
DEFAULT_EM_SAFETY = 2.0 * math.pi
DEFAULT_A_SAFETY = 10.0
DEFAULT_VOLUME_FRACTION = 0.1


class EnsembleError(ValueError):
    pass


def impedance_weight(h: np.ndarray, area: np.ndarray, capacitance: np.ndarray) -> np.ndarray:
    """Per-body strength ``h|S| / (1 + h|S| / C)``; tends to ``C`` as h grows."""
    h = np.asarray(h, dtype=float)
    area = np.asarray(area, dtype=float)
    cap = np.asarray(capacitance, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = h * area / (1.0 + h * area / cap)
    return np.where(np.isinf(h), cap, w)


@dataclass(frozen=True)
class Box:
    """Axis-aligned region ``[lower, upper]``."""

    lower: tuple[float, float, float]
    upper: tuple[float, float, float]

    def __post_init__(self) -> None:
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError(f"invalid box {self.lower} .. {self.upper}")
        object.__setattr__(self, "lower", tuple(float(x) for x in lo))
        object.__setattr__(self, "upper", tuple(float(x) for x in hi))

    @classmethod
    def cube(cls, side: float, center: Sequence[float] = (0.0, 0.0, 0.0)) -> "Box":
        c = np.asarray(center, float)
        return cls(tuple(c - side / 2), tuple(c + side / 2))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def size(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.lo - tol) & (p <= self.hi + tol), axis=1)


@dataclass(frozen=True)
class ParticleEnsemble:
    """Positions and per-body properties of ``J`` small bodies.

    ``beta`` is the magnetic polarizability used by hard bodies; ``alpha``
    and ``beta_tilde`` (electric tensor and the magnetic combination of the
    EM model) are optional and only read by the EM solvers.
    """

    positions: np.ndarray  # (J, 3)
    capacitance: np.ndarray  # (J,)
    volume: np.ndarray  # (J,)
    area: np.ndarray  # (J,)
    beta: np.ndarray  # (J, 3, 3)
    h: np.ndarray  # (J,)
    radius: np.ndarray  # (J,)
    region: Box
    boundary_kind: BoundaryKind = "dirichlet"
    wavenumber: float = 1.0
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    alpha: Optional[np.ndarray] = None  # (J, 3, 3)
    beta_tilde: Optional[np.ndarray] = None  # (J, 3, 3)

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(pos)
        object.__setattr__(self, "positions", pos)
        for name in ("capacitance", "volume", "area", "h", "radius"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            object.__setattr__(self, name, arr)
        for name in ("beta", "alpha", "beta_tilde"):
            val = getattr(self, name)
            if val is None:
                continue
            val = np.asarray(val)
            dtype = complex if np.iscomplexobj(val) else float
            arr = np.broadcast_to(val.astype(dtype), (n, 3, 3)).copy()
            object.__setattr__(self, name, arr)
        if self.boundary_kind not in BOUNDARY_KINDS:
            raise EnsembleError(f"unknown boundary kind {self.boundary_kind!r}")
        nu = np.asarray(self.direction, dtype=float)
        norm = np.linalg.norm(nu)
        if norm == 0:
            raise EnsembleError("incident direction must be nonzero")
        object.__setattr__(self, "direction", tuple(float(x) for x in nu / norm))
        if self.wavenumber <= 0:
            raise EnsembleError("wavenumber must be positive")
        if n and not np.all(self.region.contains(pos, tol=1e-12)):
            raise EnsembleError("ensemble positions must lie inside the region")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def nu(self) -> np.ndarray:
        return np.asarray(self.direction)

    def with_physics(self, **changes) -> "ParticleEnsemble":
        return replace(self, **changes)

    def without(self, index: int) -> "ParticleEnsemble":
        """Copy with body ``index`` removed."""
        keep = np.arange(len(self)) != index
        extra = {
            name: (None if getattr(self, name) is None else getattr(self, name)[keep])
            for name in ("alpha", "beta_tilde")
        }
        return replace(
            self,
            positions=self.positions[keep],
            capacitance=self.capacitance[keep],
            volume=self.volume[keep],
            area=self.area[keep],
            beta=self.beta[keep],
            h=self.h[keep],
            radius=self.radius[keep],
            **extra,
        )

    def min_separation(self) -> float:
        """Smallest centre-to-centre distance (``inf`` for fewer than 2 bodies)."""
        if len(self) < 2:
            return math.inf
        from scipy.spatial import cKDTree

        dist, _ = cKDTree(self.positions).query(self.positions, k=2)
        return float(dist[:, 1].min())

    def impedance_weights(self) -> np.ndarray:
        return impedance_weight(self.h, self.area, self.capacitance)


def ensemble_from_template(
    positions: np.ndarray,
    template: PolarizabilityResult,
    region: Box,
    *,
    boundary_kind: BoundaryKind = "dirichlet",
    wavenumber: float = 1.0,
    direction: Sequence[float] = (0.0, 0.0, 1.0),
    h: float = 0.0,
    alpha: Optional[np.ndarray] = None,
    beta_tilde: Optional[np.ndarray] = None,
) -> ParticleEnsemble:
    """Ensemble of identical bodies described by one polarizability result."""
    return ParticleEnsemble(
        positions=np.asarray(positions, float).reshape(-1, 3),
        capacitance=template.capacitance,
        volume=template.volume,
        area=template.area,
        beta=template.beta,
        h=h,
        radius=template.radius,
        region=region,
        boundary_kind=boundary_kind,
        wavenumber=wavenumber,
        direction=tuple(direction),
        alpha=alpha,
        beta_tilde=beta_tilde,
    )


def sample_positions(
    region: Box,
    count: int,
    min_separation: float,
    seed: int,
    *,
    intensity: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    intensity_max: Optional[float] = None,
    max_attempts: Optional[int] = None,
) -> np.ndarray:
    """Dart-throwing placement of ``count`` points at least ``min_separation``
    apart, optionally thinned by an unnormalized ``intensity`` function."""
    if count < 0:
        raise EnsembleError("count must be >= 0")
    if min_separation <= 0:
        raise EnsembleError("min_separation must be positive")
    if count * min_separation**3 >= 0.3 * region.volume:
        raise EnsembleError(
            f"infeasible packing: count*min_separation^3 = {count * min_separation**3:.4g} "
            f">= 0.3*volume = {0.3 * region.volume:.4g}"
        )
    rng = np.random.default_rng(seed)
    budget = max_attempts if max_attempts is not None else 1000 * max(count, 1) + 10000
    if intensity is not None and intensity_max is None:
        probe = region.lo + region.size * rng.random((4096, 3))
        intensity_max = float(np.max(intensity(probe))) * 1.05
    placed = np.empty((count, 3))
    n = 0
    attempts = 0
    sep2 = min_separation**2
    batch = 256
    while n < count and attempts < budget:
        cand = region.lo + region.size * rng.random((batch, 3))
        if intensity is not None:
            accept = rng.random(batch) * intensity_max < intensity(cand)
        else:
            accept = np.ones(batch, dtype=bool)
        for i in range(batch):
            attempts += 1
            if not accept[i]:
                continue
            if n and np.min(np.sum((placed[:n] - cand[i]) ** 2, axis=1)) < sep2:
                continue
            placed[n] = cand[i]
            n += 1
            if n == count or attempts >= budget:
                break
    if n < count:
        raise EnsembleError(f"placement failed: placed {n} of {count} bodies within {budget} attempts")
    return placed


def strata_shape(region: Box, count: int) -> tuple[int, int, int]:
    """Factor ``count`` into three strata counts whose cells are closest to cubes."""
    if count < 1:
        raise EnsembleError("count must be >= 1")
    best, best_cost = None, math.inf
    for a in range(1, count + 1):
        if count % a:
            continue
        rest = count // a
        for b in range(1, rest + 1):
            if rest % b:
                continue
            c = rest // b
            h = region.size / np.array([a, b, c])
            cost = float(np.log(h.max() / h.min()))
            if cost < best_cost - 1e-12:
                best, best_cost = (a, b, c), cost
    return best


def stratified_positions(region: Box, count: int, min_separation: float, seed: int) -> np.ndarray:
    """One point per cell of a ``strata_shape`` partition, jittered uniformly
    inside the cell shrunk by ``min_separation/2`` on every side so that any
    two points are at least ``min_separation`` apart."""
    if min_separation < 0:
        raise EnsembleError("min_separation must be >= 0")
    dims = np.array(strata_shape(region, count))
    h = region.size / dims
    if np.any(h <= min_separation):
        raise EnsembleError(
            f"infeasible stratification: cell size {h.min():.4g} <= min_separation {min_separation:.4g}"
        )
    rng = np.random.default_rng(seed)
    ijk = np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"), axis=-1).reshape(-1, 3)
    jitter = rng.random(ijk.shape) - 0.5
    return region.lo + (ijk + 0.5) * h + jitter * (h - min_separation)


def density_ensemble(
    positions: np.ndarray,
    capacitance_density: Callable[[np.ndarray], np.ndarray],
    region: Box,
    **physics,
) -> ParticleEnsemble:
    """Soft-body ensemble representing a capacitance density.

    Body ``j`` carries ``C_j = c(s_j) |region| / J`` so that the bodies
    reproduce the density ``c`` when placements are spread uniformly. Radii
    are the equivalent-sphere values ``C_j / 4 pi``.
    """
    pos = np.asarray(positions, dtype=float)
    count = len(pos)
    if count == 0:
        raise EnsembleError("density_ensemble needs at least one body")
    cap = np.asarray(capacitance_density(pos), dtype=float) * region.volume / count
    if np.any(cap < 0):
        raise EnsembleError("capacitance density must be nonnegative")
    physics.setdefault("boundary_kind", "dirichlet")
    return ParticleEnsemble(
        positions=pos,
        capacitance=cap,
        volume=np.zeros(count),
        area=np.zeros(count),
        beta=np.zeros((count, 3, 3)),
        h=np.zeros(count),
        radius=cap / (4.0 * math.pi),
        region=region,
        **physics,
    )


def sample_ensemble(
    region: Box,
    count: int,
    min_separation: float,
    body_template: PolarizabilityResult,
    seed: int,
    **physics,
) -> ParticleEnsemble:
    """Random ensemble of identical bodies; deterministic for a fixed seed.

    Extra keyword arguments are forwarded to :func:`ensemble_from_template`
    except ``intensity``/``intensity_max``/``max_attempts``, which shape the
    placement.
    """
    placement = {k: physics.pop(k) for k in ("intensity", "intensity_max", "max_attempts") if k in physics}
    pos = sample_positions(region, count, min_separation, seed, **placement)
    return ensemble_from_template(pos, body_template, region, **physics)


# ---------------------------------------------------------------------------
# Regime diagnostics
# ---------------------------------------------------------------------------


@dataclass
class RegimeDiagnostics:
    mode: str
    ka: float
    a_over_d: float
    kd: float
    volume_fraction: float
    a_over_d3: float
    flags: dict[str, bool] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.flags.values())

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "ka": self.ka,
            "a_over_d": self.a_over_d,
            "kd": self.kd,
            "volume_fraction": self.volume_fraction,
            "a_over_d3": self.a_over_d3,
            "flags": dict(self.flags),
            "messages": list(self.messages),
            "ok": self.ok,
        }


def check_regime(
    ensemble: ParticleEnsemble,
    mode: Literal["acoustic", "em"] = "acoustic",
    *,
    small_ratio: float = DEFAULT_SMALL_RATIO,
    em_safety: float = DEFAULT_EM_SAFETY,
    max_volume_fraction: float = DEFAULT_VOLUME_FRACTION,
) -> RegimeDiagnostics:
    """Report ``ka``, ``a/d`` and ``kd`` and flag violations of the small-body
    regime. Flags are advisory; solvers decide what to do with them."""
    if len(ensemble) == 0:
        raise EnsembleError("regime check needs a nonempty ensemble")
    if mode not in ("acoustic", "em"):
        raise ValueError(f"unknown mode {mode!r}")
    a = float(ensemble.radius.max())
    k = ensemble.wavenumber
    d = ensemble.min_separation()
    n_density = len(ensemble) / ensemble.region.volume
    diag = RegimeDiagnostics(
        mode=mode,
        ka=k * a,
        a_over_d=a / d,
        kd=k * d,
        volume_fraction=n_density * a**3,
        a_over_d3=a / d**3 if math.isfinite(d) else 0.0,
    )
    diag.flags["ka_small"] = diag.ka < small_ratio
    diag.flags["a_over_d_small"] = diag.a_over_d < small_ratio
    diag.flags["dilute"] = diag.volume_fraction < max_volume_fraction
    if mode == "em":
        diag.flags["far_zone"] = diag.kd > em_safety
    if not diag.flags["ka_small"]:
        diag.messages.append(f"ka = {diag.ka:.3g} is not small (threshold {small_ratio})")
    if not diag.flags["a_over_d_small"]:
        diag.messages.append(f"a/d = {diag.a_over_d:.3g} is not small (threshold {small_ratio})")
    if not diag.flags["dilute"]:
        diag.messages.append(
            f"N a^3 = {diag.volume_fraction:.3g} is O(1): the assumption d >> a would be violated"
        )
    if mode == "em" and not diag.flags["far_zone"]:
        diag.messages.append(f"kd = {diag.kd:.3g} <= {em_safety:.3g}: bodies are not in each other's far zone")
    return diag


# ---------------------------------------------------------------------------
# Grids and binned densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid over a box."""

    region: Box
    shape: tuple[int, int, int]

    def __post_init__(self) -> None:
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ValueError(f"grid dimensions must be three integers >= 1, got {self.shape}")
        object.__setattr__(self, "shape", shape)

    @property
    def spacing(self) -> np.ndarray:
        return self.region.size / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, i: int) -> np.ndarray:
        return self.region.lo[i] + (np.arange(self.shape[i]) + 0.5) * self.spacing[i]

    @property
    def centers(self) -> np.ndarray:
        """Cell centres, shape (nx*ny*nz, 3), C order."""
        xs = np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")
        return np.stack([x.ravel() for x in xs], axis=1)

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index with half-open cells; the upper faces of the
        region belong to the last cell."""
        p = np.atleast_2d(points)
        if not np.all(self.region.contains(p, tol=1e-12)):
            raise EnsembleError("body outside the grid region")
        ijk = np.floor((p - self.region.lo) / self.spacing).astype(np.int64)
        ijk = np.clip(ijk, 0, np.asarray(self.shape) - 1)
        return np.ravel_multi_index(ijk.T, self.shape)

    def to_dict(self) -> dict:
        return {"lower": list(self.region.lower), "upper": list(self.region.upper), "shape": list(self.shape)}


@dataclass
class DensityFields:
    """Per-cell densities (quantity per unit volume) on a grid.

    ``beta_v`` holds the product ``beta(y) V(y)``; ``beta`` is recovered as
    ``beta_v / V`` and defined as zero on empty cells. ``alpha_v`` and
    ``beta_tilde_v`` are the EM analogues.
    """

    grid: Grid
    capacitance: np.ndarray  # (N,)
    volume: np.ndarray  # (N,)
    beta_v: np.ndarray  # (N, 3, 3)
    impedance: np.ndarray  # (N,)
    alpha_v: Optional[np.ndarray] = None
    beta_tilde_v: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None

    @property
    def beta(self) -> np.ndarray:
        out = np.zeros_like(self.beta_v)
        occ = self.volume > 0
        out[occ] = self.beta_v[occ] / self.volume[occ, None, None]
        return out

    @classmethod
    def empty(cls, grid: Grid) -> "DensityFields":
        n = grid.size
        return cls(grid, np.zeros(n), np.zeros(n), np.zeros((n, 3, 3)), np.zeros(n),
                   np.zeros((n, 3, 3)), np.zeros((n, 3, 3)), np.zeros(n, dtype=np.int64))

    @classmethod
    def from_functions(
        cls,
        grid: Grid,
        capacitance: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        volume: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        beta: Optional[np.ndarray] = None,
        impedance: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ) -> "DensityFields":
        """Sample continuous densities at cell centres. ``beta`` is a constant
        3x3 tensor multiplying the volume density."""
        x = grid.centers
        out = cls.empty(grid)
        if capacitance is not None:
            out.capacitance = np.asarray(capacitance(x), float)
        if volume is not None:
            out.volume = np.asarray(volume(x), float)
            if beta is not None:
                out.beta_v = out.volume[:, None, None] * np.asarray(beta, float)[None]
        if impedance is not None:
            out.impedance = np.asarray(impedance(x), float)
        return out

    def scaled(self, factor: float) -> "DensityFields":
        """All densities multiplied by ``factor``."""
        def s(a):
            return None if a is None else a * factor
        return DensityFields(self.grid, self.capacitance * factor, self.volume * factor, self.beta_v * factor,
                             self.impedance * factor, s(self.alpha_v), s(self.beta_tilde_v), self.counts)

    def totals(self) -> dict[str, float]:
        dv = self.grid.cell_volume
        return {
            "capacitance": float(self.capacitance.sum() * dv),
            "volume": float(self.volume.sum() * dv),
            "impedance": float(self.impedance.sum() * dv),
        }


def bin_densities(ensemble: ParticleEnsemble, grid: Union[Grid, Sequence[int]]) -> DensityFields:
    """Sum per-body quantities into grid cells and divide by the cell volume."""
    if not isinstance(grid, Grid):
        grid = Grid(ensemble.region, tuple(grid))
    n = grid.size
    dv = grid.cell_volume
    idx = grid.cell_index(ensemble.positions) if len(ensemble) else np.zeros(0, dtype=np.int64)

    def scalar(values):
        return np.bincount(idx, weights=values, minlength=n) / dv

    def tensor(values):
        if np.iscomplexobj(values):
            return tensor(values.real) + 1j * tensor(values.imag)
        out = np.zeros((n, 9))
        flat = values.reshape(-1, 9)
        for c in range(9):
            out[:, c] = np.bincount(idx, weights=flat[:, c], minlength=n)
        return out.reshape(n, 3, 3) / dv

    vol = ensemble.volume
    return DensityFields(
        grid=grid,
        capacitance=scalar(ensemble.capacitance),
        volume=scalar(vol),
        beta_v=tensor(ensemble.beta * vol[:, None, None]),
        impedance=scalar(ensemble.impedance_weights()),
        alpha_v=None if ensemble.alpha is None else tensor(ensemble.alpha * vol[:, None, None]),
        beta_tilde_v=None if ensemble.beta_tilde is None else tensor(ensemble.beta_tilde * vol[:, None, None]),
        counts=np.bincount(idx, minlength=n),
    )


# ---------------------------------------------------------------------------
# Ensemble files
# ---------------------------------------------------------------------------


def ensemble_records(ensemble: ParticleEnsemble) -> list[dict]:
    out = []
    for j in range(len(ensemble)):
        rec = {
            "position": ensemble.positions[j].tolist(),
            "C": float(ensemble.capacitance[j]),
            "V": float(ensemble.volume[j]),
            "area": float(ensemble.area[j]),
            "beta": ensemble.beta[j].tolist(),
            "h": float(ensemble.h[j]) if math.isfinite(ensemble.h[j]) else "inf",
            "radius": float(ensemble.radius[j]),
        }
        if ensemble.alpha is not None:
            rec["alpha"] = _tensor_record(ensemble.alpha[j])
        if ensemble.beta_tilde is not None:
            rec["beta_tilde"] = _tensor_record(ensemble.beta_tilde[j])
        out.append(rec)
    return out


def _tensor_record(t: np.ndarray):
    # complex tensors (lossy bodies) are stored as separate real/imaginary parts
    if np.iscomplexobj(t):
        return {"re": t.real.tolist(), "im": t.imag.tolist()}
    return t.tolist()


def _tensor_column(records: list[dict], key: str) -> np.ndarray:
    vals = [r[key] for r in records]
    if any(isinstance(v, dict) for v in vals):
        try:
            return np.array([np.asarray(v["re"], float) + 1j * np.asarray(v["im"], float) if isinstance(v, dict)
                             else np.asarray(v, float) for v in vals]).reshape(-1, 3, 3)
        except KeyError as exc:
            raise EnsembleError(f"complex tensor {key!r} needs 're' and 'im' parts") from exc
    return np.asarray(vals, float).reshape(-1, 3, 3)


def write_ensemble(ensemble: ParticleEnsemble, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(ensemble_records(ensemble), indent=1))


def read_ensemble(
    path: Union[str, Path],
    region: Box,
    **physics,
) -> ParticleEnsemble:
    """Load an ensemble file; physics (kind, k, direction) come from the caller."""
    try:
        records = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise EnsembleError(f"{path}: {exc}") from exc
    if not isinstance(records, list):
        raise EnsembleError(f"{path}: expected a JSON array of bodies")
    return ensemble_from_records(records, region, **physics)


def ensemble_from_records(records: list[dict], region: Box, **physics) -> ParticleEnsemble:
    required = ("position", "C", "V", "area", "beta", "h")
    for i, rec in enumerate(records):
        missing = [k for k in required if k not in rec]
        if missing:
            raise EnsembleError(f"body {i}: missing keys {missing}")
    j = len(records)

    def col(key, shape=()):
        if j == 0:
            return np.zeros((0,) + shape)
        return np.array([float("inf") if r[key] == "inf" else r[key] for r in records], dtype=float).reshape((j,) + shape)

    has_alpha = j > 0 and all("alpha" in r for r in records)
    has_bt = j > 0 and all("beta_tilde" in r for r in records)
    radius = col("radius") if j and all("radius" in r for r in records) else np.zeros(j)
    return ParticleEnsemble(
        positions=col("position", (3,)),
        capacitance=col("C"),
        volume=col("V"),
        area=col("area"),
        beta=col("beta", (3, 3)),
        h=col("h"),
        radius=radius,
        region=region,
        alpha=_tensor_column(records, "alpha") if has_alpha else None,
        beta_tilde=_tensor_column(records, "beta_tilde") if has_bt else None,
        **physics,
    )
