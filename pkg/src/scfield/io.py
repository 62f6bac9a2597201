"""Deterministic JSON/CSV writers and plot-data sampling.

Every float is written with 17 significant digits (``%.17g``), which
round-trips IEEE doubles, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from .acoustic_continuum import GridFieldSolution
from .acoustic_discrete import DiscreteFieldSolution, evaluate_field
from .em_scattering import EMFieldSolution
from .ensemble import Box

FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def format_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return FLOAT_FORMAT % x


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    return obj


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(k) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int = 1) -> str:
    """JSON text with every float at 17 significant digits."""
    return _encode(_plain(obj), indent, 0) + "\n"


def write_json(obj: Any, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def write_csv(header: Sequence[str], rows: Sequence[Sequence[float]], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(float(v)) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path: PathLike) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    return header, data.reshape(-1, len(header))


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LineSampler:
    start: tuple[float, float, float]
    end: tuple[float, float, float]
    samples: int = 200

    def points(self) -> np.ndarray:
        if self.samples < 2:
            raise ValueError("a line needs at least 2 samples")
        t = np.linspace(0.0, 1.0, self.samples)[:, None]
        return (1.0 - t) * np.asarray(self.start, float) + t * np.asarray(self.end, float)


@dataclass(frozen=True)
class PlaneSampler:
    """Plane ``x[axis] = value`` sampled on a ``shape`` grid over the other
    two axes between ``lower`` and ``upper`` (defaults: the region)."""

    axis: int
    value: float
    shape: tuple[int, int] = (50, 50)
    lower: Optional[tuple[float, float]] = None
    upper: Optional[tuple[float, float]] = None

    def points(self, region: Optional[Box] = None) -> np.ndarray:
        if self.axis not in (0, 1, 2):
            raise ValueError("plane axis must be 0, 1 or 2")
        others = [a for a in range(3) if a != self.axis]
        if self.lower is None or self.upper is None:
            if region is None:
                raise ValueError("plane extent needs lower/upper or a region")
            lower = region.lo[others]
            upper = region.hi[others]
        else:
            lower, upper = np.asarray(self.lower, float), np.asarray(self.upper, float)
        s = np.linspace(lower[0], upper[0], self.shape[0])
        t = np.linspace(lower[1], upper[1], self.shape[1])
        ss, tt = np.meshgrid(s, t, indexing="ij")
        pts = np.empty((ss.size, 3))
        pts[:, self.axis] = self.value
        pts[:, others[0]] = ss.ravel()
        pts[:, others[1]] = tt.ravel()
        return pts


def _solution_region(solution) -> Optional[Box]:
    if isinstance(solution, DiscreteFieldSolution):
        return solution.ensemble.region
    if isinstance(solution, GridFieldSolution):
        return solution.grid.region
    return None


def sample_solution(solution, points: np.ndarray) -> tuple[list[str], np.ndarray]:
    """Header and rows of field samples at ``points``."""
    pts = np.atleast_2d(np.asarray(points, float))
    if isinstance(solution, EMFieldSolution):
        U = solution.evaluate(pts)
        names = ["Ex", "Ey", "Ez", "Hx", "Hy", "Hz"]
        header = ["x", "y", "z", "abs_E", "abs_H"] + [f"abs_{n}" for n in names]
        rows = np.column_stack([pts, np.linalg.norm(U[:, :3], axis=1), np.linalg.norm(U[:, 3:], axis=1), np.abs(U)])
        return header, rows
    if isinstance(solution, DiscreteFieldSolution):
        u = evaluate_field(solution, pts)
    elif isinstance(solution, GridFieldSolution):
        u = solution.evaluate(pts)
    else:
        raise TypeError(f"cannot sample {type(solution).__name__}")
    header = ["x", "y", "z", "abs_u", "re_u", "im_u"]
    return header, np.column_stack([pts, np.abs(u), u.real, u.imag])


def emit_plot_data(solution, sampler: Union[LineSampler, PlaneSampler], path: PathLike,
                   region: Optional[Box] = None) -> Path:
    """Write field samples along a line or over a plane as CSV.

    Sample points must lie inside ``region`` (by default the solution's
    region; EM solutions need it passed explicitly).
    """
    region = region if region is not None else _solution_region(solution)
    if region is None:
        raise ValueError("emit_plot_data needs a region for this solution type")
    pts = sampler.points(region) if isinstance(sampler, PlaneSampler) else sampler.points()
    if not np.all(region.contains(pts, tol=1e-12)):
        raise ValueError("plot samples fall outside the region")
    header, rows = sample_solution(solution, pts)
    return write_csv(header, rows, path)
