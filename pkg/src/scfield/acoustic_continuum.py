"""Nyström solvers for the continuum self-consistent acoustic field.

Soft media solve ``u(x) = u_0(x) - int_R g(x, y) C(y) u(y) dy``; impedance
media the same with ``b(y)``; hard media the integro-differential equation

    u(x) = u_0(x) + int_R g(x, y) [ik beta_pq(y) n_p(x, y) d_q u(y) + lap u(y)] V(y) dy

closed with ``lap u = -k^2 u``. Nodes are cell centres with weight equal to
the cell volume. The singular self-cell of ``g`` is replaced by the integral
of ``1/(4 pi |y|)`` over the ball of equal volume, ``r^2/2``; self-cell terms
odd in the direction ``(x - y)/|x - y|`` are dropped.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .acoustic_discrete import helmholtz_green, plane_wave
from .ensemble import DensityFields, Grid
from .gridops import GridConvolver, ball_radius
from .linsolve import SolveInfo, SolverError, solve

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
DENSE_NODES = 1000

ContinuumKind = Literal["soft", "impedance", "hard"]

_PAIRS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
_PAIR_NAME = {(a, b): f"t{a}{b}" for a, b in _PAIRS}
_PAIR_NAME.update({(b, a): f"t{a}{b}" for a, b in _PAIRS})


def _soft_bank(k: float, cell_volume: float):
    self_value = 0.5 * ball_radius(cell_volume) ** 2 / cell_volume

    def bank(off, r):
        zero = r == 0.0
        g = helmholtz_green(np.where(zero, 1.0, r), k)
        return {"g": np.where(zero, self_value, g)}

    return bank


def _hard_bank(k: float, cell_volume: float):
    self_value = 0.5 * ball_radius(cell_volume) ** 2 / cell_volume

    def bank(off, r):
        zero = r == 0.0
        rs = np.where(zero, 1.0, r)
        g = helmholtz_green(rs, k)
        n = off / rs[:, None]
        gr = g / rs
        dg = 1j * k * g - gr
        out = {"g": np.where(zero, self_value, g)}
        for p in range(3):
            out[f"gn{p}"] = np.where(zero, 0.0, g * n[:, p])
            out[f"dgn{p}"] = np.where(zero, 0.0, dg * n[:, p])
        for a, b in _PAIRS:
            t = (dg - gr) * n[:, a] * n[:, b] + (gr if a == b else 0.0)
            out[_PAIR_NAME[(a, b)]] = np.where(zero, 0.0, t)
        return out

    return bank


@dataclass
class GridFieldSolution:
    """Self-consistent field at the cell centres of ``grid``."""

    grid: Grid
    kind: str
    wavenumber: float
    direction: np.ndarray
    u: np.ndarray
    grad: Optional[np.ndarray] = None
    info: SolveInfo = field(default_factory=lambda: SolveInfo("none", 0.0))
    metadata: dict = field(default_factory=dict)
    # per-node source weights used for off-grid evaluation
    _mono: Optional[np.ndarray] = field(default=None, repr=False)
    _dip: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.centers

    def evaluate(self, points: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Field at arbitrary points away from the grid nodes."""
        pts = np.atleast_2d(np.asarray(points, float))
        k = self.wavenumber
        out = plane_wave(pts, k, self.direction).astype(complex)
        nodes = self.nodes
        for lo in range(0, len(pts), chunk):
            hi = min(len(pts), lo + chunk)
            diff = pts[lo:hi, None, :] - nodes[None, :, :]
            r = np.linalg.norm(diff, axis=2)
            if np.any(r == 0.0):
                raise ValueError("evaluation point coincides with a grid node; read solution.u instead")
            g = helmholtz_green(r, k)
            q = np.broadcast_to(self._mono, r.shape)
            if self._dip is not None:
                q = q + np.einsum("tjp,jp->tj", diff / r[..., None], self._dip)
            out[lo:hi] += np.sum(g * q, axis=1)
        return out

    def to_rows(self) -> list[list[float]]:
        rows = []
        x = self.nodes
        for i in range(len(self.u)):
            row = [*x[i], self.u[i].real, self.u[i].imag]
            if self.grad is not None:
                for c in self.grad[i]:
                    row += [c.real, c.imag]
            rows.append(row)
        return rows

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "grid": self.grid.to_dict(),
            "wavenumber": self.wavenumber,
            "direction": list(map(float, self.direction)),
            "solver": self.info.method,
            "residual": self.info.residual,
            "iterations": self.info.iterations,
            **self.metadata,
        }


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


class _MonopoleOperator:
    """Coupling ``u -> -sum_j G_ij c_j u_j`` with ``c = density * cell volume``."""

    def __init__(self, grid: Grid, density: np.ndarray, k: float) -> None:
        self.grid = grid
        self.k = k
        self.weights = np.asarray(density, float) * grid.cell_volume
        self.conv = GridConvolver(grid, _soft_bank(k, grid.cell_volume))

    @property
    def size(self) -> int:
        return self.grid.size

    def coupling(self, u: np.ndarray) -> np.ndarray:
        return -self.conv.convolve("g", self.weights * u)

    def system(self, u: np.ndarray) -> np.ndarray:
        return u - self.coupling(u)

    def dense_system(self) -> np.ndarray:
        mat = self.conv.dense("g") * self.weights[None, :]
        mat[np.diag_indices_from(mat)] += 1.0
        return mat

    def incident(self, nu: np.ndarray) -> np.ndarray:
        return plane_wave(self.grid.centers, self.k, nu)


class _HardOperator:
    """Coupling of the (u, grad u) node unknowns for hard media."""

    def __init__(self, grid: Grid, volume: np.ndarray, beta_v: np.ndarray, k: float) -> None:
        self.grid = grid
        self.k = k
        dv = grid.cell_volume
        self.mono = -k * k * np.asarray(volume, float) * dv  # (N,)
        self.dip = 1j * k * np.asarray(beta_v, float) * dv  # (N,3,3)
        self.conv = GridConvolver(grid, _hard_bank(k, dv))

    @property
    def size(self) -> int:
        return 4 * self.grid.size

    def coupling(self, x: np.ndarray) -> np.ndarray:
        n = self.grid.size
        x = x.reshape(n, 4)
        m = self.mono * x[:, 0]
        w = np.einsum("jpq,jq->jp", self.dip, x[:, 1:])
        c = self.conv
        m_hat = c.transform(m)
        w_hat = [c.transform(w[:, p]) for p in range(3)]
        out = np.empty((n, 4), dtype=complex)
        out[:, 0] = c.combine([("g", m_hat)] + [(f"gn{p}", w_hat[p]) for p in range(3)])
        for l in range(3):
            terms = [(f"dgn{l}", m_hat)] + [(_PAIR_NAME[(l, p)], w_hat[p]) for p in range(3)]
            out[:, 1 + l] = c.combine(terms)
        return out.ravel()

    def system(self, x: np.ndarray) -> np.ndarray:
        return x - self.coupling(x)

    def dense_system(self) -> np.ndarray:
        n = self.grid.size
        c = self.conv
        mat = np.zeros((n, 4, n, 4), dtype=complex)
        g = c.dense("g")
        mat[:, 0, :, 0] = g * self.mono[None, :]
        del g
        for p in range(3):
            gn = c.dense(f"gn{p}")
            mat[:, 0, :, 1:] += gn[..., None] * self.dip[None, :, p, :]
            del gn
            dgn = c.dense(f"dgn{p}")
            mat[:, 1 + p, :, 0] = dgn * self.mono[None, :]
            del dgn
        for a, b in _PAIRS:
            t = c.dense(_PAIR_NAME[(a, b)])
            mat[:, 1 + a, :, 1:] += t[..., None] * self.dip[None, :, b, :]
            if a != b:
                mat[:, 1 + b, :, 1:] += t[..., None] * self.dip[None, :, a, :]
            del t
        mat = -mat.reshape(4 * n, 4 * n)
        mat[np.diag_indices_from(mat)] += 1.0
        return mat

    def incident(self, nu: np.ndarray) -> np.ndarray:
        u0 = plane_wave(self.grid.centers, self.k, nu)
        x = np.empty((self.grid.size, 4), dtype=complex)
        x[:, 0] = u0
        x[:, 1:] = 1j * self.k * nu[None, :] * u0[:, None]
        return x.ravel()


def _run(op, rhs: np.ndarray, tol: float, what: str, dense_limit: int) -> tuple[np.ndarray, SolveInfo]:
    x, info = solve(op.system, rhs, tol=tol, what=what, assemble=op.dense_system, dense_limit=dense_limit)
    if info.residual > 10 * tol:
        raise SolverError(f"{what}: residual {info.residual:.3e} above tolerance {tol:.1e}")
    return x, info


def _unit(nu) -> np.ndarray:
    nu = np.asarray(nu, float)
    return nu / np.linalg.norm(nu)


def _check_nonnegative(values: np.ndarray, name: str) -> None:
    if np.any(np.asarray(values) < 0):
        raise ValueError(f"{name} density must be >= 0 on the grid")


def _solve_monopole(fields: DensityFields, density: np.ndarray, k: float, nu, kind: str,
                    tol: float, dense_limit: int) -> GridFieldSolution:
    nu = _unit(nu)
    op = _MonopoleOperator(fields.grid, density, k)
    rhs = op.incident(nu)
    if not np.any(op.weights):
        info = SolveInfo("identity", 0.0)
        u = rhs
    else:
        u, info = _run(op, rhs, tol, f"{kind} continuum system", dense_limit)
    return GridFieldSolution(fields.grid, kind, k, nu, u, info=info, _mono=-op.weights * u,
                             metadata={"self_cell": "equal-volume ball, r^2/2"})


def solve_soft(fields: DensityFields, k: float, nu, tol: float = RESIDUAL_TOL,
               dense_limit: int = DENSE_NODES) -> GridFieldSolution:
    """Soft medium with capacitance density ``C(y)``."""
    _check_nonnegative(fields.capacitance, "capacitance")
    return _solve_monopole(fields, fields.capacitance, k, nu, "soft", tol, dense_limit)


def solve_impedance_continuum(fields: DensityFields, k: float, nu, tol: float = RESIDUAL_TOL,
                              dense_limit: int = DENSE_NODES) -> GridFieldSolution:
    """Impedance medium with strength density ``b(y)``."""
    _check_nonnegative(fields.impedance, "impedance")
    return _solve_monopole(fields, fields.impedance, k, nu, "impedance", tol, dense_limit)


HARD_CAVEAT = (
    "V(y) is used as given; for shrinking bodies the total body volume vanishes, "
    "so the hard-medium field is a leading-order model"
)


def solve_hard(fields: DensityFields, k: float, nu, tol: float = RESIDUAL_TOL,
               dense_limit: int = DENSE_NODES) -> GridFieldSolution:
    """Hard medium with volume density ``V(y)`` and tensor density
    ``beta(y) V(y)``; unknowns are ``u`` and ``grad u`` at every node."""
    _check_nonnegative(fields.volume, "volume")
    nu = _unit(nu)
    op = _HardOperator(fields.grid, fields.volume, fields.beta_v, k)
    rhs = op.incident(nu)
    meta = {
        "closure": "laplacian u_e = -k^2 u_e",
        "self_cell": "equal-volume ball r^2/2 for the closure term; direction-odd terms dropped",
        "caveat": HARD_CAVEAT,
    }
    if not np.any(op.mono) and not np.any(op.dip):
        x, info = rhs, SolveInfo("identity", 0.0)
    else:
        x, info = _run(op, rhs, tol, "hard continuum system", dense_limit // 4 * 4)
    n = fields.grid.size
    x = x.reshape(n, 4)
    sol = GridFieldSolution(fields.grid, "hard", k, nu, x[:, 0], x[:, 1:], info=info, metadata=meta,
                            _mono=op.mono * x[:, 0], _dip=np.einsum("jpq,jq->jp", op.dip, x[:, 1:]))
    if min(fields.grid.shape) >= 5:
        sol.metadata["closure_residual"] = helmholtz_residual(sol)
    return sol


def first_born(fields: DensityFields, k: float, nu, kind: ContinuumKind) -> GridFieldSolution:
    """Incident field plus the first Neumann-series term at every node."""
    nu = _unit(nu)
    if kind == "hard":
        op = _HardOperator(fields.grid, fields.volume, fields.beta_v, k)
        x0 = op.incident(nu)
        x = (x0 + op.coupling(x0)).reshape(-1, 4)
        x0 = x0.reshape(-1, 4)
        return GridFieldSolution(fields.grid, "hard-born", k, nu, x[:, 0], x[:, 1:],
                                 _mono=op.mono * x0[:, 0], _dip=np.einsum("jpq,jq->jp", op.dip, x0[:, 1:]))
    density = fields.capacitance if kind == "soft" else fields.impedance
    op = _MonopoleOperator(fields.grid, density, k)
    u0 = op.incident(nu)
    return GridFieldSolution(fields.grid, f"{kind}-born", k, nu, u0 + op.coupling(u0), _mono=-op.weights * u0)


# ---------------------------------------------------------------------------
# Differential residuals
# ---------------------------------------------------------------------------


def _interior_laplacian(u: np.ndarray, grid: Grid) -> tuple[np.ndarray, tuple[slice, slice, slice]]:
    if min(grid.shape) < 5:
        raise ValueError(f"grid {grid.shape} too coarse for the residual check (need >= 5 nodes per axis)")
    f = u.reshape(grid.shape)
    h = grid.spacing
    inner = (slice(1, -1),) * 3
    lap = np.zeros_like(f[inner])
    for a in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[a] = slice(0, -2)
        hi[a] = slice(2, None)
        lap += (f[tuple(lo)] - 2.0 * f[inner] + f[tuple(hi)]) / h[a] ** 2
    return lap, inner


def schrodinger_residual(solution: GridFieldSolution, fields: DensityFields, k: float) -> float:
    """``||(lap_h + k^2 - C) u|| / ||k^2 u||`` over interior nodes."""
    lap, inner = _interior_laplacian(solution.u, solution.grid)
    f = solution.u.reshape(solution.grid.shape)[inner]
    q = fields.capacitance.reshape(solution.grid.shape)[inner]
    res = lap + (k * k - q) * f
    return float(np.linalg.norm(res) / np.linalg.norm(k * k * f))


def helmholtz_residual(solution: GridFieldSolution) -> float:
    """``||(lap_h + k^2) u|| / ||k^2 u||``: how far the closure
    ``lap u = -k^2 u`` is from the computed field."""
    k = solution.wavenumber
    lap, inner = _interior_laplacian(solution.u, solution.grid)
    f = solution.u.reshape(solution.grid.shape)[inner]
    return float(np.linalg.norm(lap + k * k * f) / np.linalg.norm(k * k * f))
