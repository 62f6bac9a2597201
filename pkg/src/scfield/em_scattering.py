"""Electromagnetic scattering by many small bodies.

A body with tensors ``alpha`` (electric) and ``beta_tilde`` (magnetic) and
volume ``V`` acquires moments ``P = alpha V eps0 E`` and
``M = beta_tilde V mu0 H``. Its far-zone field in direction ``nu'`` is
``g(r) S(nu') U`` with ``U = (E, H)``, ``g = exp(ikr)/r`` (no ``1/(4 pi)``,
unlike the acoustic Green function) and the 6x6 matrix

    S = k^2 V / (4 pi) [[alpha - nu'(nu'.alpha),  -sqrt(mu0^3/eps0) nu' x beta_tilde],
                        [sqrt(eps0/mu0) nu' x alpha, mu0 (beta_tilde - nu'(nu'.beta_tilde))]]

The self-consistent field solves ``U_e = U_0 + sum_j g S^(j) U_e(s_j)``
over bodies or, in the continuum, the same sum with per-cell tensor
densities ``alpha V`` and ``beta_tilde V``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .electrostatics import alpha_from_tensors
from .ensemble import DEFAULT_EM_SAFETY, DensityFields, Grid, ParticleEnsemble, check_regime
from .gridops import GridConvolver, ball_radius
from .linsolve import SolveInfo, SolverError, solve

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
CONTINUUM_TOL = 1e-8
DENSE_UNKNOWNS = 3000
GREEN_CONVENTION = "exp(ikr)/r"


class EMRegimeError(ValueError):
    """Raised when bodies are not in each other's far zone and no override is given."""


def em_green(r: np.ndarray, k: float) -> np.ndarray:
    """``exp(ikr) / r``."""
    return np.exp(1j * k * r) / r


def cross_matrix(v: np.ndarray) -> np.ndarray:
    """Matrices ``[v]_x`` with ``[v]_x w = v x w``; ``v`` has shape (..., 3)."""
    v = np.asarray(v)
    out = np.zeros(v.shape + (3,), dtype=v.dtype)
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def _unit(v) -> np.ndarray:
    v = np.asarray(v, float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("direction must be nonzero")
    return v / norm


# ---------------------------------------------------------------------------
# Single body
# ---------------------------------------------------------------------------


def dipole_far_fields(P, M, nu_prime, k: float, eps0: float = 1.0, mu0: float = 1.0):
    """Far-zone amplitudes ``(E_sc, H_sc)`` of electric and magnetic dipoles.

    Both expressions are evaluated as written: ``E_sc`` from the dipole
    formula and ``H_sc`` from its own expression rather than from
    ``sqrt(eps0/mu0) nu' x E_sc``, so the two can be checked against each
    other. Inputs broadcast over leading axes.
    """
    P = np.asarray(P)
    M = np.asarray(M)
    n = np.asarray(nu_prime, float)
    if not np.allclose(np.linalg.norm(n, axis=-1), 1.0, rtol=0, atol=1e-12):
        raise ValueError("nu_prime must be a unit vector")
    pref = k * k / (4.0 * math.pi)
    e = pref * (np.cross(n, np.cross(P, n)) / eps0 + math.sqrt(mu0 / eps0) * np.cross(M, n))
    h = pref * (np.cross(n, P) / math.sqrt(eps0 * mu0) + np.cross(n, np.cross(M, n)))
    return e, h


def electric_moment(alpha, volume: float, E, eps0: float = 1.0) -> np.ndarray:
    return volume * eps0 * np.einsum("...ij,...j->...i", np.asarray(alpha), np.asarray(E))


def magnetic_moment(beta_tilde, volume: float, H, mu0: float = 1.0) -> np.ndarray:
    return volume * mu0 * np.einsum("...ij,...j->...i", np.asarray(beta_tilde), np.asarray(H))


def compose_beta_tilde(alpha_mu: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """``beta_tilde = alpha(gamma_tilde) + beta``."""
    return np.asarray(alpha_mu) + np.asarray(beta)


def contrast(value: complex, reference: float) -> Union[float, complex]:
    """``(value - reference) / (value + reference)``; complex in, complex out."""
    g = (value - reference) / (value + reference)
    return complex(g) if isinstance(g, complex) or np.iscomplexobj(g) else float(g)


def lossy_permittivity(eps: float, sigma: float, omega: float) -> complex:
    """``eps + i 4 pi sigma / omega`` for a conducting body."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    return complex(eps, 4.0 * math.pi * sigma / omega)


def body_tensors(
    b_tensors: Sequence[np.ndarray],
    volume: float,
    eps: float,
    mu: float,
    n: int,
    eps0: float = 1.0,
    mu0: float = 1.0,
    sigma: float = 0.0,
    omega: Optional[float] = None,
    use_conductivity: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """``(alpha(gamma), beta_tilde)`` of one body from its ``b^(m)`` tensors.

    ``gamma`` comes from the permittivity, ``gamma_tilde`` from the
    permeability. With ``use_conductivity`` the permittivity is replaced by
    ``eps + i 4 pi sigma / omega`` and ``alpha`` becomes complex.
    """
    if use_conductivity:
        if omega is None:
            raise ValueError("use_conductivity needs omega")
        gamma = contrast(lossy_permittivity(eps, sigma, omega), eps0)
    else:
        gamma = contrast(eps, eps0)
    gamma_tilde = contrast(mu, mu0)
    alpha = alpha_from_tensors(b_tensors, volume, gamma, n)
    beta = alpha_from_tensors(b_tensors, volume, -1.0, n)
    if gamma_tilde == 0.0:
        beta_tilde = beta.copy()
    else:
        beta_tilde = compose_beta_tilde(alpha_from_tensors(b_tensors, volume, gamma_tilde, n), beta)
    return alpha, beta_tilde


@dataclass(frozen=True)
class SMatrix6:
    """Far-zone scattering matrix of one body for the direction ``nu_prime``."""

    matrix: np.ndarray  # (6, 6)
    alpha: np.ndarray
    beta_tilde: np.ndarray
    volume: float
    nu_prime: np.ndarray
    k: float
    eps0: float = 1.0
    mu0: float = 1.0

    def apply(self, U) -> np.ndarray:
        return self.matrix @ np.asarray(U)

    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        m = self.matrix
        return m[:3, :3], m[:3, 3:], m[3:, :3], m[3:, 3:]


def _s_blocks(alpha, beta_tilde, n, eps0: float, mu0: float) -> np.ndarray:
    """Unscaled 6x6 blocks for directions ``n`` of shape (..., 3); tensors
    broadcast against the leading axes."""
    a = np.asarray(alpha)
    b = np.asarray(beta_tilde)
    proj = np.eye(3) - n[..., :, None] * n[..., None, :]
    cx = cross_matrix(n)
    dtype = np.result_type(a, b, n)
    out = np.zeros(np.broadcast_shapes(n.shape[:-1], a.shape[:-2], b.shape[:-2]) + (6, 6), dtype=dtype)
    out[..., :3, :3] = proj @ a
    out[..., :3, 3:] = -math.sqrt(mu0**3 / eps0) * (cx @ b)
    out[..., 3:, :3] = math.sqrt(eps0 / mu0) * (cx @ a)
    out[..., 3:, 3:] = mu0 * (proj @ b)
    return out


def build_smatrix(alpha, beta_tilde, volume: float, nu_prime, k: float,
                  eps0: float = 1.0, mu0: float = 1.0) -> SMatrix6:
    """Assemble the 6x6 scattering matrix from the body tensors."""
    n = np.asarray(nu_prime, float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise ValueError("nu_prime must be a unit vector")
    if volume <= 0:
        raise ValueError("volume must be positive")
    mat = k * k * volume / (4.0 * math.pi) * _s_blocks(alpha, beta_tilde, n, eps0, mu0)
    return SMatrix6(mat, np.asarray(alpha), np.asarray(beta_tilde), float(volume), n, k, eps0, mu0)


# ---------------------------------------------------------------------------
# Incident wave and solutions
# ---------------------------------------------------------------------------


def default_polarization(nu) -> np.ndarray:
    """``x`` for ``nu = z``; otherwise the unit vector of ``x`` (or ``y``)
    projected orthogonally to ``nu``."""
    nu = _unit(nu)
    for trial in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        p = trial - nu * (nu @ trial)
        if np.linalg.norm(p) > 1e-8:
            return p / np.linalg.norm(p)
    raise AssertionError("unreachable")


def em_plane_wave(points, k: float, nu, polarization, eps0: float = 1.0, mu0: float = 1.0) -> np.ndarray:
    """``(E_0, H_0)`` with ``E_0 = p exp(ik nu.x)``, ``H_0 = sqrt(eps0/mu0) nu x E_0``."""
    pts = np.atleast_2d(np.asarray(points, float))
    nu = _unit(nu)
    p = np.asarray(polarization)
    phase = np.exp(1j * k * (pts @ nu))
    e = phase[:, None] * p[None, :]
    h = math.sqrt(eps0 / mu0) * np.cross(nu, e)
    return np.concatenate([e, h], axis=1)


def _check_polarization(nu: np.ndarray, polarization) -> np.ndarray:
    if polarization is None:
        return default_polarization(nu)
    p = np.asarray(polarization)
    norm = np.linalg.norm(p)
    if norm == 0:
        raise ValueError("polarization must be nonzero")
    p = p / norm
    if abs(np.vdot(nu, p)) > 1e-10:
        raise ValueError("polarization must be orthogonal to the incident direction")
    return p


@dataclass
class EMFieldSolution:
    """Self-consistent ``U_e = (E, H)`` at the source sites (bodies or grid nodes).

    ``alpha_v`` and ``beta_tilde_v`` are the per-site tensors already
    multiplied by the volume, so the field at any other point is
    ``U_0(x) + sum_j g(x, s_j) S_j((x - s_j)/|x - s_j|) U_e(s_j)``.
    """

    positions: np.ndarray
    U: np.ndarray  # (N, 6)
    alpha_v: np.ndarray
    beta_tilde_v: np.ndarray
    wavenumber: float
    direction: np.ndarray
    polarization: np.ndarray
    eps0: float = 1.0
    mu0: float = 1.0
    info: SolveInfo = field(default_factory=lambda: SolveInfo("none", 0.0))
    metadata: dict = field(default_factory=dict)

    @property
    def E(self) -> np.ndarray:
        return self.U[:, :3]

    @property
    def H(self) -> np.ndarray:
        return self.U[:, 3:]

    def incident(self, points) -> np.ndarray:
        return em_plane_wave(points, self.wavenumber, self.direction, self.polarization, self.eps0, self.mu0)

    def scattered(self, points, chunk: int = 256) -> np.ndarray:
        """Sum of body contributions at points away from every source site."""
        pts = np.atleast_2d(np.asarray(points, float))
        out = np.zeros((len(pts), 6), dtype=complex)
        if len(self.positions) == 0:
            return out
        for lo in range(0, len(pts), chunk):
            hi = min(len(pts), lo + chunk)
            diff = pts[lo:hi, None, :] - self.positions[None, :, :]
            r = np.linalg.norm(diff, axis=2)
            if np.any(r == 0.0):
                raise ValueError("evaluation point coincides with a source site")
            blocks = _pair_blocks(diff, r, self.alpha_v, self.beta_tilde_v, self.wavenumber, self.eps0, self.mu0)
            out[lo:hi] = np.einsum("tajb,jb->ta", blocks, self.U)
        return out

    def evaluate(self, points) -> np.ndarray:
        return self.incident(points) + self.scattered(points)

    def to_dict(self) -> dict:
        sites = []
        for j in range(len(self.positions)):
            vals = []
            for c in self.U[j]:
                vals += [float(c.real), float(c.imag)]
            sites.append({"position": self.positions[j].tolist(), "U_e": vals})
        meta = {
            "wavenumber": self.wavenumber,
            "direction": list(map(float, self.direction)),
            "polarization": [[float(c.real), float(c.imag)] for c in np.asarray(self.polarization, complex)],
            "eps0": self.eps0,
            "mu0": self.mu0,
            "green_function": GREEN_CONVENTION,
            "layout": "U_e = (Ex, Ey, Ez, Hx, Hy, Hz) as (re, im) pairs",
            "solver": self.info.method,
            "residual": self.info.residual,
            **self.metadata,
        }
        return {"metadata": meta, "sites": sites}


# ---------------------------------------------------------------------------
# Coupled systems
# ---------------------------------------------------------------------------


def _pair_blocks(diff: np.ndarray, r: np.ndarray, alpha_v: np.ndarray, beta_tilde_v: np.ndarray,
                 k: float, eps0: float, mu0: float) -> np.ndarray:
    """Blocks ``g(r) S_j(n)`` of shape (T, 6, J, 6); pairs with ``r = 0`` give 0."""
    zero = r == 0.0
    rs = np.where(zero, 1.0, r)
    g = np.where(zero, 0.0, em_green(rs, k)) * (k * k / (4.0 * math.pi))
    n = diff / rs[..., None]
    s = _s_blocks(alpha_v[None], beta_tilde_v[None], n, eps0, mu0)  # (T, J, 6, 6)
    return np.transpose(g[..., None, None] * s, (0, 2, 1, 3))


def _coupling_matrix(positions: np.ndarray, alpha_v: np.ndarray, beta_tilde_v: np.ndarray,
                     k: float, eps0: float, mu0: float, chunk: int = 128) -> np.ndarray:
    """``I - K`` with ``K[m, :, j, :] = g(s_m, s_j) S_j(n_mj)`` for ``j != m``."""
    n = len(positions)
    dtype = np.result_type(alpha_v, beta_tilde_v, complex)
    mat = np.zeros((n, 6, n, 6), dtype=dtype)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        diff = positions[lo:hi, None, :] - positions[None, :, :]
        r = np.linalg.norm(diff, axis=2)
        mat[lo:hi] = -_pair_blocks(diff, r, alpha_v, beta_tilde_v, k, eps0, mu0)
    mat = mat.reshape(6 * n, 6 * n)
    mat[np.diag_indices_from(mat)] += 1.0
    return mat


def _solve_sites(positions, alpha_v, beta_tilde_v, k, nu, polarization, eps0, mu0, tol, what,
                 matvec=None, dense_limit: int = DENSE_UNKNOWNS) -> tuple[np.ndarray, SolveInfo]:
    u0 = em_plane_wave(positions, k, nu, polarization, eps0, mu0).ravel()
    if len(positions) == 0 or (not np.any(alpha_v) and not np.any(beta_tilde_v)):
        return u0.reshape(-1, 6), SolveInfo("identity", 0.0)

    def assemble():
        return _coupling_matrix(positions, alpha_v, beta_tilde_v, k, eps0, mu0)

    if matvec is None:
        x, info = solve(assemble(), u0, tol=tol, what=what, dense_limit=dense_limit)
    else:
        x, info = solve(matvec, u0, tol=tol, what=what, assemble=assemble, dense_limit=dense_limit)
    if info.residual > 10 * tol:
        raise SolverError(f"{what}: residual {info.residual:.3e} above tolerance {tol:.1e}")
    return x.reshape(-1, 6), info


def solve_em_discrete(
    ensemble: ParticleEnsemble,
    polarization=None,
    *,
    eps0: float = 1.0,
    mu0: float = 1.0,
    allow_near_zone: bool = False,
    em_safety: float = DEFAULT_EM_SAFETY,
    tol: float = RESIDUAL_TOL,
) -> EMFieldSolution:
    """Self-consistent ``(E, H)`` at every body of ``ensemble``.

    The ensemble must carry ``alpha`` and ``beta_tilde``. Ensembles whose
    closest pair has ``k d <= em_safety`` are refused unless
    ``allow_near_zone`` is set.
    """
    if len(ensemble) and (ensemble.alpha is None or ensemble.beta_tilde is None):
        raise ValueError("EM solve needs per-body alpha and beta_tilde")
    k = ensemble.wavenumber
    nu = ensemble.nu
    pol = _check_polarization(nu, polarization)
    regime = None
    if len(ensemble):
        diag = check_regime(ensemble, "em", em_safety=em_safety)
        regime = diag.to_dict()
        if not diag.flags["far_zone"]:
            if not allow_near_zone:
                raise EMRegimeError("; ".join(m for m in diag.messages if "far zone" in m)
                                    + " (set allow_near_zone to override)")
            logger.warning("EM solve outside the far-zone regime: kd = %.3g", diag.kd)
    pos = ensemble.positions
    vol = ensemble.volume
    av = ensemble.alpha * vol[:, None, None] if len(ensemble) else np.zeros((0, 3, 3))
    bv = ensemble.beta_tilde * vol[:, None, None] if len(ensemble) else np.zeros((0, 3, 3))
    U, info = _solve_sites(pos, av, bv, k, nu, pol, eps0, mu0, tol, "EM Foldy-Lax system")
    meta = {"regime": regime} if regime is not None else {}
    return EMFieldSolution(pos, U, av, bv, k, nu, pol, eps0, mu0, info, meta)


def single_scattering(solution_or_ensemble, polarization=None, *, eps0: float = 1.0, mu0: float = 1.0) -> np.ndarray:
    """``U_0 + K U_0`` at the body sites (first Neumann-series term)."""
    ens = solution_or_ensemble
    nu = ens.nu
    pol = _check_polarization(nu, polarization)
    vol = ens.volume
    av = ens.alpha * vol[:, None, None]
    bv = ens.beta_tilde * vol[:, None, None]
    u0 = em_plane_wave(ens.positions, ens.wavenumber, nu, pol, eps0, mu0).ravel()
    mat = _coupling_matrix(ens.positions, av, bv, ens.wavenumber, eps0, mu0)
    return (2.0 * u0 - mat @ u0).reshape(-1, 6)


# ---------------------------------------------------------------------------
# Continuum
# ---------------------------------------------------------------------------


_PAIRS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _em_bank(k: float):
    pref = k * k / (4.0 * math.pi)

    def bank(off, r):
        zero = r == 0.0
        rs = np.where(zero, 1.0, r)
        g = np.where(zero, 0.0, em_green(rs, k)) * pref
        n = off / rs[:, None]
        out = {"g": g}
        for p in range(3):
            out[f"n{p}"] = g * n[:, p]
        for a, b in _PAIRS:
            out[f"t{a}{b}"] = g * n[:, a] * n[:, b]
        return out

    return bank


def _t(a: int, b: int) -> str:
    return f"t{min(a, b)}{max(a, b)}"


_LEVI = [(0, 1, 2, 1.0), (0, 2, 1, -1.0), (1, 2, 0, 1.0), (1, 0, 2, -1.0), (2, 0, 1, 1.0), (2, 1, 0, -1.0)]


class _EMGridOperator:
    def __init__(self, grid: Grid, alpha_v: np.ndarray, beta_tilde_v: np.ndarray, k: float,
                 eps0: float, mu0: float) -> None:
        self.grid = grid
        dv = grid.cell_volume
        self.A = alpha_v * dv
        self.B = beta_tilde_v * dv
        self.k, self.eps0, self.mu0 = k, eps0, mu0
        self._conv: Optional[GridConvolver] = None

    @property
    def conv(self) -> GridConvolver:
        if self._conv is None:
            self._conv = GridConvolver(self.grid, _em_bank(self.k))
        return self._conv

    def coupling(self, x: np.ndarray) -> np.ndarray:
        n = self.grid.size
        x = x.reshape(n, 6)
        a = np.einsum("jpq,jq->jp", self.A, x[:, :3])
        b = np.einsum("jpq,jq->jp", self.B, x[:, 3:])
        c = self.conv
        ah = [c.transform(a[:, q]) for q in range(3)]
        bh = [c.transform(b[:, q]) for q in range(3)]
        ce = -math.sqrt(self.mu0**3 / self.eps0)
        ch = math.sqrt(self.eps0 / self.mu0)
        out = np.empty((n, 6), dtype=complex)
        for p in range(3):
            # (n x v)_p = sum eps_{p a b} n_a v_b
            cross_b = [(f"n{i}", ce * s * bh[j]) for (q, i, j, s) in _LEVI if q == p]
            cross_a = [(f"n{i}", ch * s * ah[j]) for (q, i, j, s) in _LEVI if q == p]
            out[:, p] = c.combine([("g", ah[p])] + [(_t(p, q), -ah[q]) for q in range(3)] + cross_b)
            out[:, 3 + p] = c.combine(cross_a + [("g", self.mu0 * bh[p])]
                                      + [(_t(p, q), -self.mu0 * bh[q]) for q in range(3)])
        return out.ravel()

    def system(self, x: np.ndarray) -> np.ndarray:
        return x - self.coupling(x)


def self_cell_estimate(fields: DensityFields, k: float, mu0: float = 1.0) -> float:
    """Size of the omitted self-cell coupling relative to the identity.

    Averaging ``g (I - n n)`` over the ball of the cell volume gives
    ``(2/3) 2 pi r^2 I``; this returns the largest such term times the
    per-cell tensors, i.e. how far the zero self-cell rule is from the ball
    rule. It shrinks like the cell size squared under refinement.
    """
    r = ball_radius(fields.grid.cell_volume)
    ball = (2.0 / 3.0) * 2.0 * math.pi * r * r * k * k / (4.0 * math.pi)
    worst = 0.0
    for dens, scale in ((fields.alpha_v, 1.0), (fields.beta_tilde_v, mu0)):
        if dens is not None and len(dens):
            worst = max(worst, scale * float(np.max(np.linalg.norm(dens, ord=2, axis=(1, 2)))))
    return ball * worst


def _em_fields(fields: DensityFields) -> tuple[np.ndarray, np.ndarray]:
    n = fields.grid.size
    av = fields.alpha_v if fields.alpha_v is not None else np.zeros((n, 3, 3))
    bv = fields.beta_tilde_v if fields.beta_tilde_v is not None else np.zeros((n, 3, 3))
    return av, bv


def solve_em_continuum(
    fields: DensityFields,
    k: float,
    nu,
    polarization=None,
    *,
    eps0: float = 1.0,
    mu0: float = 1.0,
    tol: float = CONTINUUM_TOL,
    dense_limit: int = DENSE_UNKNOWNS,
) -> EMFieldSolution:
    """Nyström solve of the continuum EM equation on the cell centres of
    ``fields.grid``; 6 unknowns per node, zero self-cell coupling."""
    nu = _unit(nu)
    pol = _check_polarization(nu, polarization)
    av, bv = _em_fields(fields)
    op = _EMGridOperator(fields.grid, av, bv, k, eps0, mu0)
    nodes = fields.grid.centers
    U, info = _solve_sites(nodes, op.A, op.B, k, nu, pol, eps0, mu0, tol, "EM continuum system",
                           matvec=op.system, dense_limit=dense_limit)
    meta = {
        "self_cell": "zero",
        "self_cell_estimate": self_cell_estimate(fields, k, mu0),
        "grid": fields.grid.to_dict(),
    }
    return EMFieldSolution(nodes, U, op.A, op.B, k, nu, pol, eps0, mu0, info, meta)


def first_born_em(fields: DensityFields, k: float, nu, polarization=None, *,
                  eps0: float = 1.0, mu0: float = 1.0) -> EMFieldSolution:
    """``U_0 + K U_0`` at the grid nodes."""
    nu = _unit(nu)
    pol = _check_polarization(nu, polarization)
    av, bv = _em_fields(fields)
    op = _EMGridOperator(fields.grid, av, bv, k, eps0, mu0)
    u0 = em_plane_wave(fields.grid.centers, k, nu, pol, eps0, mu0).ravel()
    U = (u0 + op.coupling(u0)).reshape(-1, 6)
    return EMFieldSolution(fields.grid.centers, U, op.A, op.B, k, nu, pol, eps0, mu0,
                           SolveInfo("born", 0.0), {"self_cell": "zero"})
