"""Many-body self-consistent acoustic field for point-like small bodies.

Each body ``j`` at ``s_j`` radiates ``g(x, s_j) Q_j`` with
``g(x, y) = exp(ik|x-y|) / (4 pi |x-y|)``. Soft bodies carry
``Q_j = -C_j u_e(s_j)``, impedance bodies the same with
``C_j -> h|S_j| / (1 + h|S_j|/C_j)``, and hard bodies the direction-dependent
strength ``ik V_j beta_pq n_p d_q u_e + V_j lap u_e`` with the closure
``lap u_e = -k^2 u_e``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ensemble import ParticleEnsemble, check_regime
from .linsolve import DENSE_LIMIT, SolveInfo, SolverError, solve

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
_CHUNK = 512


class RegimeWarning(UserWarning):
    pass


def helmholtz_green(r: np.ndarray, k: float) -> np.ndarray:
    """``exp(ikr) / (4 pi r)``."""
    return np.exp(1j * k * r) / (4.0 * math.pi * r)


def plane_wave(points: np.ndarray, k: float, nu: np.ndarray) -> np.ndarray:
    return np.exp(1j * k * (np.atleast_2d(points) @ np.asarray(nu)))


@dataclass
class DiscreteFieldSolution:
    """Self-consistent values at the body sites.

    ``charges`` is the isotropic part of each body's strength. For hard
    bodies ``dipoles`` holds ``ik V beta grad u_e`` so that the strength seen
    from direction ``n`` is ``n . dipoles[j] + charges[j]``.
    """

    ensemble: ParticleEnsemble
    u: np.ndarray
    charges: np.ndarray
    grad: Optional[np.ndarray] = None
    dipoles: Optional[np.ndarray] = None
    info: SolveInfo = field(default_factory=lambda: SolveInfo("none", 0.0))
    regime: Optional[dict] = None

    @property
    def boundary_kind(self) -> str:
        return self.ensemble.boundary_kind

    @property
    def wavenumber(self) -> float:
        return self.ensemble.wavenumber

    def strength(self, directions: np.ndarray) -> np.ndarray:
        """Strength ``Q_j(n)`` for unit directions of shape (J, 3) or (3,)."""
        if self.dipoles is None:
            return self.charges.copy()
        n = np.broadcast_to(np.asarray(directions, float), self.dipoles.shape)
        return np.einsum("jp,jp->j", n, self.dipoles) + self.charges

    def to_dict(self) -> dict:
        bodies = []
        for j in range(len(self.u)):
            rec = {
                "position": self.ensemble.positions[j].tolist(),
                "u_e": [float(self.u[j].real), float(self.u[j].imag)],
                "Q": [float(self.charges[j].real), float(self.charges[j].imag)],
            }
            if self.grad is not None:
                rec["grad_u_e"] = [[float(g.real), float(g.imag)] for g in self.grad[j]]
                rec["Q_dipole"] = [[float(d.real), float(d.imag)] for d in self.dipoles[j]]
            bodies.append(rec)
        meta = {
            "boundary_kind": self.boundary_kind,
            "wavenumber": self.wavenumber,
            "direction": list(self.ensemble.direction),
            "solver": self.info.method,
            "residual": self.info.residual,
            "green_function": "exp(ikr)/(4 pi r)",
        }
        if self.grad is not None:
            meta["closure"] = "laplacian u_e = -k^2 u_e at body sites"
        if self.regime is not None:
            meta["regime"] = self.regime
        return {"metadata": meta, "bodies": bodies}


# ---------------------------------------------------------------------------
# Soft and impedance bodies
# ---------------------------------------------------------------------------


def _pair_green(targets: np.ndarray, sources: np.ndarray, k: float, skip_self: bool) -> np.ndarray:
    r = np.linalg.norm(targets[:, None, :] - sources[None, :, :], axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = helmholtz_green(r, k)
    if skip_self:
        g[r == 0.0] = 0.0
    return g


def _monopole_matrix(positions: np.ndarray, weights: np.ndarray, k: float) -> np.ndarray:
    """``I + G diag(w)`` with ``G_mj = g(s_m, s_j)`` for ``m != j``."""
    n = len(positions)
    mat = np.empty((n, n), dtype=complex)
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        r = np.linalg.norm(positions[lo:hi, None, :] - positions[None, :, :], axis=2)
        idx = np.arange(lo, hi)
        r[idx - lo, idx] = 1.0
        if np.any(r == 0.0):
            raise SolverError("coincident bodies make the system singular")
        block = helmholtz_green(r, k) * weights[None, :]
        block[idx - lo, idx] = 0.0
        mat[lo:hi] = block
    mat[np.diag_indices(n)] += 1.0
    return mat


def _monopole_matvec(positions: np.ndarray, weights: np.ndarray, k: float):
    def apply(v):
        out = v.astype(complex).copy()
        wv = weights * v
        for lo in range(0, len(v), _CHUNK):
            hi = min(len(v), lo + _CHUNK)
            g = _pair_green(positions[lo:hi], positions, k, skip_self=False)
            idx = np.arange(lo, hi)
            g[idx - lo, idx] = 0.0
            out[lo:hi] += g @ wv
        return out

    return apply


def _regime(ensemble: ParticleEnsemble, mode: str = "acoustic") -> Optional[dict]:
    if len(ensemble) == 0:
        return None
    diag = check_regime(ensemble, mode)  # type: ignore[arg-type]
    if not diag.ok:
        warnings.warn("; ".join(diag.messages), RegimeWarning, stacklevel=3)
    return diag.to_dict()


def _solve_monopole(ensemble: ParticleEnsemble, weights: np.ndarray, tol: float) -> DiscreteFieldSolution:
    k = ensemble.wavenumber
    pos = ensemble.positions
    u0 = plane_wave(pos, k, ensemble.nu) if len(pos) else np.zeros(0, complex)
    if len(pos) == 0:
        return DiscreteFieldSolution(ensemble, u0, np.zeros(0, complex))
    u, info = solve(
        _monopole_matvec(pos, weights, k),
        u0,
        tol=tol,
        what=f"{ensemble.boundary_kind} Foldy-Lax system",
        assemble=lambda: _monopole_matrix(pos, weights, k),
    )
    if info.residual > max(tol, RESIDUAL_TOL) * 10:
        raise SolverError(f"residual {info.residual:.3e} above tolerance")
    return DiscreteFieldSolution(ensemble, u, -weights * u, info=info)


def solve_dirichlet(ensemble: ParticleEnsemble, tol: float = RESIDUAL_TOL) -> DiscreteFieldSolution:
    """Soft bodies: ``u_m + sum_{j != m} g(s_m, s_j) C_j u_j = u_0(s_m)``."""
    if ensemble.boundary_kind != "dirichlet":
        raise ValueError(f"expected a dirichlet ensemble, got {ensemble.boundary_kind}")
    regime = _regime(ensemble)
    sol = _solve_monopole(ensemble, ensemble.capacitance, tol)
    sol.regime = regime
    return sol


def solve_impedance(ensemble: ParticleEnsemble, tol: float = RESIDUAL_TOL) -> DiscreteFieldSolution:
    """Impedance bodies: the soft system with ``C_j`` replaced by
    ``h|S_j| / (1 + h|S_j| / C_j)``."""
    if ensemble.boundary_kind != "impedance":
        raise ValueError(f"expected an impedance ensemble, got {ensemble.boundary_kind}")
    if np.any(ensemble.h < 0):
        raise ValueError("impedance h must be >= 0")
    regime = _regime(ensemble)
    sol = _solve_monopole(ensemble, ensemble.impedance_weights(), tol)
    sol.regime = regime
    return sol


# ---------------------------------------------------------------------------
# Hard bodies
# ---------------------------------------------------------------------------


def _dipole_kernels(targets: np.ndarray, sources: np.ndarray, k: float):
    """Green function pieces for every (target, source) pair.

    Returns ``g``, ``n`` (unit vector source -> target), ``dg = g (ik - 1/r)``
    and ``g / r``; pairs at zero distance get zeros.
    """
    diff = targets[:, None, :] - sources[None, :, :]
    r = np.linalg.norm(diff, axis=2)
    zero = r == 0.0
    rs = np.where(zero, 1.0, r)
    g = np.where(zero, 0.0, helmholtz_green(rs, k))
    n = diff / rs[..., None]
    g_over_r = g / rs
    dg = g * 1j * k - g_over_r
    return g, n, dg, g_over_r


def _hard_blocks(targets: np.ndarray, ens: ParticleEnsemble):
    """Coupling of target rows (u, grad u) to source unknowns (u, grad u).

    Returns an array of shape (T, 4, J, 4); row/column component 0 is u,
    1..3 the gradient.
    """
    k = ens.wavenumber
    g, n, dg, gr = _dipole_kernels(targets, ens.positions, k)
    vol = ens.volume
    mono = -k * k * vol  # coefficient of u_j in the isotropic strength
    dip = 1j * k * vol[:, None, None] * ens.beta  # (J,3,3): w_j = dip_j @ grad u_j
    t, j = g.shape
    out = np.zeros((t, 4, j, 4), dtype=complex)
    out[:, 0, :, 0] = g * mono[None, :]
    out[:, 0, :, 1:] = g[..., None] * np.einsum("tjp,jpq->tjq", n, dip)
    out[:, 1:, :, 0] = np.transpose(dg[..., None] * n * mono[None, :, None], (0, 2, 1))
    # d/dx_l [g n_p] = (dg - g/r) n_l n_p + (g/r) delta_lp
    tens = (dg - gr)[..., None, None] * n[..., :, None] * n[..., None, :]
    tens += gr[..., None, None] * np.eye(3)
    block = np.einsum("tjlp,jpq->tjlq", tens, dip)
    out[:, 1:, :, 1:] = np.transpose(block, (0, 2, 1, 3))
    return out


def _hard_matrix(ens: ParticleEnsemble) -> np.ndarray:
    j = len(ens)
    mat = np.empty((4 * j, 4 * j), dtype=complex)
    for lo in range(0, j, _CHUNK // 4):
        hi = min(j, lo + _CHUNK // 4)
        mat[4 * lo : 4 * hi] = -_hard_blocks(ens.positions[lo:hi], ens).reshape(4 * (hi - lo), 4 * j)
    mat[np.diag_indices(4 * j)] += 1.0
    return mat


def _hard_matvec(ens: ParticleEnsemble):
    j = len(ens)

    def apply(v):
        out = v.astype(complex).copy()
        for lo in range(0, j, _CHUNK // 4):
            hi = min(j, lo + _CHUNK // 4)
            blk = _hard_blocks(ens.positions[lo:hi], ens).reshape(4 * (hi - lo), 4 * j)
            out[4 * lo : 4 * hi] -= blk @ v
        return out

    return apply


def solve_neumann(ensemble: ParticleEnsemble, tol: float = RESIDUAL_TOL) -> DiscreteFieldSolution:
    """Hard bodies: coupled system for ``u_e`` and ``grad u_e`` at every site.

    Body ``j`` contributes ``g(x, s_j) [ik V_j beta_j n . grad u_j - k^2 V_j u_j]``
    at ``x``, with ``n = (x - s_j)/|x - s_j|``; the gradient equations use
    the analytic x-gradient of that expression.
    """
    if ensemble.boundary_kind != "neumann":
        raise ValueError(f"expected a neumann ensemble, got {ensemble.boundary_kind}")
    k = ensemble.wavenumber
    nu = ensemble.nu
    pos = ensemble.positions
    j = len(pos)
    u0 = plane_wave(pos, k, nu) if j else np.zeros(0, complex)
    rhs = np.zeros((j, 4), dtype=complex)
    rhs[:, 0] = u0
    rhs[:, 1:] = 1j * k * nu[None, :] * u0[:, None]
    regime = _regime(ensemble)
    if j == 0:
        return DiscreteFieldSolution(ensemble, u0, np.zeros(0, complex), np.zeros((0, 3), complex), np.zeros((0, 3), complex))
    x, info = solve(
        _hard_matvec(ensemble),
        rhs.ravel(),
        tol=tol,
        what="hard-body system",
        assemble=lambda: _hard_matrix(ensemble),
        dense_limit=DENSE_LIMIT,
    )
    x = x.reshape(j, 4)
    u, grad = x[:, 0], x[:, 1:]
    dipoles = np.einsum("jpq,jq->jp", 1j * k * ensemble.volume[:, None, None] * ensemble.beta, grad)
    charges = -k * k * ensemble.volume * u
    return DiscreteFieldSolution(ensemble, u, charges, grad, dipoles, info=info, regime=regime)


def solve_discrete(ensemble: ParticleEnsemble, tol: float = RESIDUAL_TOL) -> DiscreteFieldSolution:
    """Dispatch on ``ensemble.boundary_kind``."""
    return {
        "dirichlet": solve_dirichlet,
        "neumann": solve_neumann,
        "impedance": solve_impedance,
    }[ensemble.boundary_kind](ensemble, tol)


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------


def evaluate_field(
    solution: DiscreteFieldSolution,
    points: np.ndarray,
    safety: float = 10.0,
) -> np.ndarray:
    """Self-consistent field ``u_0(x) + sum_j g(x, s_j) Q_j(x)`` at ``points``.

    Points closer than ``safety`` body radii to any site trigger a warning;
    the formula is a far-zone expansion there.
    """
    ens = solution.ensemble
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = ens.wavenumber
    out = plane_wave(pts, k, ens.nu).astype(complex)
    if len(ens) == 0:
        return out
    too_close = 0
    for lo in range(0, len(pts), _CHUNK):
        hi = min(len(pts), lo + _CHUNK)
        diff = pts[lo:hi, None, :] - ens.positions[None, :, :]
        r = np.linalg.norm(diff, axis=2)
        too_close += int(np.sum(np.any(r <= safety * ens.radius[None, :], axis=1)))
        if np.any(r == 0.0):
            raise ValueError("field requested exactly at a body site")
        g = helmholtz_green(r, k)
        if solution.dipoles is None:
            out[lo:hi] += g @ solution.charges
        else:
            n = diff / r[..., None]
            q = np.einsum("tjp,jp->tj", n, solution.dipoles) + solution.charges[None, :]
            out[lo:hi] += np.sum(g * q, axis=1)
    if too_close:
        warnings.warn(f"{too_close} evaluation points lie within {safety} body radii of a body", RegimeWarning, stacklevel=2)
    return out


def cross_section(solution: DiscreteFieldSolution, directions: np.ndarray) -> np.ndarray:
    """Far-field amplitude ``A(n) = (1/4 pi) sum_j exp(-ik n.s_j) Q_j(n)``.

    ``u_e - u_0 ~ A(n) exp(ikr)/r`` along direction ``n``.
    """
    ens = solution.ensemble
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    if len(ens) == 0:
        return np.zeros(len(dirs), dtype=complex)
    phase = np.exp(-1j * ens.wavenumber * dirs @ ens.positions.T)  # (D, J)
    if solution.dipoles is None:
        q = np.broadcast_to(solution.charges, phase.shape)
    else:
        q = dirs @ solution.dipoles.T + solution.charges[None, :]
    return np.sum(phase * q, axis=1) / (4.0 * math.pi)
