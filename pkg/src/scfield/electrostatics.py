"""Capacitance and polarizability tensors of a single body.

The polarizability tensor is built from the convergent series

    alpha^(n)(gamma) = (2/V) sum_{m=0}^{n} (-1/(2 pi))^m
                       (gamma^(n+2) - gamma^(m+1)) / (gamma - 1) * b^(m)

with ``b^(0) = V I`` and ``b^(m)`` iterated double-surface integrals of the
``1/r`` kernel and its normal derivative. ``beta`` is ``alpha`` at
``gamma = -1``. Units: ``eps0 = 1`` unless stated, so a sphere of radius
``a`` has capacitance ``4 pi a``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .geometry import (
    RuleName,
    SurfaceMesh,
    collocation_single_layer,
    galerkin_single_layer,
    double_layer_matrix,
)

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 4


class ElectrostaticsError(RuntimeError):
    pass


def capacitance(mesh: SurfaceMesh, eps0: float = 1.0) -> float:
    """Capacitance of the perfect conductor bounded by ``mesh``.

    Solves ``int sigma(s') / (4 pi |s - s'|) ds' = 1`` by centroid
    collocation with piecewise-constant density and returns the total charge,
    scaled by ``eps0``.
    """
    mat = collocation_single_layer(mesh) / (4.0 * math.pi)
    try:
        lu = scipy.linalg.lu_factor(mat, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ElectrostaticsError(f"capacitance system could not be factorized: {exc}") from exc
    if np.any(np.abs(np.diag(lu[0])) < 1e-14 * np.abs(lu[0]).max()):
        raise ElectrostaticsError("singular collocation matrix: degenerate mesh")
    sigma = scipy.linalg.lu_solve(lu, np.ones(mesh.n_triangles), check_finite=False)
    return float(eps0 * sigma @ mesh.areas)


def richardson(values: Sequence[float], ratio: float = 2.0) -> tuple[float, float]:
    """Extrapolate three successive refinements ``f(h), f(h/r), f(h/r^2)``.

    Returns ``(limit, observed_order)``.
    """
    f0, f1, f2 = values[-3:]
    d1, d2 = f1 - f0, f2 - f1
    if d1 == 0.0 or d2 == 0.0 or d1 * d2 < 0:
        return float(f2), float("nan")
    order = math.log(d1 / d2) / math.log(ratio)
    factor = ratio**order
    return float(f2 + d2 / (factor - 1.0)), float(order)


class SeriesOperators:
    """Assembled surface operators reused across ``b^(m)`` orders.

    The iterated normal-derivative kernel is applied through its adjoint (the
    double layer, exact per triangle via solid angles) acting on the
    triangle-averaged potential of ``N_p``:
    ``b^(m)_pq = sum_i A_i N_q(i) [D^(m-1) phi_p]_i``.
    """

    def __init__(self, mesh: SurfaceMesh, rule: RuleName = "3-point") -> None:
        self.mesh = mesh
        self.newton = galerkin_single_layer(mesh, rule=rule)
        self.double_layer = double_layer_matrix(mesh)
        # triangle averages of the single-layer potential of N_p, one column per p
        self._chain = [self.newton @ mesh.normals / mesh.areas[:, None]]

    def b_tensor(self, m: int) -> np.ndarray:
        if m < 0:
            raise ValueError("m must be >= 0")
        if m == 0:
            return self.mesh.volume * np.eye(3)
        while len(self._chain) < m:
            self._chain.append(self.double_layer @ self._chain[-1])
        weighted = self.mesh.normals * self.mesh.areas[:, None]
        # rows p, columns q
        return self._chain[m - 1].T @ weighted


def b_tensor(mesh: SurfaceMesh, m: int, operators: Optional[SeriesOperators] = None) -> np.ndarray:
    """The 3x3 tensor ``b^(m)`` of ``mesh``."""
    if m == 0:
        return mesh.volume * np.eye(3)
    ops = operators if operators is not None else SeriesOperators(mesh)
    return ops.b_tensor(m)


def _series_term(b: np.ndarray, m: int, n: int, gamma: Union[float, complex], volume: float) -> np.ndarray:
    """``(2/V) (-1/2 pi)^m (gamma^(n+2) - gamma^(m+1)) / (gamma - 1) b^(m)``.

    Written as one division by ``2^(m-1) pi^m V`` so that the n = 1,
    gamma = -1 case reproduces ``-b^(1) / (pi V)`` bit for bit.
    """
    ratio = (gamma ** (n + 2) - gamma ** (m + 1)) / (gamma - 1.0)
    sign = -1.0 if m % 2 else 1.0
    return (b * (sign * ratio)) / ((2.0 ** (m - 1) * math.pi**m) * volume)


def _check_gamma(gamma: Union[float, complex]) -> None:
    if isinstance(gamma, complex):
        # lossy media (complex permittivity) give |gamma| <= 1 off the real axis
        if abs(gamma) > 1.0 or gamma == 1.0:
            raise ValueError(f"complex gamma must satisfy |gamma| <= 1 and gamma != 1, got {gamma}")
    elif not -1.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [-1, 1), got {gamma}")


def alpha_from_tensors(
    b_tensors: Sequence[np.ndarray], volume: float, gamma: Union[float, complex], n: int
) -> np.ndarray:
    """Evaluate the order-``n`` polarizability from precomputed ``b^(0..n)``.

    A complex ``gamma`` returns a complex tensor.
    """
    _check_gamma(gamma)
    if n < 1:
        raise ValueError("series order n must be >= 1")
    if len(b_tensors) < n + 1:
        raise ValueError(f"need b^(0)..b^({n}), got {len(b_tensors)} tensors")
    out = np.zeros((3, 3), dtype=complex if isinstance(gamma, complex) else float)
    for m in range(n + 1):
        out += _series_term(np.asarray(b_tensors[m]), m, n, gamma, volume)
    return out


def alpha_series(
    mesh: SurfaceMesh, gamma: float, n: int = DEFAULT_ORDER, operators: Optional[SeriesOperators] = None
) -> np.ndarray:
    """Electric polarizability tensor ``alpha^(n)(gamma)`` (dimensionless)."""
    if not -1.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [-1, 1), got {gamma}")
    ops = operators if operators is not None else SeriesOperators(mesh)
    tensors = [ops.b_tensor(m) for m in range(n + 1)]
    return alpha_from_tensors(tensors, mesh.volume, gamma, n)


def beta_tensor(mesh: SurfaceMesh, n: int = DEFAULT_ORDER, operators: Optional[SeriesOperators] = None) -> np.ndarray:
    """Magnetic polarizability ``beta^(n) = alpha^(n)(-1)``."""
    return alpha_series(mesh, -1.0, n, operators=operators)


@dataclass
class ConvergenceEstimate:
    ratio: float
    reliable: bool
    differences: list[float] = field(default_factory=list)


def convergence_estimate(b_tensors: Sequence[np.ndarray], gamma: float, volume: Optional[float] = None) -> ConvergenceEstimate:
    """Fit the geometric ratio ``q`` of successive corrections
    ``||alpha^(n+1) - alpha^(n)||``.

    At ``gamma = -1`` the partial sums alternate between two interleaved
    sequences, so differences are taken two orders apart there.
    """
    if volume is None:
        volume = float(b_tensors[0][0, 0])
    top = len(b_tensors) - 1
    if top < 3:
        raise ValueError("need at least b^(0)..b^(3) for a convergence estimate")
    alphas = [alpha_from_tensors(b_tensors, volume, gamma, n) for n in range(1, top + 1)]
    step = 2 if gamma == -1.0 else 1
    diffs = [float(np.linalg.norm(alphas[i + step] - alphas[i])) for i in range(len(alphas) - step)]
    scale = max(float(np.linalg.norm(alphas[-1])), 1e-300)
    if all(d <= 1e-14 * scale for d in diffs) or gamma == 0.0:
        return ConvergenceEstimate(0.0, True, diffs)
    if len(diffs) < 2:
        return ConvergenceEstimate(float("nan"), False, diffs)
    ratios = [diffs[i + 1] / diffs[i] for i in range(len(diffs) - 1) if diffs[i] > 0]
    monotone = all(diffs[i + 1] <= diffs[i] for i in range(len(diffs) - 1))
    q = float(np.exp(np.mean(np.log(np.maximum(ratios, 1e-300))))) ** (1.0 / step)
    return ConvergenceEstimate(q, monotone and 0.0 < q < 1.0, diffs)


@dataclass
class PolarizabilityResult:
    capacitance: float
    volume: float
    area: float
    radius: float
    b_tensors: list[np.ndarray]
    alpha: np.ndarray
    beta: np.ndarray
    gamma: float
    order: int
    convergence_ratio: float
    convergence_reliable: bool = True

    def to_dict(self) -> dict:
        return {
            "capacitance": self.capacitance,
            "volume": self.volume,
            "area": self.area,
            "radius": self.radius,
            "b": [b.tolist() for b in self.b_tensors],
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma,
            "order": self.order,
            "convergence_ratio": self.convergence_ratio,
            "convergence_reliable": self.convergence_reliable,
        }


def polarizability(mesh: SurfaceMesh, gamma: float = 0.0, order: int = DEFAULT_ORDER, eps0: float = 1.0) -> PolarizabilityResult:
    """Capacitance, ``b^(0..order)``, ``alpha^(order)(gamma)`` and ``beta^(order)``."""
    if order < 1:
        raise ValueError("order must be >= 1")
    ops = SeriesOperators(mesh)
    depth = max(order, 3)
    tensors = [ops.b_tensor(m) for m in range(depth + 1)]
    vol = mesh.volume
    alpha = alpha_from_tensors(tensors, vol, gamma, order)
    beta = alpha_from_tensors(tensors, vol, -1.0, order)
    est = convergence_estimate(tensors, gamma, vol)
    if not est.reliable:
        logger.warning("polarizability series convergence estimate flagged unreliable (q=%s)", est.ratio)
    return PolarizabilityResult(
        capacitance=capacitance(mesh, eps0=eps0),
        volume=vol,
        area=mesh.area,
        radius=mesh.radius,
        b_tensors=tensors[: order + 1],
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        order=order,
        convergence_ratio=est.ratio,
        convergence_reliable=est.reliable,
    )
