"""Discrete-versus-continuum comparison for soft media.

A target capacitance density ``c(y)`` on a box is realized by ensembles of
``J`` point-like soft bodies: one body per cell of a near-cubic
stratification, jittered uniformly inside the cell, carrying
``C_j = c(s_j) |R| / J``. The seed-averaged discrete field at probe points
is compared with the continuum solution for ``c``.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .acoustic_continuum import RESIDUAL_TOL, solve_soft
from .acoustic_discrete import RegimeWarning, evaluate_field, solve_dirichlet
from .ensemble import Box, DensityFields, Grid, density_ensemble, strata_shape, stratified_positions

logger = logging.getLogger(__name__)

DEFAULT_SEPARATION_FRACTION = 0.3


def gaussian_density(amplitude: float, width: float, center: Sequence[float] = (0.0, 0.0, 0.0)):
    c = np.asarray(center, float)

    def density(x: np.ndarray) -> np.ndarray:
        return amplitude * np.exp(-np.sum((np.atleast_2d(x) - c) ** 2, axis=1) / (2.0 * width**2))

    return density


def face_probes(region: Box, offset: float, samples: int = 13, margin: float = 0.1) -> np.ndarray:
    """Square probe grids on planes ``offset`` outside the region: both
    faces normal to the last axis and the upper face normal to the first.

    Each grid spans the region's extent shrunk by ``margin`` on each side.
    """
    if offset <= 0:
        raise ValueError("probe offset must be positive")
    lo, hi = region.lo, region.hi
    pad = margin * region.size

    def square(a, b):
        s = np.linspace(lo[a] + pad[a], hi[a] - pad[a], samples)
        t = np.linspace(lo[b] + pad[b], hi[b] - pad[b], samples)
        return np.stack(np.meshgrid(s, t, indexing="ij"), axis=-1).reshape(-1, 2)

    planes = []
    for value in (hi[2] + offset, lo[2] - offset):
        st = square(0, 1)
        planes.append(np.column_stack([st[:, 0], st[:, 1], np.full(len(st), value)]))
    st = square(1, 2)
    planes.append(np.column_stack([np.full(len(st), hi[0] + offset), st[:, 0], st[:, 1]]))
    return np.concatenate(planes)


@dataclass
class HomogenizationReport:
    counts: list[int]
    seeds: list[int]
    distances: list[float]
    grid_shape: tuple[int, int, int]
    wavenumber: float
    direction: list[float]
    continuum_residual: float
    seconds: float
    per_seed: dict[int, list[float]] = field(default_factory=dict)

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.distances, self.distances[1:]))

    def to_dict(self) -> dict:
        return {
            "counts": self.counts,
            "seeds": self.seeds,
            "relative_l2_distance": self.distances,
            "monotone_decrease": self.monotone,
            "grid": list(self.grid_shape),
            "wavenumber": self.wavenumber,
            "direction": self.direction,
            "continuum_residual": self.continuum_residual,
            "placement": "stratified jitter, C_j = c(s_j)|R|/J",
        }


def realize(density: Callable[[np.ndarray], np.ndarray], region: Box, count: int, seed: int, k: float, nu,
            separation_fraction: float = DEFAULT_SEPARATION_FRACTION):
    """One stratified soft ensemble representing ``density``."""
    spacing = (region.volume / count) ** (1.0 / 3.0)
    pos = stratified_positions(region, count, separation_fraction * spacing, seed)
    return density_ensemble(pos, density, region, wavenumber=k, direction=tuple(nu))


def compare_soft(
    density: Callable[[np.ndarray], np.ndarray],
    region: Box,
    counts: Sequence[int],
    seeds: Sequence[int],
    k: float,
    nu,
    grid_shape: Sequence[int],
    probes: np.ndarray,
    separation_fraction: float = DEFAULT_SEPARATION_FRACTION,
    tol: float = RESIDUAL_TOL,
) -> HomogenizationReport:
    """Relative L2 distance at ``probes`` between the seed-averaged discrete
    field and the continuum field, for every body count."""
    start = time.perf_counter()
    nu = np.asarray(nu, float) / np.linalg.norm(nu)
    grid = Grid(region, tuple(int(n) for n in grid_shape))
    fields = DensityFields.from_functions(grid, capacitance=density)
    cont = solve_soft(fields, k, nu, tol=tol)
    reference = cont.evaluate(probes)
    norm = np.linalg.norm(reference)
    distances = []
    per_seed: dict[int, list[float]] = {}
    for count in counts:
        logger.info("homogenization: J=%d, strata %s", count, strata_shape(region, count))
        acc = np.zeros(len(probes), dtype=complex)
        per_seed[count] = []
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RegimeWarning)
            for seed in seeds:
                ens = realize(density, region, count, seed, k, nu, separation_fraction)
                u = evaluate_field(solve_dirichlet(ens), probes)
                per_seed[count].append(float(np.linalg.norm(u - reference) / norm))
                acc += u
        # one line per body count instead of one warning per seed
        regime = sorted({str(w.message) for w in caught if issubclass(w.category, RegimeWarning)})
        if regime:
            logger.warning("J=%d: %d regime warning(s), e.g. %s", count, len(regime), regime[0])
        acc /= len(seeds)
        distances.append(float(np.linalg.norm(acc - reference) / norm))
    return HomogenizationReport(
        counts=[int(c) for c in counts],
        seeds=[int(s) for s in seeds],
        distances=distances,
        grid_shape=grid.shape,
        wavenumber=k,
        direction=nu.tolist(),
        continuum_residual=cont.info.residual,
        seconds=time.perf_counter() - start,
        per_seed=per_seed,
    )


def probe_offset(region: Box) -> float:
    """Default probe distance from the region: a fifth of its smallest side."""
    return float(region.size.min()) / 5.0
