"""Translation-invariant kernel sums on uniform grids.

``y_i = sum_j K(x_i - x_j) f_j`` is evaluated by zero-padded FFT convolution
(block-Toeplitz embedding into a grid twice as large along each axis), or
assembled densely for small grids.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np
import scipy.fft

from .ensemble import Grid

KernelBank = Callable[[np.ndarray, np.ndarray], Mapping[str, np.ndarray]]


def ball_radius(cell_volume: float) -> float:
    """Radius of the ball with the same volume as a grid cell."""
    return (3.0 * cell_volume / (4.0 * math.pi)) ** (1.0 / 3.0)


class GridConvolver:
    """Holds FFTs of several kernels sampled on all grid offsets.

    ``bank(offsets, r)`` receives offset vectors of shape (M, 3) and their
    lengths, and returns named kernel arrays of shape (M,) evaluated there.
    The zero offset is passed with ``r = 0``; the bank must return finite
    values for it (the self-cell rule).
    """

    def __init__(self, grid: Grid, bank: KernelBank) -> None:
        self.grid = grid
        self.shape = grid.shape
        self.padded = tuple(2 * n for n in self.shape)
        idx = [np.fft.fftfreq(m, 1.0 / m).astype(np.int64) for m in self.padded]
        # offsets beyond +-(n-1) are never used; keep them but they get ignored
        mi = np.meshgrid(*idx, indexing="ij")
        off = np.stack([m.ravel() for m in mi], axis=1).astype(float) * grid.spacing[None, :]
        r = np.linalg.norm(off, axis=1)
        values = bank(off, r)
        self.names = list(values)
        self._spatial = {name: np.asarray(v, dtype=complex).reshape(self.padded) for name, v in values.items()}
        self._hat = {name: scipy.fft.fftn(v) for name, v in self._spatial.items()}

    def transform(self, field: np.ndarray) -> np.ndarray:
        buf = np.zeros(self.padded, dtype=complex)
        nx, ny, nz = self.shape
        buf[:nx, :ny, :nz] = np.asarray(field).reshape(self.shape)
        return scipy.fft.fftn(buf)

    def apply_hat(self, name: str, field_hat: np.ndarray) -> np.ndarray:
        nx, ny, nz = self.shape
        out = scipy.fft.ifftn(self._hat[name] * field_hat)
        return out[:nx, :ny, :nz].ravel()

    def convolve(self, name: str, field: np.ndarray) -> np.ndarray:
        return self.apply_hat(name, self.transform(field))

    def combine(self, terms: list[tuple[str, np.ndarray]]) -> np.ndarray:
        """``sum_k conv(kernel_k, fhat_k)`` with one inverse FFT."""
        nx, ny, nz = self.shape
        acc = np.zeros(self.padded, dtype=complex)
        for name, fhat in terms:
            acc += self._hat[name] * fhat
        return scipy.fft.ifftn(acc)[:nx, :ny, :nz].ravel()

    def dense(self, name: str) -> np.ndarray:
        """Full matrix ``K(x_i - x_j)``."""
        n = self.grid.size
        ijk = np.stack(np.unravel_index(np.arange(n), self.shape), axis=1)
        kern = self._spatial[name]
        out = np.empty((n, n), dtype=complex)
        step = max(1, 2_000_000 // max(n, 1))
        for lo in range(0, n, step):
            hi = min(n, lo + step)
            d = (ijk[lo:hi, None, :] - ijk[None, :, :]) % np.asarray(self.padded)
            out[lo:hi] = kern[d[..., 0], d[..., 1], d[..., 2]]
        return out


def point_offsets(points: np.ndarray, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = points[:, None, :] - nodes[None, :, :]
    return diff, np.linalg.norm(diff, axis=2)
