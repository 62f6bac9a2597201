"""Dense-or-Krylov linear solves with residual reporting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, gmres

logger = logging.getLogger(__name__)

DENSE_LIMIT = 4096


class SolverError(RuntimeError):
    """Raised when a linear system is singular or an iteration stalls."""

    def __init__(self, message: str, residuals: Optional[list[float]] = None) -> None:
        super().__init__(message)
        self.residuals = residuals or []


@dataclass
class SolveInfo:
    method: str
    residual: float
    iterations: int = 0
    history: list[float] = field(default_factory=list)


def relative_residual(apply: Callable[[np.ndarray], np.ndarray], x: np.ndarray, rhs: np.ndarray) -> float:
    denom = np.linalg.norm(rhs)
    if denom == 0.0:
        return float(np.linalg.norm(apply(x)))
    return float(np.linalg.norm(apply(x) - rhs) / denom)


def solve_dense(matrix: np.ndarray, rhs: np.ndarray, what: str = "system") -> tuple[np.ndarray, SolveInfo]:
    if matrix.shape[0] == 0:
        return rhs.copy(), SolveInfo("dense", 0.0)
    try:
        lu, piv = scipy.linalg.lu_factor(matrix, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"{what}: factorization failed ({exc})") from exc
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-13 * max(diag.max(), 1.0):
        raise SolverError(f"{what}: matrix is numerically singular")
    x = scipy.linalg.lu_solve((lu, piv), rhs)
    res = relative_residual(lambda v: matrix @ v, x, rhs)
    return x, SolveInfo("dense", res)


def solve_krylov(
    apply: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    tol: float,
    what: str = "system",
    restart: int = 60,
    maxiter: int = 200,
) -> tuple[np.ndarray, SolveInfo]:
    n = len(rhs)
    op = LinearOperator((n, n), matvec=apply, dtype=complex)
    history: list[float] = []

    def record(rk):
        history.append(float(rk))

    x, status = gmres(op, rhs, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter,
                      callback=record, callback_type="pr_norm")
    res = relative_residual(apply, x, rhs)
    if status != 0 and res > 10 * tol:
        raise SolverError(f"{what}: GMRES did not converge (relative residual {res:.3e})", history)
    return x, SolveInfo("gmres", res, iterations=len(history), history=history)


def solve(
    system: Union[np.ndarray, Callable[[np.ndarray], np.ndarray]],
    rhs: np.ndarray,
    tol: float = 1e-10,
    what: str = "system",
    dense_limit: int = DENSE_LIMIT,
    assemble: Optional[Callable[[], np.ndarray]] = None,
) -> tuple[np.ndarray, SolveInfo]:
    """Solve ``A x = rhs``.

    ``system`` is a matrix or a matvec callable. When only a matvec is given
    and ``assemble`` is provided, systems up to ``dense_limit`` unknowns are
    assembled and factorized; larger ones go to restarted GMRES.
    """
    rhs = np.asarray(rhs, dtype=complex)
    if isinstance(system, np.ndarray):
        if len(rhs) <= dense_limit:
            return solve_dense(system, rhs, what)
        return solve_krylov(lambda v: system @ v, rhs, tol, what)
    if assemble is not None and len(rhs) <= dense_limit:
        return solve_dense(assemble(), rhs, what)
    return solve_krylov(system, rhs, tol, what)
