"""
Sparse storage helpers and the conjugate-gradient solver
"""
import logging
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, Field
from scipy.sparse.linalg import LinearOperator

from src.utils.errors import NumericalError

logger = logging.getLogger(__name__)

SparseMatrix = sp.csr_matrix
Operator = Union[sp.spmatrix, LinearOperator, np.ndarray]

_MAX_RESTARTS = 4


def as_sparse_matrix(a) -> sp.csr_matrix:
    """CSR copy with sorted column indices and no explicit zeros"""
    mat = sp.csr_matrix(a, dtype=np.float64, copy=True)
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


class LinearSolveReport(BaseModel):
    """Outcome of one iterative solve"""

    iterations: int = 0
    residual_norm: float = 0.0  # relative, ||b - A x|| / ||b||
    converged: bool = True
    tolerance: float = 0.0
    energy_history: List[float] = Field(default_factory=list)

    def merged(self, other: "LinearSolveReport") -> "LinearSolveReport":
        """Combine with a later solve: iterations add up, worst residual wins"""
        return LinearSolveReport(
            iterations=self.iterations + other.iterations,
            residual_norm=max(self.residual_norm, other.residual_norm),
            converged=self.converged and other.converged,
            tolerance=max(self.tolerance, other.tolerance),
        )


def jacobi_preconditioner(a: sp.spmatrix) -> Callable[[np.ndarray], np.ndarray]:
    """Inverse diagonal scaling; zero diagonal entries are left untouched"""
    diag = np.asarray(a.diagonal(), dtype=np.float64)
    inv = np.ones_like(diag)
    nz = diag != 0.0
    inv[nz] = 1.0 / diag[nz]
    return lambda r: inv * r


def _project(x: np.ndarray) -> np.ndarray:
    return x - x.mean()


def cg_solve(
    a: Operator,
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
    preconditioner: Union[None, str, Callable[[np.ndarray], np.ndarray]] = None,
    singular: bool = False,
    record_energy: bool = False,
) -> Tuple[np.ndarray, LinearSolveReport]:
    """
    Preconditioned conjugate gradients for symmetric positive (semi-)definite systems.

    Args:
        a: Sparse matrix or LinearOperator
        b: Right-hand side
        tol: Relative residual target ||b - A x|| / ||b||
        max_iter: Iteration cap (default 10 * n)
        x0: Initial guess
        preconditioner: None, "jacobi" or a callable applying M^-1
        singular: The kernel is the constant vector. b, the iterates and the
            residuals are projected onto the mean-zero subspace and the
            returned vector has zero mean.
        record_energy: Keep phi(x_k) = 1/2 x^T A x - b^T x per iteration

    Returns:
        Tuple of the solution and a LinearSolveReport. Non-convergence is
        reported with converged=False; the caller decides what to do.
    """
    b = np.array(b, dtype=np.float64)
    n = b.size
    if max_iter is None:
        max_iter = 10 * n
    if preconditioner == "jacobi":
        precond = jacobi_preconditioner(a)
    elif callable(preconditioner):
        precond = preconditioner
    else:
        precond = None

    if singular:
        b = _project(b)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n), LinearSolveReport(tolerance=tol)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if singular:
        x = _project(x)

    def residual(x_now: np.ndarray) -> np.ndarray:
        res = b - a.dot(x_now)
        return _project(res) if singular else res

    def apply_precond(r_now: np.ndarray) -> np.ndarray:
        z_now = precond(r_now) if precond else r_now.copy()
        return _project(z_now) if singular else z_now

    energy: List[float] = []
    k = 0
    rel = np.inf
    # the recursive residual drifts from the true one; restart from the true residual
    for _restart in range(_MAX_RESTARTS):
        r = residual(x)
        if record_energy and not energy:
            energy.append(float(-0.5 * x @ (b + r)))
        rel = float(np.linalg.norm(r) / b_norm)
        if not np.isfinite(rel):
            raise NumericalError("CG produced a non-finite residual")
        if rel <= tol or k >= max_iter:
            break
        z = apply_precond(r)
        d = z.copy()
        rz = float(r @ z)
        while k < max_iter:
            ad = a.dot(d)
            dad = float(d @ ad)
            if not np.isfinite(dad):
                raise NumericalError(f"NaN/inf encountered in CG at iteration {k}")
            if dad <= 0.0:
                if dad < 0.0:
                    raise NumericalError("matrix is not positive semi-definite (negative curvature)")
                break
            alpha = rz / dad
            x += alpha * d
            r -= alpha * ad
            if singular:
                r = _project(r)
            k += 1
            if record_energy:
                energy.append(float(-0.5 * x @ (b + r)))
            r_norm = np.linalg.norm(r)
            if not np.isfinite(r_norm):
                raise NumericalError(f"NaN/inf encountered in CG at iteration {k}")
            if r_norm <= tol * b_norm:
                break
            z = apply_precond(r)
            rz_new = float(r @ z)
            d = z + (rz_new / rz) * d
            rz = rz_new

    if singular:
        x = _project(x)
    rel = float(np.linalg.norm(residual(x)) / b_norm)
    if not np.isfinite(rel):
        raise NumericalError("CG produced a non-finite solution")
    converged = rel <= tol
    if not converged:
        logger.warning("CG stopped after %d iterations with relative residual %.3e (tol %.1e)", k, rel, tol)
    else:
        logger.debug("CG converged in %d iterations, relative residual %.3e", k, rel)
    return x, LinearSolveReport(
        iterations=k, residual_norm=rel, converged=converged, tolerance=tol, energy_history=energy
    )
