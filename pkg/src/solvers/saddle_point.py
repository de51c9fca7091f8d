"""
Uzawa iteration on the pressure Schur complement.

Solves  K u - B^T p = g,  B u = 0  with K symmetric positive definite and
the pressure in the mean-zero subspace. The outer iteration is CG on
S = B K^-1 B^T; every application of S needs one inner solve with K.
"""
import logging
from typing import Literal, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, splu

from src.grid.linalg import LinearSolveReport, as_sparse_matrix, cg_solve
from src.utils.errors import SolverError

logger = logging.getLogger(__name__)

InnerSolver = Literal["direct", "cg"]


class SaddlePointSystem:
    """Stokes-type saddle-point system with cached inner solver"""

    def __init__(
        self,
        k: sp.spmatrix,
        b: sp.spmatrix,
        inner_solver: InnerSolver = "direct",
        inner_tol: float = 1e-13,
        max_iter: int = 20000,
    ):
        self.k = as_sparse_matrix(k)
        self.b = as_sparse_matrix(b)
        self.bt = self.b.T.tocsr()
        self.inner_solver = inner_solver
        self.inner_tol = inner_tol
        self.max_iter = max_iter
        self.inner_iterations = 0
        self._lu = None
        if inner_solver == "direct":
            # K is symmetric positive definite: no pivoting, symmetric ordering
            self._lu = splu(
                self.k.tocsc(),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )

    def solve_velocity(self, rhs: np.ndarray) -> np.ndarray:
        """Apply K^-1"""
        if self._lu is not None:
            return self._lu.solve(rhs)
        x, report = cg_solve(self.k, rhs, tol=self.inner_tol, max_iter=self.max_iter, preconditioner="jacobi")
        self.inner_iterations += report.iterations
        if not report.converged:
            raise SolverError("inner velocity solve did not converge", report)
        return x

    def schur_operator(self) -> LinearOperator:
        n = self.b.shape[0]
        return LinearOperator((n, n), matvec=lambda p: self.b @ self.solve_velocity(self.bt @ p), dtype=np.float64)

    def solve(
        self,
        g: np.ndarray,
        p0: Optional[np.ndarray] = None,
        tol: float = 1e-12,
    ) -> Tuple[np.ndarray, np.ndarray, LinearSolveReport]:
        """
        Solve for (u, p).

        Returns:
            Velocity unknowns, mean-zero pressure and the outer CG report
            (its residual is the relative divergence of u).
        """
        u_free = self.solve_velocity(g)
        rhs = -(self.b @ u_free)
        p, report = cg_solve(
            self.schur_operator(),
            rhs,
            tol=tol,
            max_iter=self.max_iter,
            x0=p0,
            singular=True,
        )
        if not report.converged:
            raise SolverError(
                f"pressure Schur iteration stalled at relative residual {report.residual_norm:.3e}", report
            )
        u = self.solve_velocity(g + self.bt @ p)
        logger.debug("Uzawa: %d outer iterations, residual %.2e", report.iterations, report.residual_norm)
        return u, p, report
