"""
Homogenized Darcy problem on the unperforated rectangle:

    (eta0 / 2) u = A (f - grad p),   div u = 0,   u.n = 0 on the boundary

The pressure solves the pure-Neumann system div(A grad p) = div(A f) by
conjugate gradients in the mean-zero subspace; u is then evaluated on faces.
"""
import logging
import math
from typing import Tuple, Union

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.grid.fields import GridSpec, ScalarField, StaggeredVectorField
from src.grid.linalg import LinearSolveReport, cg_solve
from src.grid.operators import operators_for
from src.solvers.cell_problem import PermeabilityTensor
from src.utils.errors import NumericalError, SolverError, StructuralError

logger = logging.getLogger(__name__)


class DarcyProblem(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    A: PermeabilityTensor
    eta0: float = Field(gt=0)
    f: StaggeredVectorField
    grid: GridSpec
    tol: float = Field(default=1e-10, gt=0)
    max_iter: int = Field(default=20000, ge=1)

    @model_validator(mode="after")
    def _check_data(self) -> "DarcyProblem":
        if self.grid.periodic_x or self.grid.periodic_y:
            raise ValueError("the Darcy problem is posed on a non-periodic grid")
        if self.f.grid != self.grid:
            raise StructuralError("forcing field is built on a different grid than the problem")
        if not self.A.is_spd():
            raise ValueError(f"permeability tensor is not symmetric positive definite: {self.A.entries}")
        return self


class DarcyResidual(BaseModel):
    momentum: float = 0.0
    mass: float = 0.0
    flux: float = 0.0

    def worst(self) -> float:
        return max(self.momentum, self.mass, self.flux)


class DarcySolution(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    u: StaggeredVectorField
    p: ScalarField
    report: LinearSolveReport
    residuals: DarcyResidual = Field(default_factory=DarcyResidual)


def permeability_operator(grid: GridSpec, a: PermeabilityTensor) -> sp.csr_matrix:
    """
    A acting on face vectors.

    Diagonal entries act componentwise; the off-diagonal entries need the
    other component averaged onto the face. Boundary faces are zeroed on
    both sides, which imposes u.n = 0 and keeps the operator symmetric.
    """
    ops = operators_for(grid)
    s = a.symmetric()
    p_int = sp.diags(ops.interior_faces.astype(float))
    blocks = sp.bmat(
        [
            [s[0, 0] * sp.identity(ops.n_u), s[0, 1] * ops.v_to_u],
            [s[1, 0] * ops.u_to_v, s[1, 1] * sp.identity(ops.n_v)],
        ],
        format="csr",
    )
    return (p_int @ blocks @ p_int).tocsr()


def _l2(vec: np.ndarray, vol: float) -> float:
    return math.sqrt(float(vec @ vec) * vol)


def darcy_residual(problem: DarcyProblem, solution: DarcySolution) -> DarcyResidual:
    """L2 norms of the momentum defect, the divergence and the boundary normal flux"""
    grid = problem.grid
    ops = operators_for(grid)
    a_op = permeability_operator(grid, problem.A)
    u = solution.u.to_flat()
    p = solution.p.to_flat()
    momentum = 0.5 * problem.eta0 * u - a_op @ (problem.f.to_flat() - ops.gradient @ p)
    momentum[ops.boundary_faces] = 0.0
    boundary = u[ops.boundary_faces]
    face_length = min(grid.hx, grid.hy)
    return DarcyResidual(
        momentum=_l2(momentum, grid.cell_volume),
        mass=_l2(ops.divergence @ u, grid.cell_volume),
        flux=math.sqrt(float(boundary @ boundary) * face_length),
    )


def solve_darcy(problem: DarcyProblem) -> DarcySolution:
    grid = problem.grid
    ops = operators_for(grid)
    a_op = permeability_operator(grid, problem.A)
    f = problem.f.to_flat()
    system = (-(ops.divergence @ a_op @ ops.gradient)).tocsr()
    rhs = -(ops.divergence @ (a_op @ f))
    # compatibility holds up to roundoff because D annihilates constants
    if abs(rhs.sum()) > 1e-8 * max(np.abs(rhs).sum(), 1.0):
        raise NumericalError(f"incompatible Neumann right-hand side (sum {rhs.sum():.3e})")
    p, report = cg_solve(
        system,
        rhs,
        tol=problem.tol,
        max_iter=problem.max_iter,
        preconditioner="jacobi",
        singular=True,
    )
    if not report.converged:
        raise SolverError(f"Darcy pressure CG stalled at relative residual {report.residual_norm:.3e}", report)
    u = (2.0 / problem.eta0) * (a_op @ (f - ops.gradient @ p))
    solution = DarcySolution(
        u=StaggeredVectorField.from_flat(grid, u),
        p=ScalarField.from_flat(grid, p),
        report=report,
    )
    solution.residuals = darcy_residual(problem, solution)
    logger.debug("Darcy solve: %d CG iterations, residuals %s", report.iterations, solution.residuals)
    return solution


def darcy_time_integrals(solution: DarcySolution, t: float) -> Tuple[StaggeredVectorField, ScalarField]:
    """(t u, t p): the time-integrated limit pair for a time-independent force"""
    return solution.u * t, solution.p * t


def rotate_quarter_turn(field: Union[ScalarField, StaggeredVectorField]):
    """Rotate a field on a square wall-bounded grid by 90 degrees counter-clockwise"""
    grid = field.grid
    if grid.nx != grid.ny or grid.lx != grid.ly or grid.periodic_x or grid.periodic_y:
        raise StructuralError("quarter turns need a square grid with walls on both axes")
    n = grid.nx
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    if isinstance(field, ScalarField):
        return ScalarField(grid, field.values[j, n - 1 - i])
    iu = np.arange(n + 1)[:, None]
    u_new = -field.v[j, n - iu]
    v_new = field.u[np.arange(n + 1)[None, :], n - 1 - i]
    return StaggeredVectorField(grid, u_new, v_new)
