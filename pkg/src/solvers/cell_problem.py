"""
Periodic Stokes cell problem and the permeability tensor.

For each direction i the penalized system

    -Lap w + grad pi + kappa^-1 chi_solid w = e_i,   div w = 0

is solved on the periodic unit cell; A_ij is the cell integral of the j-th
component of w^i.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.geometry.holes import DomainSpec, HoleShape
from src.geometry.masks import SolidMask, build_cell_mask
from src.grid.fields import ScalarField, StaggeredVectorField
from src.grid.linalg import LinearSolveReport
from src.grid.operators import divergence, operators_for
from src.solvers.saddle_point import InnerSolver, SaddlePointSystem
from src.utils.errors import (
    ConfigurationError,
    DegenerateProblemError,
    StructuralError,
)

logger = logging.getLogger(__name__)

DEFAULT_PENALTY_FACTOR = 1e-8  # kappa = factor * h^2


class CellConfig(BaseModel):
    """Discretization and solver controls of one cell problem"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mask: SolidMask
    penalty: Optional[float] = Field(default=None, gt=0)
    tol: float = Field(default=1e-10, gt=0, le=1e-4)
    max_iter: int = Field(default=20000, ge=1)
    inner_solver: InnerSolver = "direct"

    @model_validator(mode="after")
    def _check_periodic(self) -> "CellConfig":
        g = self.mask.grid
        if not (g.periodic_x and g.periodic_y):
            raise ValueError("the cell problem needs a mask on a periodic grid")
        return self

    @property
    def kappa(self) -> float:
        if self.penalty is not None:
            return self.penalty
        return DEFAULT_PENALTY_FACTOR * self.mask.grid.hx * self.mask.grid.hy


class CellSolution(BaseModel):
    """(w^i, pi^i) for one forcing direction"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    direction: int = Field(ge=1, le=2)
    w: StaggeredVectorField
    pi: ScalarField
    residuals: LinearSolveReport
    mask: SolidMask
    kappa: float
    divergence_norm: float = 0.0


class PermeabilityTensor(BaseModel):
    """2x2 matrix A with A_ij = integral of w^i_j over Q0"""

    model_config = ConfigDict(frozen=True)

    entries: Tuple[Tuple[float, float], Tuple[float, float]]

    @classmethod
    def from_matrix(cls, a) -> "PermeabilityTensor":
        a = np.asarray(a, dtype=float)
        return cls(entries=((float(a[0, 0]), float(a[0, 1])), (float(a[1, 0]), float(a[1, 1]))))

    @classmethod
    def isotropic(cls, value: float) -> "PermeabilityTensor":
        return cls.from_matrix(value * np.eye(2))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.entries, dtype=float)

    def symmetric(self) -> np.ndarray:
        a = self.matrix
        return 0.5 * (a + a.T)

    def asymmetry(self) -> float:
        """|A12 - A21| relative to the largest diagonal entry"""
        a = self.matrix
        return float(abs(a[0, 1] - a[1, 0]) / max(a[0, 0], a[1, 1]))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.symmetric())

    def is_spd(self, sym_tol: float = 1e-6) -> bool:
        return self.asymmetry() <= sym_tol and bool(np.all(self.eigenvalues() > 0))


class CellProblem:
    """Assembled cell system; both directions share one factorization"""

    def __init__(self, config: CellConfig):
        mask = config.mask
        if mask.n_solid() == 0:
            raise DegenerateProblemError(
                "cell without a hole: constant forcing has no periodic Stokes solution"
            )
        if mask.n_solid() == mask.grid.n_cells:
            raise DegenerateProblemError("cell has no fluid cells")
        self.config = config
        self.grid = mask.grid
        self.ops = operators_for(self.grid)
        self.kappa = config.kappa
        self.solid_faces = mask.solid_faces()
        self.fluid = mask.fluid_cells()
        self.k = (-self.ops.laplacian + sp.diags(self.solid_faces.astype(float) / self.kappa)).tocsr()
        self.b = self.ops.divergence[self.fluid]
        self.system = SaddlePointSystem(
            self.k, self.b, inner_solver=config.inner_solver, max_iter=config.max_iter
        )

    def forcing(self, direction: int) -> np.ndarray:
        e = np.zeros(self.grid.n_faces)
        if direction == 1:
            e[: self.ops.n_u] = 1.0
        else:
            e[self.ops.n_u :] = 1.0
        return e

    def solve(self, direction: int) -> CellSolution:
        if direction not in (1, 2):
            raise ConfigurationError(f"direction must be 1 or 2, got {direction}")
        w_vec, pi_fluid, report = self.system.solve(self.forcing(direction), tol=self.config.tol)
        pi = np.zeros(self.grid.n_cells)
        pi[self.fluid] = pi_fluid
        w = StaggeredVectorField.from_flat(self.grid, w_vec)
        div = divergence(w).values.ravel()
        div_norm = math.sqrt(np.sum(div[self.fluid] ** 2) * self.grid.cell_volume)
        logger.info(
            "cell problem e_%d on %dx%d: %d iterations, residual %.2e",
            direction, self.grid.nx, self.grid.ny, report.iterations, report.residual_norm,
        )
        return CellSolution(
            direction=direction,
            w=w,
            pi=ScalarField.from_flat(self.grid, pi),
            residuals=report,
            mask=self.config.mask,
            kappa=self.kappa,
            divergence_norm=div_norm,
        )

    def energy_identity_defect(self, sol: CellSolution) -> float:
        """|<grad w, grad w> + kappa^-1 <chi w, w> - A_ii| / A_ii"""
        w = sol.w.to_flat()
        vol = self.grid.cell_volume
        energy = float(w @ (self.k @ w)) * vol
        a_ii = float(w @ self.forcing(sol.direction)) * vol
        return abs(energy - a_ii) / abs(a_ii)


def solve_cell(direction: int, config: CellConfig) -> CellSolution:
    return CellProblem(config).solve(direction)


def assemble_permeability(solutions: Sequence[CellSolution]) -> PermeabilityTensor:
    by_direction = {s.direction: s for s in solutions}
    if sorted(by_direction) != [1, 2] or len(solutions) != 2:
        raise StructuralError("need exactly one cell solution per direction")
    if by_direction[1].mask != by_direction[2].mask:
        raise StructuralError("cell solutions were computed on different masks")
    vol = by_direction[1].w.grid.cell_volume
    a = np.zeros((2, 2))
    for i in (1, 2):
        w = by_direction[i].w
        a[i - 1, 0] = w.u.sum() * vol
        a[i - 1, 1] = w.v.sum() * vol
    return PermeabilityTensor.from_matrix(a)


def solve_permeability(config: CellConfig) -> Tuple[PermeabilityTensor, List[CellSolution]]:
    problem = CellProblem(config)
    solutions = [problem.solve(1), problem.solve(2)]
    return assemble_permeability(solutions), solutions


def permeability_for_hole(
    hole: HoleShape,
    n: int,
    tol: float = 1e-10,
    penalty: Optional[float] = None,
    inner_solver: InnerSolver = "direct",
) -> Tuple[PermeabilityTensor, List[CellSolution]]:
    config = CellConfig(mask=build_cell_mask(hole, n), tol=tol, penalty=penalty, inner_solver=inner_solver)
    return solve_permeability(config)


def _restrict_cell(sol: CellSolution, cpe: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = sol.w.grid.nx
    if n % cpe:
        raise ConfigurationError(f"cell grid n={n} is not a multiple of cells_per_eps={cpe}")
    m = n // cpe
    if m == 1:
        return sol.w.u.copy(), sol.w.v.copy(), sol.pi.values.copy()
    # coarse faces coincide with every m-th fine face; average along the face
    u = sol.w.u[::m, :].reshape(cpe, cpe, m).mean(axis=2)
    v = sol.w.v[:, ::m].reshape(cpe, m, cpe).mean(axis=1)
    pi = sol.pi.values.reshape(cpe, m, cpe, m).mean(axis=(1, 3))
    return u, v, pi


def rescale_cell_function(
    sol: CellSolution,
    eps: float,
    target: DomainSpec,
    collar: bool = True,
) -> Tuple[StaggeredVectorField, ScalarField]:
    """
    Tile w^i(x / eps) and pi^i(x / eps) over the target domain.

    With ``collar`` the tiled fields vanish outside the epsilon-cells of
    K_eps: a face keeps its value only if both adjacent grid cells lie in
    K_eps cells. Without it the periodic extension covers the whole grid.
    """
    if abs(eps - target.epsilon) > 1e-12 * max(1.0, eps):
        raise ConfigurationError(f"epsilon {eps} does not match target domain epsilon {target.epsilon}")
    cpe = target.cells_per_eps
    u_c, v_c, pi_c = _restrict_cell(sol, cpe)
    grid = target.grid()
    half = cpe // 2
    nx_eps, ny_eps = target.eps_cells()

    def local(index: np.ndarray) -> np.ndarray:
        return (index + half) % cpe

    def in_k(cells: np.ndarray, n_eps: int, n_cells: int) -> np.ndarray:
        if not collar:
            return np.ones(cells.shape, dtype=bool)
        k = (cells + half) // cpe
        return (cells >= 0) & (cells < n_cells) & (k >= 1) & (k <= n_eps - 1)

    cx = np.arange(grid.nx)
    cy = np.arange(grid.ny)
    fx = np.arange(grid.nx + 1)
    fy = np.arange(grid.ny + 1)
    cell_x = in_k(cx, nx_eps, grid.nx)
    cell_y = in_k(cy, ny_eps, grid.ny)
    face_x = in_k(fx - 1, nx_eps, grid.nx) & in_k(fx, nx_eps, grid.nx) if collar else np.ones(fx.shape, bool)
    face_y = in_k(fy - 1, ny_eps, grid.ny) & in_k(fy, ny_eps, grid.ny) if collar else np.ones(fy.shape, bool)

    u = u_c[np.ix_(local(fx), local(cy))] * np.outer(face_x, cell_y)
    v = v_c[np.ix_(local(cx), local(fy))] * np.outer(cell_x, face_y)
    pi = pi_c[np.ix_(local(cx), local(cy))] * np.outer(cell_x, cell_y)
    return StaggeredVectorField(grid, u, v), ScalarField(grid, pi)


Matrix2 = Tuple[Tuple[float, float], Tuple[float, float]]


class RefinementRow(BaseModel):
    n: int
    a11: float
    a12: float
    a21: float
    a22: float
    residual: float
    iterations: int
    porosity: float
    solid_defect: float = 0.0  # staircase solid fraction minus the hole area
    corrected: Optional[Matrix2] = None

    def matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    def corrected_matrix(self) -> np.ndarray:
        if self.corrected is None:
            return self.matrix()
        return np.array(self.corrected, dtype=float)

    @property
    def a11_corrected(self) -> float:
        return float(self.corrected_matrix()[0, 0])

    @property
    def a22_corrected(self) -> float:
        return float(self.corrected_matrix()[1, 1])


class RefinementStudy(BaseModel):
    """
    A(n) per resolution and its Richardson limit.

    The staircase mask misses the hole area by an amount that jumps from
    level to level, and raw A(n) inherits those jumps. Every row therefore
    also carries A_c(n) = A(n) - S (c(n) - |T|), the tensor with the solid
    fraction defect removed to first order; S = dA/dc is a secant slope from
    two scaled holes on the coarsest grid. Order and limit use A_c.
    """

    hole: HoleShape
    rows: List[RefinementRow]
    porosity_slope: Matrix2
    observed_order: Optional[float]
    extrapolated: PermeabilityTensor
    previous_extrapolated: Optional[PermeabilityTensor] = None

    def increments(self) -> List[float]:
        """|A11(n_k+1) - A11(n_k)| along the table"""
        return [abs(b.a11 - a.a11) for a, b in zip(self.rows, self.rows[1:])]

    def corrected_increments(self) -> List[float]:
        return [abs(b.a11_corrected - a.a11_corrected) for a, b in zip(self.rows, self.rows[1:])]

    def extrapolation_change(self) -> Optional[float]:
        """Largest entry change between the limits with and without the finest level"""
        if self.previous_extrapolated is None:
            return None
        return float(np.abs(self.extrapolated.matrix - self.previous_extrapolated.matrix).max())

    def stable_digits(self, digits: int = 3) -> Optional[bool]:
        """Successive limits agree within half a unit of the ``digits``-th significant digit"""
        change = self.extrapolation_change()
        if change is None:
            return None
        scale = float(np.abs(self.extrapolated.matrix).max())
        if scale == 0.0:
            return change == 0.0
        unit = 10.0 ** (math.floor(math.log10(scale)) - digits + 1)
        return change <= 0.5 * unit


def richardson(values: Sequence[np.ndarray], ratio: float) -> Tuple[Optional[float], np.ndarray]:
    """Observed order from the (1,1) entries of three levels and the extrapolated limit"""
    a1, a2, a3 = (np.asarray(v, dtype=float) for v in values[-3:])
    e1 = a2[0, 0] - a1[0, 0]
    e2 = a3[0, 0] - a2[0, 0]
    if e2 == 0.0 or e1 == 0.0:
        return None, a3
    order = math.log(abs(e1 / e2)) / math.log(ratio)
    if order <= 0:
        return order, a3
    return order, a3 + (a3 - a2) / (ratio ** order - 1.0)


def _level_permeability(
    hole: HoleShape, n: int, tol: float, penalty_factor: float, inner_solver: InnerSolver
) -> Tuple[SolidMask, PermeabilityTensor, List[CellSolution]]:
    mask = build_cell_mask(hole, n)
    config = CellConfig(mask=mask, tol=tol, penalty=penalty_factor / n ** 2, inner_solver=inner_solver)
    a, sols = solve_permeability(config)
    return mask, a, sols


def porosity_slope(
    hole: HoleShape,
    n: int,
    tol: float = 1e-10,
    penalty_factor: float = DEFAULT_PENALTY_FACTOR,
    inner_solver: InnerSolver = "direct",
    spread: float = 0.2,
) -> np.ndarray:
    """Secant dA/dc between the hole scaled by 1 - spread and 1 + spread on an n x n cell"""
    spread = min(spread, 0.5 * (hole.max_scale() - 1.0))
    if spread <= 0.0:
        raise ConfigurationError(f"{hole.kind} hole cannot grow inside the cell")
    points = []
    for factor in (1.0 - spread, 1.0 + spread):
        mask, a, _ = _level_permeability(hole.scaled(factor), n, tol, penalty_factor, inner_solver)
        points.append((1.0 - mask.porosity, a.matrix))
    (c0, a0), (c1, a1) = points
    if c1 == c0:
        raise DegenerateProblemError(f"scaled holes have the same staircase on a {n}x{n} cell")
    return (a1 - a0) / (c1 - c0)


def grid_refinement_study(
    hole: HoleShape,
    n_list: Sequence[int],
    tol: float = 1e-10,
    penalty_factor: float = DEFAULT_PENALTY_FACTOR,
    inner_solver: InnerSolver = "direct",
) -> RefinementStudy:
    n_list = list(n_list)
    if len(n_list) < 3 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigurationError(f"refinement needs >= 3 ascending resolutions, got {n_list}")
    levels = [(n, *_level_permeability(hole, n, tol, penalty_factor, inner_solver)) for n in n_list]
    slope = porosity_slope(hole, n_list[0], tol, penalty_factor, inner_solver)
    area = hole.area()
    rows = []
    for n, mask, a, sols in levels:
        m = a.matrix
        defect = (1.0 - mask.porosity) - area
        rows.append(
            RefinementRow(
                n=n,
                a11=m[0, 0],
                a12=m[0, 1],
                a21=m[1, 0],
                a22=m[1, 1],
                residual=max(s.residuals.residual_norm for s in sols),
                iterations=sum(s.residuals.iterations for s in sols),
                porosity=mask.porosity,
                solid_defect=defect,
                corrected=PermeabilityTensor.from_matrix(m - slope * defect).entries,
            )
        )
    corrected = [r.corrected_matrix() for r in rows]
    order, limit = richardson(corrected, n_list[-1] / n_list[-2])
    previous = None
    if len(rows) >= 4:
        _, prev_limit = richardson(corrected[:-1], n_list[-2] / n_list[-3])
        previous = PermeabilityTensor.from_matrix(prev_limit)
    logger.info("refinement %s: observed order %s", n_list, order)
    return RefinementStudy(
        hole=hole,
        rows=rows,
        porosity_slope=PermeabilityTensor.from_matrix(slope).entries,
        observed_order=order,
        extrapolated=PermeabilityTensor.from_matrix(limit),
        previous_extrapolated=previous,
    )


def penalty_robustness(hole: HoleShape, n: int, tol: float = 1e-10) -> dict:
    """
    Change of A when kappa is halved, next to the change from n/2 to n.

    The penalty error should stay below the discretization increment.
    """
    base = DEFAULT_PENALTY_FACTOR / n ** 2
    a_full, _ = permeability_for_hole(hole, n, tol=tol, penalty=base)
    a_half, _ = permeability_for_hole(hole, n, tol=tol, penalty=0.5 * base)
    a_coarse, _ = permeability_for_hole(hole, n // 2, tol=tol)
    return {
        "kappa_change": float(np.abs(a_full.matrix - a_half.matrix).max()),
        "refinement_change": float(np.abs(a_full.matrix - a_coarse.matrix).max()),
    }
