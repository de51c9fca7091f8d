"""
Property suite behind the `verify` command: fast checks on 16 x 16 grids.
"""
import logging
import math
from typing import Callable, List, Tuple

import numpy as np
from pydantic import BaseModel

from src.geometry.holes import DomainSpec
from src.geometry.masks import build_cell_mask, build_perforated_mask
from src.grid.fields import GridSpec, ScalarField, StaggeredVectorField
from src.grid.linalg import cg_solve
from src.grid.operators import field_power, gradient, operators_for, rate_of_strain, velocity_gradient
from src.solvers.cell_problem import CellConfig, PermeabilityTensor, solve_permeability
from src.solvers.darcy_solver import DarcyProblem, solve_darcy
from src.solvers.diagnostics import accumulator_identity_defect, korn_probe, scaling_norms
from src.solvers.micro_solver import ForcingSpec, MicroState, energy_check, run_micro
from src.solvers.viscosity import CarreauParams, carreau_viscosity
from src.utils.config import LabConfig
from src.utils.errors import HomogenizationError

logger = logging.getLogger(__name__)

GRID_SIZE = 16
KORN_BOUND = 10.0


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str


def _square_grid() -> GridSpec:
    return GridSpec(nx=GRID_SIZE, ny=GRID_SIZE, lx=1.0, ly=1.0)


def check_duality(config: LabConfig) -> Tuple[bool, str]:
    """<div u, p> = -<u, grad p> for fields vanishing on the walls"""
    grid = _square_grid()
    ops = operators_for(grid)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(grid.n_faces) * ops.interior_faces
    p = rng.standard_normal(grid.n_cells)
    lhs = float((ops.divergence @ u) @ p)
    rhs = -float(u @ (ops.gradient @ p))
    defect = abs(lhs - rhs) / max(abs(lhs), 1.0)
    return defect <= 1e-12, f"relative defect {defect:.2e}"


def check_cg_energy(config: LabConfig) -> Tuple[bool, str]:
    """CG energy decreases monotonically on the pressure Laplacian"""
    grid = _square_grid()
    ops = operators_for(grid)
    system = (-(ops.divergence @ ops.gradient)).tocsr()
    rhs = np.random.default_rng(1).standard_normal(grid.n_cells)
    _, report = cg_solve(system, rhs, tol=1e-10, singular=True, record_energy=True)
    energy = np.array(report.energy_history)
    rises = np.diff(energy) > 1e-12 * np.abs(energy).max()
    return report.converged and not rises.any(), f"{report.iterations} iterations"


def check_viscosity(config: LabConfig) -> Tuple[bool, str]:
    d_sq = np.logspace(-4, 4, 50)
    thinning = carreau_viscosity(d_sq, CarreauParams(r=1.5, eta_inf=0.5))
    thickening = carreau_viscosity(d_sq, CarreauParams(r=3.0, eta_inf=0.5))
    ok = bool(np.all(np.diff(thinning) <= 0) and np.all(np.diff(thickening) >= 0))
    return ok, "shear-thinning non-increasing, shear-thickening non-decreasing"


def check_permeability(config: LabConfig) -> Tuple[bool, str]:
    a, _ = solve_permeability(CellConfig(mask=build_cell_mask(config.hole, GRID_SIZE)))
    return a.is_spd(), f"A = {np.round(a.matrix, 6).tolist()}"


def check_micro_energy(config: LabConfig) -> Tuple[bool, str]:
    """Energy inequality, incompressibility and the accumulator identity on one micro run"""
    domain = DomainSpec(epsilon=0.5, cells_per_eps=8, hole=config.hole)
    micro = config.micro_config().model_copy(
        update={"domain": domain, "dt": 0.05, "t_end": 0.2, "params": CarreauParams(r=3.0)}
    )
    run = run_micro(micro, build_perforated_mask(domain))
    slack = energy_check(run.ledger)
    scale = run.ledger.term_scale()
    identity = accumulator_identity_defect(run.integrals)
    ok = slack >= -1e-10 * scale and run.summary.max_divergence <= 1e-8 and identity <= 1e-12
    return ok, f"worst slack {slack:.2e} (scale {scale:.2e}), divergence {run.summary.max_divergence:.2e}"


def check_newtonian_reduction(config: LabConfig) -> Tuple[bool, str]:
    domain = DomainSpec(epsilon=0.5, cells_per_eps=8, hole=config.hole)
    base = config.micro_config().model_copy(update={"domain": domain, "dt": 0.1, "t_end": 0.2})
    r2 = run_micro(base.model_copy(update={"params": CarreauParams(r=2.0)}))
    fixed = run_micro(base.model_copy(update={"params": CarreauParams(r=2.0, newtonian=True)}))
    a = scaling_norms(r2).values()
    b = scaling_norms(fixed).values()
    diffs = [abs(a[k] - b[k]) / max(abs(a[k]), 1e-300) for k in a if a[k] or b[k]]
    worst = max(diffs, default=0.0)
    return worst <= 1e-9, f"max relative difference {worst:.2e}"


def check_darcy_gradient(config: LabConfig) -> Tuple[bool, str]:
    """Gradient forcing is absorbed by the pressure"""
    grid = _square_grid()
    phi = ScalarField.sample(grid, lambda x, y: np.cos(np.pi * x) * np.sin(np.pi * y))
    f = gradient(phi)
    problem = DarcyProblem(A=PermeabilityTensor.isotropic(0.02), eta0=1.0, f=f, grid=grid)
    sol = solve_darcy(problem)
    ratio = np.linalg.norm(sol.u.to_flat()) / np.linalg.norm(f.to_flat())
    return ratio <= 1e-8, f"|u| / |f| = {ratio:.2e}"



def check_korn(config: LabConfig, samples: int = 100) -> Tuple[bool, str]:
    """||Du|| <= ||grad u|| <= C ||Du|| over random fields vanishing on the walls"""
    grid = _square_grid()
    rng = np.random.default_rng(2)
    zero = ScalarField.zeros(grid)
    worst, below = 0.0, 0
    for _ in range(samples):
        u = rng.standard_normal(grid.u_shape)
        v = rng.standard_normal(grid.v_shape)
        u[[0, -1], :] = 0.0
        v[:, [0, -1]] = 0.0
        field = StaggeredVectorField(grid, u, v)
        if field_power(rate_of_strain(field)) > field_power(velocity_gradient(field)) * (1 + 1e-12):
            below += 1
        worst = max(worst, korn_probe(MicroState(u=field, p=zero)))
    return below == 0 and worst <= KORN_BOUND, f"max ratio {worst:.3f} over {samples} fields"


def _manufactured_darcy_errors(n: int) -> Tuple[float, float]:
    grid = GridSpec(nx=n, ny=n, lx=1.0, ly=1.0)
    eta0, k = 2.0, 0.02
    u_exact = ForcingSpec(kind="cellular").sample(grid)
    grad_p = StaggeredVectorField.sample(
        grid,
        lambda x, y: -math.pi * np.sin(math.pi * x) * np.cos(math.pi * y),
        lambda x, y: -math.pi * np.cos(math.pi * x) * np.sin(math.pi * y),
    )
    f = grad_p + u_exact * (0.5 * eta0 / k)
    sol = solve_darcy(DarcyProblem(A=PermeabilityTensor.isotropic(k), eta0=eta0, f=f, grid=grid, tol=1e-12))
    p_exact = ScalarField.sample(grid, lambda x, y: np.cos(math.pi * x) * np.cos(math.pi * y)).values
    dp = (sol.p.values - sol.p.values.mean()) - (p_exact - p_exact.mean())
    vol = grid.cell_volume
    p_err = math.sqrt(np.sum(dp ** 2) * vol)
    u_err = math.sqrt(np.sum((sol.u.to_flat() - u_exact.to_flat()) ** 2) * vol)
    return p_err, u_err


def check_darcy_manufactured(config: LabConfig) -> Tuple[bool, str]:
    """Known pressure and divergence-free velocity: u to roundoff, p at second order"""
    (p_coarse, u_coarse), (p_fine, u_fine) = (_manufactured_darcy_errors(n) for n in (GRID_SIZE, 2 * GRID_SIZE))
    order = math.log2(p_coarse / p_fine)
    u_err = max(u_coarse, u_fine)
    return u_err <= 1e-10 and order >= 1.7, f"pressure order {order:.2f}, velocity error {u_err:.1e}"


CHECKS: List[Tuple[str, Callable[[LabConfig], Tuple[bool, str]]]] = [
    ("div_grad_duality", check_duality),
    ("cg_energy_monotone", check_cg_energy),
    ("viscosity_monotone", check_viscosity),
    ("permeability_spd", check_permeability),
    ("micro_energy_inequality", check_micro_energy),
    ("newtonian_reduction", check_newtonian_reduction),
    ("darcy_gradient_forcing", check_darcy_gradient),
    ("korn_ratio", check_korn),
    ("darcy_manufactured", check_darcy_manufactured),
]


def run_verification(config: LabConfig) -> List[CheckResult]:
    results = []
    for name, check in CHECKS:
        try:
            passed, detail = check(config)
        except HomogenizationError as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        logger.info("verify %s: %s (%s)", name, "ok" if passed else "FAILED", detail)
        results.append(CheckResult(name=name, passed=bool(passed), detail=detail))
    return results
