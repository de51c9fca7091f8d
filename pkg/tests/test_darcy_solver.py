import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.grid.fields import GridSpec, ScalarField, StaggeredVectorField
from src.grid.operators import divergence, gradient
from src.solvers.cell_problem import PermeabilityTensor
from src.solvers.darcy_solver import (
    DarcyProblem,
    DarcySolution,
    darcy_residual,
    darcy_time_integrals,
    permeability_operator,
    rotate_quarter_turn,
    solve_darcy,
)
from src.solvers.micro_solver import ForcingSpec
from src.utils.errors import SolverError, StructuralError

K = 0.02


def _square(n: int) -> GridSpec:
    return GridSpec(nx=n, ny=n, lx=1.0, ly=1.0)


def _problem(grid, f, a=None, eta0=1.0, **kwargs) -> DarcyProblem:
    return DarcyProblem(A=a or PermeabilityTensor.isotropic(K), eta0=eta0, f=f, grid=grid, **kwargs)


def _centered(values: np.ndarray) -> np.ndarray:
    return values - values.mean()


def _manufactured_error(n: int):
    """Pressure cos(pi x) cos(pi y) plus a divergence-free velocity with no normal flux"""
    grid = _square(n)
    eta0 = 2.0
    u_exact = ForcingSpec(kind="cellular").sample(grid)

    def px(x, y):
        return -math.pi * np.sin(math.pi * x) * np.cos(math.pi * y)

    def py(x, y):
        return -math.pi * np.cos(math.pi * x) * np.sin(math.pi * y)

    grad_p = StaggeredVectorField.sample(grid, px, py)
    f = grad_p + u_exact * (0.5 * eta0 / K)
    sol = solve_darcy(_problem(grid, f, eta0=eta0, tol=1e-12))
    p_exact = ScalarField.sample(grid, lambda x, y: np.cos(math.pi * x) * np.cos(math.pi * y))
    vol = grid.cell_volume
    p_err = math.sqrt(np.sum(_centered(sol.p.values - p_exact.values) ** 2) * vol)
    u_err = math.sqrt(np.sum((sol.u.to_flat() - u_exact.to_flat()) ** 2) * vol)
    return p_err, u_err


def test_gradient_forcing_is_absorbed_by_pressure(square_grid):
    phi = ScalarField.sample(square_grid, lambda x, y: np.cos(np.pi * x) * np.sin(np.pi * y))
    f = gradient(phi)
    sol = solve_darcy(_problem(square_grid, f))
    assert np.linalg.norm(sol.u.to_flat()) <= 1e-8 * np.linalg.norm(f.to_flat())
    assert np.allclose(sol.p.values, _centered(phi.values), atol=1e-8)


@pytest.mark.parametrize(
    "a",
    [PermeabilityTensor.isotropic(K), PermeabilityTensor.from_matrix([[0.03, 0.005], [0.005, 0.01]])],
)
def test_constant_forcing_in_sealed_box_drives_no_flow(rect_grid, a):
    f = ForcingSpec(kind="constant", amplitude=1.0, direction=(2.0, 1.0)).sample(rect_grid)
    sol = solve_darcy(_problem(rect_grid, f, a=a))
    assert sol.u.max_abs() <= 1e-8
    x, y = rect_grid.center_coords()
    d = np.array([2.0, 1.0]) / math.sqrt(5.0)
    assert np.allclose(sol.p.values, _centered(d[0] * x + d[1] * y), atol=1e-8)


def test_manufactured_solution_is_second_order_in_pressure():
    # the discrete cellular field is divergence-free, so u is recovered to roundoff
    errors = [_manufactured_error(n) for n in (16, 32, 64, 128)]
    for _, u_err in errors:
        assert u_err <= 1e-10
    p_orders = [math.log2(a[0] / b[0]) for a, b in zip(errors, errors[1:])]
    assert min(p_orders) >= 1.7


def test_solution_is_divergence_free_with_no_normal_flux(square_grid):
    f = ForcingSpec(kind="shear").sample(square_grid)
    sol = solve_darcy(_problem(square_grid, f))
    assert np.abs(divergence(sol.u).values).max() <= 1e-8 * sol.u.max_abs()
    assert not sol.u.u[[0, -1]].any()
    assert not sol.u.v[:, [0, -1]].any()
    assert abs(sol.p.mean()) < 1e-12
    assert sol.residuals.flux == 0.0
    assert sol.residuals.worst() <= 1e-8


def test_linear_scaling_in_force_and_viscosity(square_grid):
    f = ForcingSpec(kind="cellular").sample(square_grid)
    base = solve_darcy(_problem(square_grid, f))
    doubled = solve_darcy(_problem(square_grid, f * 2.0))
    thick = solve_darcy(_problem(square_grid, f, eta0=2.0))
    assert np.allclose(doubled.u.to_flat(), 2.0 * base.u.to_flat(), rtol=1e-12, atol=0)
    assert np.allclose(doubled.p.values, 2.0 * base.p.values, rtol=1e-12, atol=0)
    assert np.allclose(thick.u.to_flat(), 0.5 * base.u.to_flat(), rtol=1e-12, atol=0)


def test_rotation_equivariance(square_grid):
    a = PermeabilityTensor.from_matrix([[0.03, 0.0], [0.0, 0.01]])
    rotated_a = PermeabilityTensor.from_matrix([[0.01, 0.0], [0.0, 0.03]])
    f = ForcingSpec(kind="shear").sample(square_grid) + ForcingSpec(kind="cellular", amplitude=0.5).sample(square_grid)
    sol = solve_darcy(_problem(square_grid, f, a=a, tol=1e-12))
    turned = solve_darcy(_problem(square_grid, rotate_quarter_turn(f), a=rotated_a, tol=1e-12))
    expected_u = rotate_quarter_turn(sol.u)
    scale = sol.u.max_abs()
    assert np.abs(turned.u.to_flat() - expected_u.to_flat()).max() <= 1e-8 * scale
    assert np.allclose(turned.p.values, rotate_quarter_turn(sol.p).values, atol=1e-8 * np.abs(sol.p.values).max())


def test_four_quarter_turns_are_identity(square_grid, rng):
    u = StaggeredVectorField(square_grid, rng.standard_normal(square_grid.u_shape), rng.standard_normal(square_grid.v_shape))
    turned = u
    for _ in range(4):
        turned = rotate_quarter_turn(turned)
    assert np.array_equal(turned.to_flat(), u.to_flat())


def test_quarter_turn_needs_square_grid(rect_grid):
    with pytest.raises(StructuralError):
        rotate_quarter_turn(ScalarField.zeros(rect_grid))


def test_permeability_operator_is_symmetric(rect_grid):
    a = PermeabilityTensor.from_matrix([[0.03, 0.005], [0.005, 0.01]])
    op = permeability_operator(rect_grid, a)
    assert abs(op - op.T).max() < 1e-15


def test_residual_detects_perturbation(square_grid):
    f = ForcingSpec(kind="cellular").sample(square_grid)
    problem = _problem(square_grid, f)
    sol = solve_darcy(problem)
    bumped = sol.u.copy()
    bumped.u[5, 5] += 1e-3
    perturbed = DarcySolution(u=bumped, p=sol.p, report=sol.report)
    res = darcy_residual(problem, perturbed)
    assert res.momentum > 100 * sol.residuals.momentum
    assert res.mass > 100 * sol.residuals.mass


def test_zero_forcing_gives_zero_solution(square_grid):
    sol = solve_darcy(_problem(square_grid, StaggeredVectorField.zeros(square_grid)))
    assert sol.u.max_abs() == 0.0
    assert not sol.p.values.any()
    assert sol.residuals.worst() == 0.0


def test_time_integrals_are_linear_in_time(square_grid):
    sol = solve_darcy(_problem(square_grid, ForcingSpec(kind="cellular").sample(square_grid)))
    big_u, big_p = darcy_time_integrals(sol, 2.5)
    assert np.allclose(big_u.to_flat(), 2.5 * sol.u.to_flat())
    assert np.allclose(big_p.values, 2.5 * sol.p.values)


def test_problem_validation(square_grid, periodic_grid):
    f = StaggeredVectorField.zeros(square_grid)
    with pytest.raises(ValidationError):
        _problem(square_grid, f, a=PermeabilityTensor.from_matrix([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValidationError):
        _problem(periodic_grid, StaggeredVectorField.zeros(periodic_grid))
    with pytest.raises(StructuralError):
        _problem(_square(8), f)


def test_stalled_pressure_solve_raises(square_grid):
    f = ForcingSpec(kind="cellular").sample(square_grid)
    with pytest.raises(SolverError):
        solve_darcy(_problem(square_grid, f, max_iter=1))
