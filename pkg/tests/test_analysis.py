import numpy as np
import pytest

from src.geometry.masks import build_perforated_mask
from src.grid.fields import GridSpec, ScalarField, StaggeredVectorField
from src.solvers.cell_problem import PermeabilityTensor
from src.solvers.darcy_solver import DarcyProblem, solve_darcy
from src.solvers.micro_solver import ForcingSpec
from src.tools.analysis import cell_average, compare_pressure, compare_to_darcy, fit_rate, zero_extend
from src.utils.errors import ConfigurationError, ContractViolation, DomainError, StructuralError


def _darcy(grid, kind="cellular"):
    f = ForcingSpec(kind=kind).sample(grid)
    return solve_darcy(DarcyProblem(A=PermeabilityTensor.isotropic(0.02), eta0=1.0, f=f, grid=grid))


def test_fit_rate_recovers_exact_power():
    eps = [0.25, 0.125, 0.0625]
    fit = fit_rate([(e, 3.0 * e ** 2) for e in eps])
    assert fit.slope == pytest.approx(2.0)
    assert np.exp(fit.intercept) == pytest.approx(3.0)
    assert fit.residual == pytest.approx(0.0, abs=1e-12)
    assert fit.n_points == 3


def test_fit_rate_with_noise_stays_close():
    eps = np.array([0.5, 0.25, 0.125, 0.0625])
    noise = np.array([1.02, 0.98, 1.01, 0.99])
    fit = fit_rate(zip(eps, eps * noise))
    assert fit.slope == pytest.approx(1.0, abs=0.05)
    assert fit.residual > 0


@pytest.mark.parametrize(
    "pairs",
    [
        [(0.5, 1.0), (0.25, 0.5)],
        [(0.5, 1.0), (0.25, 0.0), (0.125, 0.1)],
        [(0.5, 1.0), (0.25, float("nan")), (0.125, 0.1)],
        [(0.5, 1.0), (-0.25, 0.5), (0.125, 0.1)],
    ],
)
def test_fit_rate_rejects_bad_input(pairs):
    with pytest.raises(DomainError):
        fit_rate(pairs)


def test_cell_average_of_scalar(square_grid):
    x, y = square_grid.center_coords()
    p = ScalarField(square_grid, (x > 0.5).astype(float))
    averages = cell_average(p, 0.25)
    assert averages.shape == (4, 4)
    assert np.array_equal(averages[:2], np.zeros((2, 4)))
    assert np.array_equal(averages[2:], np.ones((2, 4)))


def test_cell_average_of_constant_velocity(square_grid):
    u = StaggeredVectorField(square_grid, np.full(square_grid.u_shape, 2.0), np.full(square_grid.v_shape, -1.0))
    averages = cell_average(u, 0.5)
    assert averages.shape == (2, 2, 2)
    assert np.allclose(averages[0], 2.0)
    assert np.allclose(averages[1], -1.0)


def test_cell_average_needs_whole_cells(square_grid):
    with pytest.raises(ConfigurationError):
        cell_average(ScalarField.zeros(square_grid), 0.3)
    with pytest.raises(ConfigurationError):
        cell_average(ScalarField.zeros(GridSpec(nx=16, ny=8, lx=1.0, ly=1.0)), 0.25)


def test_zero_extend_checks_solid_faces(small_domain):
    mask = build_perforated_mask(small_domain)
    grid = mask.grid
    u = StaggeredVectorField.zeros(grid)
    u.u[1, 1] = 0.3
    extended = zero_extend(u, mask)
    assert extended.u[1, 1] == 0.3
    assert extended is not u
    u.u[7, 7] = 1.0
    with pytest.raises(ContractViolation):
        zero_extend(u, mask)


def test_zero_extend_grid_mismatch(small_domain, square_grid):
    mask = build_perforated_mask(small_domain)
    with pytest.raises(StructuralError):
        zero_extend(StaggeredVectorField.zeros(square_grid), mask)


def test_darcy_compared_with_itself_is_exact(square_grid):
    darcy = _darcy(square_grid)
    eps = 0.25
    assert compare_to_darcy(darcy.u * eps ** 2, darcy, eps) == pytest.approx(0.0, abs=1e-14)
    assert compare_to_darcy(darcy.u * (2 * eps ** 2), darcy, eps) == pytest.approx(1.0)


def test_pressure_comparison_ignores_gauge(small_domain):
    grid = small_domain.grid()
    darcy = _darcy(grid, kind="constant")
    mask = build_perforated_mask(small_domain)
    shifted = ScalarField(grid, darcy.p.values + 3.0)
    assert compare_pressure(shifted, mask, darcy, small_domain.epsilon) < 0.2


def test_comparison_needs_same_rectangle(square_grid, rect_grid):
    darcy = _darcy(rect_grid)
    with pytest.raises(ConfigurationError):
        compare_to_darcy(StaggeredVectorField.zeros(square_grid), darcy, 0.25)
