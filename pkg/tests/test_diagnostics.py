import math

import numpy as np
import pytest

from src.geometry.masks import build_perforated_mask
from src.grid.fields import GridSpec, ScalarField, StaggeredVectorField
from src.grid.operators import field_power, rate_of_strain, velocity_gradient
from src.solvers.diagnostics import (
    NORM_NAMES,
    bound_exponents,
    korn_probe,
    poincare_probe,
    remainder_exponent,
    scaling_norms,
    stress_remainder_norms,
)
from src.solvers.micro_solver import ForcingSpec, MicroState, run_micro
from src.solvers.viscosity import CarreauParams
from src.utils.errors import DomainError
from tests.conftest import micro_config

LINEAR_NORMS = ("u_l2l2", "grad_u_l2l2", "u_linfl2", "u_lrlr", "grad_u_lrlr", "U", "grad_U", "H")


@pytest.fixture(scope="module")
def newtonian_run():
    return run_micro(micro_config(forcing=ForcingSpec(amplitude=0.1), t_end=0.2))


@pytest.mark.parametrize(
    "r, expected",
    [(1.5, 0.5), (3.0, 1.0 / 3.0), (4.0, 1.0), (6.0, 1.0), (2.0, None)],
)
def test_remainder_exponent(r, expected):
    assert remainder_exponent(r) == (pytest.approx(expected) if expected is not None else None)


def test_remainder_exponent_domain():
    with pytest.raises(DomainError):
        remainder_exponent(1.0)


def test_bound_exponents_table():
    thick = bound_exponents(3.0)
    assert set(thick) == set(NORM_NAMES)
    assert thick["u_l2l2"] == 2.0
    assert thick["grad_u_l2l2"] == 1.0
    assert thick["u_lrlr"] == pytest.approx(2.0 / 3.0 + 1.0)
    assert thick["grad_u_lrlr"] == pytest.approx(2.0 / 3.0)
    thin = bound_exponents(1.5)
    assert thin["u_lrlr"] is None
    assert thin["R"] == pytest.approx(0.5)


def test_zero_run_norms_vanish():
    run = run_micro(micro_config(forcing=ForcingSpec(kind="zero"), params=CarreauParams(r=3.0)))
    values = scaling_norms(run).values()
    assert all(v == 0.0 for v in values.values())
    decay = stress_remainder_norms(run.integrals)
    assert decay.norm == 0.0
    assert decay.pairing == 0.0


def test_norms_are_positive_for_forced_run(newtonian_run):
    norms = scaling_norms(newtonian_run)
    assert norms.epsilon == 0.5
    for name in ("u_l2l2", "grad_u_l2l2", "U", "grad_U", "G", "H"):
        assert getattr(norms, name) > 0
    # no remainder at r = 2
    assert norms.R == 0.0


def test_linf_norm_bounds_l2_in_time(newtonian_run):
    norms = scaling_norms(newtonian_run)
    assert norms.u_l2l2 <= norms.u_linfl2 * math.sqrt(0.2) * (1 + 1e-12)


def test_norms_scale_linearly_with_forcing(newtonian_run):
    doubled = run_micro(micro_config(forcing=ForcingSpec(amplitude=0.2), t_end=0.2))
    base = scaling_norms(newtonian_run).values()
    twice = scaling_norms(doubled).values()
    for name in LINEAR_NORMS:
        assert twice[name] == pytest.approx(2.0 * base[name], rel=1e-3)


def test_remainder_grows_with_nonlinearity():
    run = run_micro(micro_config(params=CarreauParams(r=3.0), t_end=0.2))
    decay = stress_remainder_norms(run.integrals)
    assert decay.norm > 0
    assert decay.pairing > 0
    assert decay.theoretical_exponent == pytest.approx(1.0 / 3.0)


def test_poincare_and_korn_ratios(newtonian_run):
    poincare = poincare_probe(newtonian_run.state, 0.5)
    korn = korn_probe(newtonian_run.state)
    assert 0 < poincare < 10
    assert korn >= 1.0 - 1e-12


def test_ratios_reject_zero_field(newtonian_run):
    state = MicroState(u=newtonian_run.state.u * 0.0, p=newtonian_run.state.p)
    with pytest.raises(DomainError):
        poincare_probe(state, 0.5)
    with pytest.raises(DomainError):
        korn_probe(state)


def _zero_boundary_state(grid: GridSpec, rng) -> MicroState:
    u = rng.normal(size=grid.u_shape)
    v = rng.normal(size=grid.v_shape)
    u[[0, -1], :] = 0.0
    v[:, [0, -1]] = 0.0
    return MicroState(u=StaggeredVectorField(grid, u, v), p=ScalarField.zeros(grid))


@pytest.mark.parametrize(
    "grid",
    [GridSpec(nx=8, ny=8, lx=1.0, ly=1.0), GridSpec(nx=32, ny=32, lx=1.0, ly=1.0), GridSpec(nx=24, ny=12, lx=2.0, ly=1.0)],
    ids=["8x8", "32x32", "24x12"],
)
def test_korn_ratio_is_bounded_on_random_zero_boundary_fields(grid):
    rng = np.random.default_rng(7)
    ratios = []
    for _ in range(100):
        state = _zero_boundary_state(grid, rng)
        strain = field_power(rate_of_strain(state.u))
        assert strain <= field_power(velocity_gradient(state.u)) * (1 + 1e-12)
        ratios.append(korn_probe(state))
    assert min(ratios) >= 1.0 - 1e-12
    assert max(ratios) <= 10.0


@pytest.mark.parametrize("eps", [0.125, pytest.param(0.0625, marks=pytest.mark.slow)])
def test_holes_shrink_the_poincare_ratio(eps):
    cells = int(round(1.0 / eps)) * 8
    fluid_config = micro_config(epsilon=1.0, cells_per_eps=cells, t_end=0.1)
    assert build_perforated_mask(fluid_config.domain).n_solid() == 0
    perforated = run_micro(micro_config(epsilon=eps, cells_per_eps=8, t_end=0.1))
    all_fluid = run_micro(fluid_config)
    assert perforated.state.u.grid == all_fluid.state.u.grid
    assert poincare_probe(all_fluid.state, eps) > poincare_probe(perforated.state, eps)
