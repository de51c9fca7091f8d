import numpy as np
import pytest
from pydantic import ValidationError

from src.geometry.masks import build_perforated_mask
from src.grid.fields import GridSpec, StaggeredVectorField
from src.solvers.diagnostics import accumulator_identity_defect, momentum_balance_residual
from src.solvers.micro_solver import (
    ConvectionOperator,
    EnergyLedger,
    ForcingSpec,
    MicroSolver,
    TrajectorySummary,
    _time_levels,
    energy_check,
    micro_step,
    run_micro,
)
from src.solvers.viscosity import CarreauParams
from src.utils.errors import ConfigurationError, DomainError, MicroStepError, NumericalError, StructuralError
from tests.conftest import corner_vortex, micro_config


@pytest.fixture(scope="module")
def thickening_run():
    config = micro_config(params=CarreauParams(r=3.0), dt=0.05, t_end=0.2)
    return run_micro(config)


def test_time_levels_end_exactly_at_horizon():
    assert _time_levels(0.3, 1.0) == pytest.approx([0.3, 0.6, 0.9, 1.0])
    assert _time_levels(0.1, 0.1) == pytest.approx([0.1])


def test_horizon_shorter_than_step_is_rejected():
    with pytest.raises(ValidationError):
        micro_config(dt=0.5, t_end=0.1)


def test_cellular_forcing_is_divergence_free_and_vanishes_on_walls(square_grid):
    f = ForcingSpec(kind="cellular").sample(square_grid)
    assert np.allclose(f.u[[0, -1], :], 0.0, atol=1e-14)
    assert np.allclose(f.v[:, [0, -1]], 0.0, atol=1e-14)
    assert f.max_abs() > 0.5


def test_constant_forcing_needs_direction(square_grid):
    with pytest.raises(ConfigurationError):
        ForcingSpec(kind="constant", direction=(0.0, 0.0)).sample(square_grid)


def test_constant_forcing_is_normalized(square_grid):
    f = ForcingSpec(kind="constant", amplitude=2.0, direction=(3.0, 4.0)).sample(square_grid)
    assert np.allclose(f.u, 1.2)
    assert np.allclose(f.v, 1.6)


def test_convection_is_accretive(rng):
    grid = GridSpec(nx=12, ny=10, lx=1.0, ly=1.0)
    w = rng.standard_normal(grid.n_faces)
    u = rng.standard_normal(grid.n_faces)
    upwind = ConvectionOperator(grid, upwind=True).matrix(w)
    skew = ConvectionOperator(grid, upwind=False).matrix(w)
    assert u @ (upwind @ u) >= -1e-10 * np.abs(upwind).max()
    assert abs(u @ (skew @ u)) <= 1e-10 * np.abs(skew).max() * (u @ u)


@pytest.mark.parametrize("upwind", [True, False])
@pytest.mark.parametrize("grid", [GridSpec(nx=12, ny=10, lx=1.5, ly=1.0), GridSpec.unit_cell(8)], ids=["walls", "periodic"])
def test_convection_assembles_on_every_grid(grid, upwind, rng):
    op = ConvectionOperator(grid, upwind=upwind)
    assert op.flux_map.shape == (op.p_idx.size, grid.n_faces)
    assert op.q_idx.size == op.p_idx.size
    mat = op.matrix(rng.standard_normal(grid.n_faces))
    assert mat.shape == (grid.n_faces, grid.n_faces)
    assert np.isfinite(mat.data).all()
    assert mat.nnz > 0


def test_cfl_warning_is_reported_once(caplog):
    summary = TrajectorySummary(epsilon=0.5, t_end=1.0)
    with caplog.at_level("DEBUG", logger="src.solvers.micro_solver"):
        for step, cfl in enumerate([0.5, 1.5, 2.5, 1.2], start=1):
            summary.note_cfl(cfl, step)
    assert summary.max_cfl == 2.5
    assert summary.cfl_exceeded == 3
    assert summary.warnings == ["CFL 1.50 > 1 at step 2 (convection is lagged)"]
    assert [r.levelname for r in caplog.records if "CFL" in r.message] == ["WARNING", "DEBUG", "DEBUG"]


def test_uniform_flow_is_not_convected(periodic_grid):
    u = StaggeredVectorField(periodic_grid, np.full(periodic_grid.u_shape, 0.7), np.full(periodic_grid.v_shape, -0.2))
    vec = u.to_flat()
    for upwind in (True, False):
        conv = ConvectionOperator(periodic_grid, upwind=upwind).matrix(vec) @ vec
        assert np.abs(conv).max() < 1e-10


def test_zero_forcing_zero_data_stays_at_rest():
    run = run_micro(micro_config(forcing=ForcingSpec(kind="zero"), t_end=0.5))
    assert run.state.u.max_abs() == 0.0
    assert run.summary.steady
    assert run.summary.steady_step == 1
    assert run.summary.steps_replayed == 4
    assert len(run.ledger.entries) == 5
    assert energy_check(run.ledger) == 0.0


def test_energy_inequality(thickening_run):
    slack = energy_check(thickening_run.ledger)
    assert slack >= -1e-10 * thickening_run.ledger.term_scale()
    assert thickening_run.ledger.entries[-1].work_cum > 0


def test_incompressibility(thickening_run):
    assert thickening_run.summary.max_divergence <= 1e-8


def test_accumulator_identity(thickening_run):
    assert accumulator_identity_defect(thickening_run.integrals) <= 1e-12


def test_time_integrated_momentum_balance(thickening_run):
    assert momentum_balance_residual(thickening_run) < 1e-8


def test_velocity_vanishes_on_solid_and_walls(thickening_run):
    mask = build_perforated_mask(micro_config().domain)
    vec = thickening_run.state.u.to_flat()
    assert not vec[~mask.free_faces()].any()
    assert vec[mask.free_faces()].any()


def test_summary_counts(thickening_run):
    summary = thickening_run.summary
    assert summary.steps_solved + summary.steps_replayed == 4
    assert len(summary.picard_iterations) == summary.steps_solved
    assert all(k >= 2 for k in summary.picard_iterations)
    assert thickening_run.state.t == pytest.approx(0.2)
    assert thickening_run.integrals.t == pytest.approx(0.2)


def test_free_decay_loses_kinetic_energy():
    grid = micro_config().domain.grid()
    config = micro_config(forcing=ForcingSpec(kind="zero", u0=corner_vortex(grid)), t_end=0.4, fast_forward=False)
    run = run_micro(config)
    kinetic = [run.ledger.initial_kinetic] + [e.kinetic for e in run.ledger.entries]
    assert np.all(np.diff(kinetic) <= 1e-15)
    assert kinetic[-1] < kinetic[0]
    assert energy_check(run.ledger) >= -1e-12 * run.ledger.term_scale()


def test_initial_velocity_on_solid_is_rejected():
    grid = micro_config().domain.grid()
    u0 = corner_vortex(grid, lo=5, hi=9)
    with pytest.raises(ConfigurationError):
        MicroSolver(micro_config(forcing=ForcingSpec(kind="zero", u0=u0))).initial_state()


def test_compressible_initial_velocity_is_rejected():
    grid = micro_config().domain.grid()
    u0 = StaggeredVectorField.zeros(grid)
    u0.u[2, 2] = 1.0
    with pytest.raises(ConfigurationError):
        MicroSolver(micro_config(forcing=ForcingSpec(kind="zero", u0=u0))).initial_state()


def test_initial_velocity_grid_mismatch():
    u0 = StaggeredVectorField.zeros(GridSpec(nx=8, ny=8, lx=1.0, ly=1.0))
    with pytest.raises(StructuralError):
        MicroSolver(micro_config(forcing=ForcingSpec(kind="zero", u0=u0))).initial_state()


def test_newtonian_flag_matches_exponent_two():
    base = micro_config(t_end=0.2)
    r2 = run_micro(base.model_copy(update={"params": CarreauParams(r=2.0)}))
    fixed = run_micro(base.model_copy(update={"params": CarreauParams(r=2.0, newtonian=True)}))
    assert np.allclose(r2.state.u.to_flat(), fixed.state.u.to_flat(), rtol=1e-12, atol=1e-15)


def test_picard_failure_raises_with_diagnostics():
    config = micro_config(params=CarreauParams(r=3.0), picard_max=1)
    with pytest.raises(MicroStepError) as info:
        run_micro(config)
    assert info.value.diagnostics()["changes"]


def test_single_step_helper():
    config = micro_config()
    solver = MicroSolver(config)
    state = micro_step(solver.initial_state(), config, dt=0.05)
    assert state.t == pytest.approx(0.05)
    assert state.u.max_abs() > 0


def test_steady_state_fast_forward_matches_full_run():
    config = micro_config(epsilon=0.25, t_end=2.0)
    fast = run_micro(config)
    full = run_micro(config.model_copy(update={"fast_forward": False}))
    assert fast.summary.steady
    assert fast.summary.steps_replayed > 0
    assert fast.summary.steps_solved + fast.summary.steps_replayed == 20
    assert full.summary.steps_solved == 20
    scale = np.abs(full.state.u.to_flat()).max()
    assert np.abs(fast.state.u.to_flat() - full.state.u.to_flat()).max() <= 1e-6 * scale
    assert fast.integrals.U.max_abs() == pytest.approx(full.integrals.U.max_abs(), rel=1e-6)


def test_ledger_rejects_bad_entries():
    ledger = EnergyLedger(epsilon=0.5)
    with pytest.raises(NumericalError):
        ledger.append(step=1, t=0.1, kinetic=float("nan"), dissipation=0.0, work=0.0)
    with pytest.raises(NumericalError):
        ledger.append(step=1, t=0.1, kinetic=0.0, dissipation=-1.0, work=0.0)
    with pytest.raises(DomainError):
        energy_check(ledger)


def test_ledger_slack_bookkeeping():
    ledger = EnergyLedger(epsilon=0.5, initial_kinetic=1.0)
    ledger.append(step=1, t=0.1, kinetic=0.8, dissipation=0.3, work=0.2)
    entry = ledger.append(step=2, t=0.2, kinetic=0.7, dissipation=0.1, work=0.0)
    assert entry.dissipation_cum == pytest.approx(0.4)
    assert entry.work_cum == pytest.approx(0.2)
    assert entry.slack == pytest.approx(1.0 + 0.2 - 0.7 - 0.4)
    assert ledger.term_scale() == pytest.approx(1.0)
