"""
Evolutionary Carreau-Yasuda flow in the perforated domain.

Each time step solves, on the free faces of the mask,

    (eps^2/dt)(u - u_old) - div(eta(Du) Du) + C(u) u + grad p = f,   div u = 0

by Picard iteration: viscosity and the convection matrix are frozen at the
previous iterate and the resulting symmetric saddle-point system is solved
exactly (Uzawa), so incompressibility is restored on every iterate. The
energy ledger and the time integrals use the new time level, the
quadrature for which the discrete energy inequality holds.
"""
import logging
import math
from typing import Dict, List, Literal, NamedTuple, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.geometry.holes import DomainSpec
from src.geometry.masks import SolidMask, build_perforated_mask
from src.grid.fields import GridSpec, ScalarField, StaggeredVectorField, TensorField
from src.grid.linalg import LinearSolveReport
from src.grid.operators import (
    divergence,
    field_power,
    operators_for,
    rate_of_strain,
    velocity_gradient,
)
from src.solvers.saddle_point import InnerSolver, SaddlePointSystem
from src.solvers.viscosity import CarreauParams, carreau_viscosity, shear_factor
from src.utils.errors import (
    ConfigurationError,
    DomainError,
    MicroStepError,
    NumericalError,
    StructuralError,
)

logger = logging.getLogger(__name__)

ForcingKind = Literal["cellular", "constant", "shear", "zero"]


class ForcingSpec(BaseModel):
    """
    Time-independent body force and initial velocity.

    ``cellular`` is divergence-free and vanishes on the boundary of the
    rectangle; a constant force in a sealed box is a pure gradient and
    drives no flow.
    """

    model_config = ConfigDict(extra="forbid", arbitrary_types_allowed=True)

    kind: ForcingKind = "cellular"
    amplitude: float = 1.0
    direction: Tuple[float, float] = (1.0, 0.0)
    u0: Optional[StaggeredVectorField] = Field(default=None, exclude=True)

    def sample(self, grid: GridSpec) -> StaggeredVectorField:
        a = self.amplitude
        lx, ly = grid.lx, grid.ly
        x0, y0 = grid.x0, grid.y0
        if self.kind == "zero":
            return StaggeredVectorField.zeros(grid)
        if self.kind == "constant":
            d = np.asarray(self.direction, dtype=float)
            norm = np.linalg.norm(d)
            if norm == 0:
                raise ConfigurationError("constant forcing needs a non-zero direction")
            d = d / norm
            return StaggeredVectorField.sample(grid, lambda x, y: a * d[0] + 0 * x, lambda x, y: a * d[1] + 0 * x)
        if self.kind == "shear":
            return StaggeredVectorField.sample(
                grid, lambda x, y: a * np.sin(2 * np.pi * (y - y0) / ly), lambda x, y: 0 * x
            )
        return StaggeredVectorField.sample(
            grid,
            lambda x, y: a * np.sin(np.pi * (x - x0) / lx) ** 2 * np.sin(2 * np.pi * (y - y0) / ly),
            lambda x, y: -a * (ly / lx) * np.sin(2 * np.pi * (x - x0) / lx) * np.sin(np.pi * (y - y0) / ly) ** 2,
        )


class MicroConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", arbitrary_types_allowed=True)

    domain: DomainSpec
    params: CarreauParams = Field(default_factory=CarreauParams)
    forcing: ForcingSpec = Field(default_factory=ForcingSpec)
    dt: float = Field(default=0.1, gt=0)
    t_end: float = Field(default=1.0, gt=0)
    picard_tol: float = Field(default=1e-9, gt=0)
    picard_max: int = Field(default=50, ge=1)
    linear_tol: float = Field(default=1e-12, gt=0, le=1e-4)
    max_iter: int = Field(default=20000, ge=1)
    inner_solver: InnerSolver = "direct"
    steady_tol: float = Field(default=1e-8, gt=0)
    convection: Literal["upwind", "skew"] = "upwind"
    fast_forward: bool = True

    @model_validator(mode="after")
    def _check_horizon(self) -> "MicroConfig":
        if self.t_end < self.dt:
            raise ValueError(f"t_end = {self.t_end} must be >= dt = {self.dt}")
        return self

    @property
    def epsilon(self) -> float:
        return self.domain.epsilon


class MicroState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    t: float = 0.0
    u: StaggeredVectorField
    p: ScalarField  # mean zero on the fluid cells


class LedgerEntry(BaseModel):
    step: int
    t: float
    kinetic: float
    dissipation: float
    work: float
    dissipation_cum: float
    work_cum: float
    slack: float


class EnergyLedger(BaseModel):
    """Terms of the energy inequality after every step"""

    epsilon: float
    initial_kinetic: float = 0.0
    entries: List[LedgerEntry] = Field(default_factory=list)

    def append(self, step: int, t: float, kinetic: float, dissipation: float, work: float) -> LedgerEntry:
        values = (kinetic, dissipation, work)
        if not all(math.isfinite(v) for v in values):
            raise NumericalError(f"non-finite energy ledger entry at step {step}")
        if dissipation < 0:
            raise NumericalError(f"negative dissipation {dissipation:.3e} at step {step}")
        prev_d = self.entries[-1].dissipation_cum if self.entries else 0.0
        prev_w = self.entries[-1].work_cum if self.entries else 0.0
        d_cum = prev_d + dissipation
        w_cum = prev_w + work
        entry = LedgerEntry(
            step=step,
            t=t,
            kinetic=kinetic,
            dissipation=dissipation,
            work=work,
            dissipation_cum=d_cum,
            work_cum=w_cum,
            slack=self.initial_kinetic + w_cum - kinetic - d_cum,
        )
        self.entries.append(entry)
        return entry

    def term_scale(self) -> float:
        """Magnitude of the largest term of the inequality"""
        scale = abs(self.initial_kinetic)
        for e in self.entries:
            scale = max(scale, abs(e.kinetic), abs(e.dissipation_cum), abs(e.work_cum))
        return scale


def energy_check(ledger: EnergyLedger) -> float:
    """
    Worst slack over all steps:
    (eps^2/2)|u0|^2 + sum work - (eps^2/2)|u(t)|^2 - sum dissipation
    """
    if not ledger.entries:
        raise DomainError("energy check needs a non-empty ledger")
    return min(e.slack for e in ledger.entries)


class TrajectorySummary(BaseModel):
    epsilon: float
    t_end: float
    steps_solved: int = 0
    steps_replayed: int = 0
    steady: bool = False
    steady_step: Optional[int] = None
    steady_time: Optional[float] = None
    picard_iterations: List[int] = Field(default_factory=list)
    linear_iterations: int = 0
    max_cfl: float = 0.0
    cfl_exceeded: int = 0
    max_divergence: float = 0.0
    warnings: List[str] = Field(default_factory=list)

    def note_cfl(self, cfl: float, step: int) -> None:
        """Track the CFL number; warn on the first step above 1 only"""
        self.max_cfl = max(self.max_cfl, cfl)
        if cfl <= 1.0:
            return
        self.cfl_exceeded += 1
        message = f"CFL {cfl:.2f} > 1 at step {step} (convection is lagged)"
        if self.cfl_exceeded == 1:
            logger.warning(message)
            self.warnings.append(message)
        else:
            logger.debug(message)


class TimeIntegrals:
    """
    Running time integrals of the velocity and the stress terms.

    U = int u, G = int C(u)u, H = int g Du, R = int (g - 1) Du,
    Fint = int f, Pint = int p, viscous = int -div(eta Du), with
    g = (1 + lam |Du|^2)^(r/2 - 1). ``history`` keeps the per-step spatial
    norms the space-time norms are assembled from.
    """

    def __init__(self, grid: GridSpec, params: CarreauParams, epsilon: float,
                 u0: StaggeredVectorField, free_faces: np.ndarray):
        self.grid = grid
        self.params = params
        self.epsilon = epsilon
        self.u0 = u0.copy()
        self.free_faces = free_faces
        self.U = StaggeredVectorField.zeros(grid)
        self.G = StaggeredVectorField.zeros(grid)
        self.Fint = StaggeredVectorField.zeros(grid)
        self.viscous = StaggeredVectorField.zeros(grid)
        self.H = TensorField.zeros(grid)
        self.R = TensorField.zeros(grid)
        self.Pint = ScalarField.zeros(grid)
        self.t = 0.0
        self.history: Dict[str, List[float]] = {key: [] for key in HISTORY_KEYS}
        self.initial_l2 = math.sqrt(field_power(u0, 2))

    @property
    def stress_exponent(self) -> float:
        """Lebesgue exponent of the H norm: 2 for r <= 2, r' above"""
        return 2.0 if self.params.r <= 2 else self.params.dual_exponent

    def accumulate(self, dt: float, u: StaggeredVectorField, convective: StaggeredVectorField,
                   force: StaggeredVectorField, p: ScalarField, viscous_force: StaggeredVectorField) -> None:
        r = self.params.r
        rp = self.params.dual_exponent
        ph = self.stress_exponent
        strain = rate_of_strain(u)
        g = shear_factor(strain.magnitude_sq(), self.params)
        stress = strain.scaled(g)
        remainder = strain.scaled(g - 1.0)

        self.t += dt
        self.U = self.U + u * dt
        self.G = self.G + convective * dt
        self.Fint = self.Fint + force * dt
        self.viscous = self.viscous + viscous_force * dt
        self.H = self.H + stress * dt
        self.R = self.R + remainder * dt
        self.Pint = self.Pint + p * dt

        grad_u = velocity_gradient(u)
        h = self.history
        h["dt"].append(dt)
        h["t"].append(self.t)
        h["u_l2"].append(math.sqrt(field_power(u, 2)))
        h["grad_u_l2"].append(math.sqrt(field_power(grad_u, 2)))
        h["u_lr"].append(field_power(u, r))
        h["grad_u_lr"].append(field_power(grad_u, r))
        h["U_l2"].append(math.sqrt(field_power(self.U, 2)))
        h["grad_U_l2"].append(math.sqrt(field_power(velocity_gradient(self.U), 2)))
        h["G_l32"].append(field_power(self.G, 1.5) ** (2.0 / 3.0))
        h["conv_l32"].append(field_power(convective, 1.5) ** (2.0 / 3.0))
        h["H_p"].append(field_power(self.H, ph))
        h["stress_p"].append(field_power(stress, ph))
        h["R_p"].append(field_power(self.R, rp))
        h["remainder_l1"].append(field_power(remainder, 1.0))


HISTORY_KEYS = (
    "dt", "t", "u_l2", "grad_u_l2", "u_lr", "grad_u_lr", "U_l2", "grad_U_l2",
    "G_l32", "conv_l32", "H_p", "stress_p", "R_p", "remainder_l1",
)


class MicroRun(NamedTuple):
    summary: TrajectorySummary
    ledger: EnergyLedger
    integrals: TimeIntegrals
    state: MicroState


class StepOutcome(NamedTuple):
    state: MicroState
    picard_iterations: int
    picard_changes: List[float]
    cfl: float
    convective: np.ndarray
    viscous_force: np.ndarray
    dissipation_rate: float
    divergence: float
    report: LinearSolveReport


class ConvectionOperator:
    """
    Pair-flux convection matrix on the MAC momentum control volumes.

    Neighbouring faces P, Q exchange the mass flux F through their shared
    control-volume edge. The skew part adds F/2 at (P, Q) and -F/2 at
    (Q, P); the upwind part adds the graph Laplacian with weights |F|/2.
    The matrix is skew-symmetric plus positive semi-definite, so
    <C(w) u, u> >= 0 for every u.
    """

    def __init__(self, grid: GridSpec, upwind: bool = True):
        self.grid = grid
        self.upwind = upwind
        self.p_idx, self.q_idx, self.flux_map = self._pairs()

    def _pairs(self) -> Tuple[np.ndarray, np.ndarray, sp.csr_matrix]:
        g = self.grid
        nux, ny = g.u_shape
        nx, nvy = g.v_shape
        n_u = nux * ny
        uid = np.arange(n_u).reshape(nux, ny)
        vid = n_u + np.arange(nx * nvy).reshape(nx, nvy)
        ps, qs, rows, cols, vals = [], [], [], [], []
        count = 0

        def add_pairs(p, q, contributions):
            nonlocal count
            p = p.ravel()
            q = q.ravel()
            pair = count + np.arange(p.size)
            for face_ids, weight, valid in contributions:
                shape = np.broadcast(face_ids, valid).shape
                face_ids = np.broadcast_to(face_ids, shape).ravel()
                keep = np.broadcast_to(valid, shape).ravel()
                rows.append(pair[keep])
                cols.append(face_ids[keep])
                vals.append(np.full(int(keep.sum()), weight))
            ps.append(p)
            qs.append(q)
            count += p.size

        # u faces paired along x through cell centers
        i = np.arange(nx)
        iq = (i + 1) % nux if g.periodic_x else i + 1
        p, q = uid[i, :], uid[iq, :]
        ones = np.ones(p.shape, dtype=bool)
        add_pairs(p, q, [(p, 0.5 * g.hy, ones), (q, 0.5 * g.hy, ones)])

        # u faces paired along y through nodes; flux from v at that node
        if g.periodic_y:
            j = np.arange(ny)
            jq = (j + 1) % ny
        else:
            j = np.arange(ny - 1)
            jq = j + 1
        node = jq
        fi = np.arange(nux)[:, None]
        if g.periodic_x:
            left, right = (fi - 1) % nx, fi % nx
            left_ok = right_ok = np.ones((nux, 1), dtype=bool)
        else:
            left, right = np.clip(fi - 1, 0, nx - 1), np.clip(fi, 0, nx - 1)
            left_ok, right_ok = fi >= 1, fi <= nx - 1
        p, q = uid[:, j], uid[:, jq]
        valid_shape = p.shape
        add_pairs(p, q, [
            (vid[left, node[None, :]], 0.5 * g.hx, np.broadcast_to(left_ok, valid_shape)),
            (vid[right, node[None, :]], 0.5 * g.hx, np.broadcast_to(right_ok, valid_shape)),
        ])

        # v faces paired along y through cell centers
        j = np.arange(ny)
        jq = (j + 1) % nvy if g.periodic_y else j + 1
        p, q = vid[:, j], vid[:, jq]
        ones = np.ones(p.shape, dtype=bool)
        add_pairs(p, q, [(p, 0.5 * g.hx, ones), (q, 0.5 * g.hx, ones)])

        # v faces paired along x through nodes; flux from u at that node
        if g.periodic_x:
            i = np.arange(nx)
            iq = (i + 1) % nx
        else:
            i = np.arange(nx - 1)
            iq = i + 1
        node = iq
        fj = np.arange(nvy)[None, :]
        if g.periodic_y:
            below, above = (fj - 1) % ny, fj % ny
            below_ok = above_ok = np.ones((1, nvy), dtype=bool)
        else:
            below, above = np.clip(fj - 1, 0, ny - 1), np.clip(fj, 0, ny - 1)
            below_ok, above_ok = fj >= 1, fj <= ny - 1
        p, q = vid[i, :], vid[iq, :]
        valid_shape = p.shape
        add_pairs(p, q, [
            (uid[node[:, None], below], 0.5 * g.hy, np.broadcast_to(below_ok, valid_shape)),
            (uid[node[:, None], above], 0.5 * g.hy, np.broadcast_to(above_ok, valid_shape)),
        ])

        flux_map = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(count, g.n_faces),
        ).tocsr()
        return np.concatenate(ps), np.concatenate(qs), flux_map

    def matrix(self, u: np.ndarray) -> sp.csr_matrix:
        flux = self.flux_map @ u
        p, q = self.p_idx, self.q_idx
        rows = [p, q]
        cols = [q, p]
        vals = [0.5 * flux, -0.5 * flux]
        if self.upwind:
            a = 0.5 * np.abs(flux)
            rows += [p, q, p, q]
            cols += [p, q, q, p]
            vals += [a, a, -a, -a]
        n = self.grid.n_faces
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()
        return mat / self.grid.cell_volume


class MicroSolver:
    """Discretization of one micro configuration; owns the Uzawa system cache"""

    def __init__(self, config: MicroConfig, mask: Optional[SolidMask] = None):
        self.config = config
        self.eps = config.epsilon
        self.mask = mask if mask is not None else build_perforated_mask(config.domain)
        self.grid = self.mask.grid
        self.ops = operators_for(self.grid)
        self.free = self.mask.free_faces()
        self.fluid = self.mask.fluid_cells()
        self.b = self.ops.divergence[self.fluid][:, self.free]
        self.force = config.forcing.sample(self.grid)
        self.f = self.force.to_flat()
        self.vol = self.grid.cell_volume
        self.convection = ConvectionOperator(self.grid, upwind=config.convection == "upwind")
        f_norm = math.sqrt(float(self.f @ self.f) * self.vol)
        self.velocity_scale = self.eps ** 2 * f_norm / config.params.eta0
        self._cache_key: Optional[Tuple[float, bytes]] = None
        self._system: Optional[SaddlePointSystem] = None
        self._kv: Optional[sp.csr_matrix] = None

    def l2(self, vec: np.ndarray) -> float:
        return math.sqrt(float(vec @ vec) * self.vol)

    def viscosity(self, u: np.ndarray) -> np.ndarray:
        strain = rate_of_strain(StaggeredVectorField.from_flat(self.grid, u))
        return carreau_viscosity(strain.magnitude_sq(), self.config.params).ravel()

    def _system_for(self, eta: np.ndarray, mass: float) -> Tuple[SaddlePointSystem, sp.csr_matrix]:
        key = (mass, eta.tobytes())
        if self._system is None or key != self._cache_key:
            kv = self.ops.viscous_matrix(eta)
            k = (mass * sp.identity(self.grid.n_faces, format="csr") + kv)[self.free][:, self.free]
            self._system = SaddlePointSystem(
                k, self.b, inner_solver=self.config.inner_solver, max_iter=self.config.max_iter
            )
            self._kv = kv
            self._cache_key = key
        return self._system, self._kv

    def initial_state(self) -> MicroState:
        u0 = self.config.forcing.u0
        if u0 is None:
            return MicroState(t=0.0, u=StaggeredVectorField.zeros(self.grid), p=ScalarField.zeros(self.grid))
        if u0.grid != self.grid:
            raise StructuralError("initial velocity is built on a different grid than the domain")
        vec = u0.to_flat()
        if np.abs(vec[~self.free]).max(initial=0.0) > 1e-12:
            raise ConfigurationError("initial velocity must vanish on solid cells and walls")
        if self.divergence_norm(vec) > 1e-10:
            raise ConfigurationError("initial velocity is not discretely divergence-free")
        return MicroState(t=0.0, u=u0.copy(), p=ScalarField.zeros(self.grid))

    def divergence_norm(self, u: np.ndarray) -> float:
        div = (self.ops.divergence @ u)[self.fluid]
        return math.sqrt(float(div @ div) * self.vol)

    def relative_change(self, new: np.ndarray, old: np.ndarray) -> float:
        diff = self.l2(new - old)
        if diff == 0.0:
            return 0.0
        return diff / max(self.l2(new), self.velocity_scale)

    def step(self, state: MicroState, dt: float) -> StepOutcome:
        cfg = self.config
        mass = self.eps ** 2 / dt
        u_old = state.u.to_flat()
        u_k = u_old.copy()
        p_k = state.p.values.ravel()[self.fluid]
        changes: List[float] = []
        report = LinearSolveReport()
        for iteration in range(1, cfg.picard_max + 1):
            eta = self.viscosity(u_k)
            conv = self.convection.matrix(u_k) @ u_k
            system, kv = self._system_for(eta, mass)
            rhs = (mass * u_old + self.f - conv)[self.free]
            u_free, p_fluid, solve_report = system.solve(rhs, p0=p_k, tol=cfg.linear_tol)
            report = solve_report if iteration == 1 else report.merged(solve_report)
            u_new = np.zeros(self.grid.n_faces)
            u_new[self.free] = u_free
            change = self.relative_change(u_new, u_k)
            changes.append(change)
            u_k, p_k = u_new, p_fluid
            if change <= cfg.picard_tol:
                break
        else:
            raise MicroStepError(
                f"Picard iteration did not converge in {cfg.picard_max} iterations "
                f"(last change {changes[-1]:.3e}) at t = {state.t + dt:.6g}",
                {"changes": changes, "t": state.t + dt, "dt": dt},
            )

        p_full = np.zeros(self.grid.n_cells)
        p_full[self.fluid] = p_k
        u_max = float(np.abs(u_k).max(initial=0.0))
        cfl = dt * u_max / (self.eps ** 2 * min(self.grid.hx, self.grid.hy))
        viscous_force = kv @ u_k
        new_state = MicroState(
            t=state.t + dt,
            u=StaggeredVectorField.from_flat(self.grid, u_k),
            p=ScalarField.from_flat(self.grid, p_full),
        )
        return StepOutcome(
            state=new_state,
            picard_iterations=len(changes),
            picard_changes=changes,
            cfl=cfl,
            convective=conv,
            viscous_force=viscous_force,
            dissipation_rate=max(float(u_k @ viscous_force) * self.vol, 0.0),
            divergence=self.divergence_norm(u_k),
            report=report,
        )


def micro_step(state: MicroState, config: MicroConfig, dt: Optional[float] = None) -> MicroState:
    """One backward-Euler step of the micro system"""
    return MicroSolver(config).step(state, config.dt if dt is None else dt).state


def _time_levels(dt: float, t_end: float) -> List[float]:
    n = max(1, int(math.ceil(t_end / dt - 1e-9)))
    return [min(k * dt, t_end) for k in range(1, n + 1)]


def run_micro(config: MicroConfig, mask: Optional[SolidMask] = None) -> MicroRun:
    """
    Step to t_end, updating the ledger and the time integrals every step.

    After the steady flag the remaining steps replay the steady state
    (same velocity, pressure and rates) without further solves.
    """
    solver = MicroSolver(config, mask)
    grid = solver.grid
    state = solver.initial_state()
    eps2 = config.epsilon ** 2
    ledger = EnergyLedger(
        epsilon=config.epsilon,
        initial_kinetic=0.5 * eps2 * float(state.u.to_flat() @ state.u.to_flat()) * solver.vol,
    )
    integrals = TimeIntegrals(grid, config.params, config.epsilon, state.u, solver.free)
    summary = TrajectorySummary(epsilon=config.epsilon, t_end=config.t_end)
    levels = _time_levels(config.dt, config.t_end)

    def record(step_no: int, outcome: StepOutcome, dt_n: float) -> None:
        u = outcome.state.u.to_flat()
        ledger.append(
            step=step_no,
            t=outcome.state.t,
            kinetic=0.5 * eps2 * float(u @ u) * solver.vol,
            dissipation=dt_n * outcome.dissipation_rate,
            work=dt_n * float(solver.f @ u) * solver.vol,
        )
        integrals.accumulate(
            dt_n,
            outcome.state.u,
            StaggeredVectorField.from_flat(grid, outcome.convective),
            solver.force,
            outcome.state.p,
            StaggeredVectorField.from_flat(grid, outcome.viscous_force),
        )

    t_prev = 0.0
    for n, t_n in enumerate(levels, start=1):
        dt_n = t_n - t_prev
        outcome = solver.step(state, dt_n)
        record(n, outcome, dt_n)
        summary.steps_solved += 1
        summary.picard_iterations.append(outcome.picard_iterations)
        summary.linear_iterations += outcome.report.iterations
        summary.max_divergence = max(summary.max_divergence, outcome.divergence)
        summary.note_cfl(outcome.cfl, n)
        rate = solver.relative_change(outcome.state.u.to_flat(), state.u.to_flat()) / dt_n
        state = outcome.state
        t_prev = t_n
        if rate < config.steady_tol:
            summary.steady = True
            summary.steady_step = n
            summary.steady_time = t_n
            logger.info("eps=%g steady after %d steps (t=%.4g)", config.epsilon, n, t_n)
            if config.fast_forward:
                for m, t_m in enumerate(levels[n:], start=n + 1):
                    dt_m = t_m - t_prev
                    replay = outcome._replace(
                        state=MicroState(t=t_m, u=state.u, p=state.p)
                    )
                    record(m, replay, dt_m)
                    summary.steps_replayed += 1
                    t_prev = t_m
                state = MicroState(t=t_prev, u=state.u, p=state.p)
                break
    return MicroRun(summary=summary, ledger=ledger, integrals=integrals, state=state)
