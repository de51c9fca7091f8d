"""
LangGraph workflow for the epsilon sweep
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Union

from langgraph.graph import END, StateGraph
from langsmith import traceable

from src.geometry.masks import SolidMask, build_cell_mask, build_perforated_mask, count_holes
from src.grid.fields import GridSpec
from src.solvers.cell_problem import CellConfig, CellProblem, RefinementStudy, assemble_permeability, grid_refinement_study
from src.solvers.darcy_solver import DarcyProblem, solve_darcy
from src.solvers.diagnostics import (
    NORM_NAMES,
    accumulator_identity_defect,
    bound_exponents,
    korn_probe,
    momentum_balance_residual,
    poincare_probe,
    scaling_norms,
    stress_remainder_norms,
)
from src.solvers.micro_solver import MicroRun, energy_check, run_micro
from src.state.sweep_state import SweepReport, SweepState
from src.tools.analysis import compare_pressure, compare_to_darcy, fit_rate
from src.tools.report_writer import ReportWriter
from src.utils.config import LabConfig, config_hash
from src.utils.errors import DomainError, HomogenizationError

logger = logging.getLogger(__name__)

DARCY_PROXY_LABEL = (
    "empirical proxy: weak convergence of eps^-2 u_eps to the Darcy velocity is proved without a rate; "
    "the gate checks monotone decrease of the cell-averaged error"
)
PRESSURE_LABEL = "reported only: pressure converges in a negative-order time space with no rate to assert"


class EpsilonOutcome(NamedTuple):
    epsilon: float
    run: MicroRun
    mask: SolidMask


def run_epsilon(config: LabConfig, epsilon: float) -> EpsilonOutcome:
    """One micro run of the sweep; module level so worker processes can import it"""
    micro = config.micro_config(epsilon)
    mask = build_perforated_mask(micro.domain)
    logger.info("micro run eps=%g on %dx%d grid, %d holes", epsilon, mask.grid.nx, mask.grid.ny,
                count_holes(mask, micro.domain))
    return EpsilonOutcome(epsilon=epsilon, run=run_micro(micro, mask), mask=mask)


def _failure(e: Exception) -> Dict[str, Any]:
    logger.error("sweep stopped: %s: %s", type(e).__name__, e)
    return {"status": "error", "error_message": str(e), "error_kind": type(e).__name__}


def epsilon_record(outcome: EpsilonOutcome, darcy, cfg_hash: str) -> Dict[str, Any]:
    """Norms, probes and comparisons of one micro run"""
    run, eps = outcome.run, outcome.epsilon
    norms = scaling_norms(run, eps)
    remainder = stress_remainder_norms(run.integrals)
    try:
        poincare: Optional[float] = poincare_probe(run.state, eps)
        korn: Optional[float] = korn_probe(run.state)
    except DomainError:
        poincare = korn = None
    record = {
        "epsilon": eps,
        "config_hash": cfg_hash,
        "norms": norms.values(),
        "remainder": remainder.model_dump(),
        "poincare_ratio": poincare,
        "korn_ratio": korn,
        "momentum_balance": momentum_balance_residual(run),
        "accumulator_identity": accumulator_identity_defect(run.integrals),
        "energy_worst_slack": energy_check(run.ledger),
        "energy_scale": run.ledger.term_scale(),
        "steady": run.summary.steady,
        "steady_step": run.summary.steady_step,
        "steps_solved": run.summary.steps_solved,
        "steps_replayed": run.summary.steps_replayed,
        "max_cfl": run.summary.max_cfl,
        "max_divergence": run.summary.max_divergence,
        "porosity": outcome.mask.porosity,
        "darcy_error": None,
        "pressure_error": None,
    }
    if darcy is not None:
        record["darcy_error"] = compare_to_darcy(run.state.u, darcy, eps, outcome.mask)
        record["pressure_error"] = compare_pressure(run.state.p, outcome.mask, darcy, eps)
    return record


def monotone_with_one_inversion(values: List[float], allowance: float = 0.05) -> bool:
    """Non-increasing, except for at most one step up of at most ``allowance`` relative"""
    inversions = [(a, b) for a, b in zip(values, values[1:]) if b > a]
    if not inversions:
        return True
    if len(inversions) > 1:
        return False
    a, b = inversions[0]
    return (b - a) <= allowance * a


def acceptance_flags(records: List[Dict[str, Any]], rates: Dict[str, Optional[Dict[str, Any]]],
                     permeability_spd: bool, linear: bool) -> Dict[str, bool]:
    def slope(name: str) -> Optional[float]:
        fit = rates.get(name)
        return None if fit is None else fit["slope"]

    def within(name: str, lo: float, hi: float = float("inf")) -> bool:
        s = slope(name)
        return s is not None and lo <= s <= hi

    r_norms = [rec["norms"]["R"] for rec in records]
    if linear:
        remainder_ok = all(v == 0.0 for v in r_norms)
    else:
        remainder_ok = all(b < a for a, b in zip(r_norms, r_norms[1:]))
    errors = [rec["darcy_error"] for rec in records]
    ratios = [rec["poincare_ratio"] for rec in records]
    return {
        "permeability_spd": permeability_spd,
        "energy_inequality": all(
            rec["energy_worst_slack"] >= -1e-10 * max(rec["energy_scale"], 1e-300) for rec in records
        ),
        "incompressibility": all(rec["max_divergence"] <= 1e-8 for rec in records),
        "accumulator_identity": all(rec["accumulator_identity"] <= 1e-12 for rec in records),
        "velocity_gradient_rate": within("grad_u_l2l2", 0.7, 1.3),
        "velocity_rate": within("u_l2l2", 1.7, 2.3),
        "convective_integral_rate": within("G", 1.5),
        "stress_integral_rate": within("H", 0.7),
        "remainder_decay": remainder_ok,
        "darcy_monotone": None not in errors and monotone_with_one_inversion(errors),
        "darcy_final_error": None not in errors and bool(errors) and errors[-1] < 0.25,
        "poincare_uniform": None not in ratios and bool(ratios) and max(ratios) / min(ratios) <= 3.0,
    }


class SweepWorkflow:
    """LangGraph workflow orchestration for the epsilon sweep"""

    def __init__(self, config: LabConfig, output_dir: Union[str, Path, None] = None, workers: Optional[int] = None):
        self.config = config
        self.output_dir = Path(output_dir) if output_dir else config.output_dir("sweep")
        self.workers = workers or config.sweep.workers
        self.graph = self._build_graph()

    def _build_graph(self) -> StateGraph:
        """Build the LangGraph workflow"""

        workflow = StateGraph(SweepState)

        # Add nodes
        workflow.add_node("solve_cell", self.solve_cell_node)
        workflow.add_node("solve_darcy", self.solve_darcy_node)
        workflow.add_node("run_micro", self.run_micro_node)
        workflow.add_node("analyze", self.analyze_node)
        workflow.add_node("write_report", self.write_report_node)

        # Define edges; a failed stage skips straight to the (partial) report
        workflow.set_entry_point("solve_cell")
        for stage, following in (
            ("solve_cell", "solve_darcy"),
            ("solve_darcy", "run_micro"),
            ("run_micro", "analyze"),
            ("analyze", "write_report"),
        ):
            workflow.add_conditional_edges(
                stage,
                self._check_result,
                {
                    "error": "write_report",
                    "continue": following,
                },
            )
        workflow.add_edge("write_report", END)

        return workflow.compile()

    def _check_result(self, state: SweepState) -> str:
        if state.get("status", "") == "error":
            return "error"
        return "continue"

    @traceable(name="solve_cell_node")
    def solve_cell_node(self, state: SweepState) -> Dict[str, Any]:
        """Node: periodic cell problems and the permeability tensor"""
        config = state["config"]
        s = config.solver
        try:
            mask = build_cell_mask(config.hole, config.cell_resolution)
            cell_config = CellConfig(
                mask=mask, penalty=s.penalty, tol=s.cell_tol, max_iter=s.max_iter, inner_solver=s.inner_solver
            )
            problem = CellProblem(cell_config)
            solutions = [problem.solve(1), problem.solve(2)]
            a = assemble_permeability(solutions)
            summary: Dict[str, Any] = {
                "n": config.cell_resolution,
                "porosity": mask.porosity,
                "kappa": problem.kappa,
                "eigenvalues": a.eigenvalues().tolist(),
                "asymmetry": a.asymmetry(),
                "spd": a.is_spd(),
                "residuals": [sol.residuals.residual_norm for sol in solutions],
                "energy_identity": [problem.energy_identity_defect(sol) for sol in solutions],
                "refinement": None,
            }
            if config.sweep.refinement:
                study = grid_refinement_study(
                    config.hole, config.sweep.refinement, tol=s.cell_tol, inner_solver=s.inner_solver
                )
                summary["refinement"] = study.model_dump(mode="json")
            return {"permeability": a, "cell_summary": summary, "status": "darcy"}
        except (HomogenizationError, ValueError) as e:
            return _failure(e)

    @traceable(name="solve_darcy_node")
    def solve_darcy_node(self, state: SweepState) -> Dict[str, Any]:
        """Node: Darcy limit on the grid of the finest epsilon"""
        config = state["config"]
        try:
            grid: GridSpec = config.domain_spec(min(config.sweep.epsilon_list)).grid()
            problem = DarcyProblem(
                A=state["permeability"],
                eta0=config.carreau.eta0,
                f=config.forcing.sample(grid),
                grid=grid,
                tol=config.solver.darcy_tol,
                max_iter=config.solver.max_iter,
            )
            solution = solve_darcy(problem)
            summary = {
                "nx": grid.nx,
                "ny": grid.ny,
                "iterations": solution.report.iterations,
                "residual": solution.report.residual_norm,
                "residuals": solution.residuals.model_dump(),
                "closure": "no-flux u.n = 0 on the boundary, mean-zero pressure",
            }
            return {"darcy": solution, "darcy_summary": summary, "status": "micro"}
        except (HomogenizationError, ValueError) as e:
            return _failure(e)

    @traceable(name="run_micro_node")
    def run_micro_node(self, state: SweepState) -> Dict[str, Any]:
        """Node: one micro run per epsilon, merged in sweep order"""
        config = state["config"]
        epsilons = list(config.sweep.epsilon_list)
        workers = state.get("workers", 1)
        try:
            if workers > 1:
                with ProcessPoolExecutor(max_workers=min(workers, len(epsilons))) as pool:
                    futures = [pool.submit(run_epsilon, config, eps) for eps in epsilons]
                    outcomes = [future.result() for future in futures]
            else:
                outcomes = [run_epsilon(config, eps) for eps in epsilons]
        except (HomogenizationError, ValueError) as e:
            return _failure(e)
        except BrokenProcessPool as e:
            # a worker died without raising (killed, out of memory)
            return _failure(e)
        warnings = [f"eps={o.epsilon:g}: {w}" for o in outcomes for w in o.run.summary.warnings]
        return {"micro_outcomes": outcomes, "warnings": warnings, "status": "analyzing"}

    @traceable(name="analyze_node")
    def analyze_node(self, state: SweepState) -> Dict[str, Any]:
        """Node: norms, rate fits, Darcy comparisons and acceptance flags"""
        config = state["config"]
        try:
            records = [epsilon_record(o, state.get("darcy"), state["config_hash"]) for o in state["micro_outcomes"]]
            rates: Dict[str, Optional[Dict[str, Any]]] = {}
            for name in NORM_NAMES:
                pairs = [(rec["epsilon"], rec["norms"][name]) for rec in records]
                if all(v > 0 for _, v in pairs):
                    rates[name] = fit_rate(pairs).model_dump()
                else:
                    rates[name] = None
            flags = acceptance_flags(
                records, rates, bool(state["cell_summary"].get("spd")), config.carreau.is_linear
            )
            return {"records": records, "rates": rates, "pass_flags": flags, "status": "analyzed"}
        except (HomogenizationError, ValueError) as e:
            return _failure(e)

    def build_report(self, state: SweepState) -> SweepReport:
        config = state["config"]
        a = state.get("permeability")
        failed = state.get("status") == "error"
        return SweepReport(
            complete=not failed,
            error=state.get("error_message") if failed else None,
            error_kind=state.get("error_kind") if failed else None,
            config=config.model_dump(mode="json"),
            config_hash=state["config_hash"],
            permeability=a.matrix.tolist() if a is not None else None,
            cell=state.get("cell_summary") or {},
            darcy=state.get("darcy_summary") or {},
            records=state.get("records") or [],
            rates=state.get("rates") or {},
            bound_exponents=bound_exponents(config.carreau.r),
            pass_flags=state.get("pass_flags") or {},
            labels={"darcy_monotone": DARCY_PROXY_LABEL, "pressure_error": PRESSURE_LABEL},
            warnings=state.get("warnings") or [],
        )

    @traceable(name="write_report_node")
    def write_report_node(self, state: SweepState) -> Dict[str, Any]:
        """Node: report.json, CSV tables, snapshots and README"""
        report = self.build_report(state)
        writer = ReportWriter(state["output_dir"])
        path = writer.write_json("report.json", report.model_dump(mode="json"))
        records = report.records
        writer.write_norms((rec["epsilon"], name, rec["norms"][name]) for rec in records for name in NORM_NAMES)
        writer.write_rates({k: v for k, v in report.rates.items() if v is not None})
        writer.write_darcy_compare((rec["epsilon"], rec["darcy_error"]) for rec in records)
        refinement = report.cell.get("refinement")
        if refinement:
            writer.write_refinement(RefinementStudy.model_validate(refinement))
        for outcome in state.get("micro_outcomes") or []:
            tag = f"{outcome.epsilon:g}"
            writer.write_ledger(outcome.run.ledger, f"ledger_eps_{tag}.csv")
            writer.write_mask(outcome.mask, f"mask_eps_{tag}.pgm")
            writer.write_snapshot(f"u_eps_{tag}.bin", outcome.run.state.u, "micro velocity")
        darcy = state.get("darcy")
        if darcy is not None:
            writer.write_snapshot("darcy_u.bin", darcy.u, "Darcy velocity")
            writer.write_snapshot("darcy_p.bin", darcy.p, "Darcy pressure")
        writer.write_run_meta("sweep", {"config_hash": report.config_hash, "workers": state.get("workers", 1)})
        summary = [f"complete: {report.complete}", f"config hash: {report.config_hash}"]
        summary += [f"{name}: {'pass' if ok else 'FAIL'}" for name, ok in sorted(report.pass_flags.items())]
        if report.error:
            summary.append(f"error: {report.error}")
        writer.create_readme("Homogenization sweep", summary)
        status = "error" if not report.complete else "completed"
        return {"status": status, "report_path": str(path)}

    def run(self) -> SweepReport:
        """Run the workflow"""
        initial_state: SweepState = {
            "config": self.config,
            "config_hash": config_hash(self.config),
            "output_dir": str(self.output_dir),
            "workers": self.workers,
            "permeability": None,
            "cell_summary": {},
            "darcy": None,
            "darcy_summary": {},
            "micro_outcomes": [],
            "records": [],
            "rates": {},
            "pass_flags": {},
            "warnings": [],
            "status": "cell",
            "error_message": None,
            "error_kind": None,
            "report_path": None,
        }

        result = self.graph.invoke(initial_state)
        return self.build_report(result)


def run_sweep(config: LabConfig, output_dir: Union[str, Path, None] = None, workers: Optional[int] = None) -> SweepReport:
    return SweepWorkflow(config, output_dir=output_dir, workers=workers).run()
