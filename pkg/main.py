#!/usr/bin/env python3
"""
Main entry point - Homogenization Lab
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from src.utils.config import Config, LabConfig, config_hash, load_lab_config, setup_logging
from src.utils.errors import (
    ConfigurationError,
    DomainError,
    HomogenizationError,
    NumericalError,
    SolverError,
)

load_dotenv()

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_IO = 3

SOLVER_FAILURES = ("SolverError", "DegenerateProblemError", "MicroStepError", "NumericalError", "BrokenProcessPool")


class LabArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the configuration code"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


class Console:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def say(self, message: str = ""):
        if not self.quiet:
            print(message)


def build_parser() -> argparse.ArgumentParser:
    parser = LabArgumentParser(prog="homog", description="Numerical homogenization lab: Carreau-Yasuda flow to Darcy")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML configuration file")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--quiet", action="store_true", help="only errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=LabArgumentParser)
    sub.add_parser("cell", parents=[common], help="permeability tensor from the hole spec")
    sub.add_parser("micro", parents=[common], help="single micro run at domain.epsilon")
    sub.add_parser("darcy", parents=[common], help="homogenized Darcy solve")
    sub.add_parser("sweep", parents=[common], help="full epsilon sweep with report")
    sub.add_parser("verify", parents=[common], help="property suite on 16x16 grids")
    return parser


def _output_dir(args, config: LabConfig, name: str) -> Path:
    return args.out if args.out is not None else config.output_dir(name)


def run_cell(args, config: LabConfig, console: Console) -> int:
    from src.geometry.masks import build_cell_mask
    from src.solvers.cell_problem import CellConfig, solve_permeability
    from src.tools.report_writer import ReportWriter

    s = config.solver
    mask = build_cell_mask(config.hole, config.cell_resolution)
    a, solutions = solve_permeability(
        CellConfig(mask=mask, penalty=s.penalty, tol=s.cell_tol, max_iter=s.max_iter, inner_solver=s.inner_solver)
    )
    writer = ReportWriter(_output_dir(args, config, "cell"))
    writer.write_json(
        "permeability.json",
        {
            "A": a.matrix.tolist(),
            "eigenvalues": a.eigenvalues().tolist(),
            "asymmetry": a.asymmetry(),
            "porosity": mask.porosity,
            "n": config.cell_resolution,
            "config_hash": config_hash(config),
            "residuals": [sol.residuals.residual_norm for sol in solutions],
        },
    )
    writer.write_mask(mask, "cell_mask.pgm")
    writer.write_run_meta("cell", {"config_hash": config_hash(config)})
    console.say(f"✅ A = {a.matrix.tolist()}")
    console.say(f"📁 Output: {writer.output_dir}")
    return EXIT_OK


def run_micro_command(args, config: LabConfig, console: Console) -> int:
    from src.geometry.masks import build_perforated_mask
    from src.solvers.diagnostics import poincare_probe, scaling_norms, stress_remainder_norms
    from src.solvers.micro_solver import energy_check, run_micro
    from src.tools.report_writer import ReportWriter

    micro = config.micro_config()
    mask = build_perforated_mask(micro.domain)
    run = run_micro(micro, mask)
    norms = scaling_norms(run)
    writer = ReportWriter(_output_dir(args, config, f"micro_eps_{micro.epsilon:g}"))
    writer.write_ledger(run.ledger)
    try:
        poincare = poincare_probe(run.state, micro.epsilon)
    except DomainError:
        poincare = None
    writer.write_json(
        "norms.json",
        {
            "epsilon": micro.epsilon,
            "config_hash": config_hash(config),
            "norms": norms.values(),
            "bound_exponents": norms.bound_exponents(),
            "remainder": stress_remainder_norms(run.integrals).model_dump(),
            "poincare_ratio": poincare,
            "energy_worst_slack": energy_check(run.ledger),
            "summary": run.summary.model_dump(),
        },
    )
    writer.write_snapshot("u_final.bin", run.state.u, "micro velocity")
    writer.write_snapshot("p_final.bin", run.state.p, "micro pressure")
    writer.write_mask(mask)
    writer.write_run_meta("micro", {"config_hash": config_hash(config)})
    for message in run.summary.warnings:
        console.say(f"⚠️  {message}")
    console.say(f"✅ eps={micro.epsilon:g}: {run.summary.steps_solved} steps solved, steady={run.summary.steady}")
    console.say(f"📁 Output: {writer.output_dir}")
    return EXIT_OK


def run_darcy_command(args, config: LabConfig, console: Console) -> int:
    from src.solvers.cell_problem import permeability_for_hole
    from src.solvers.darcy_solver import DarcyProblem, solve_darcy
    from src.tools.report_writer import ReportWriter

    s = config.solver
    a, _ = permeability_for_hole(config.hole, config.cell_resolution, tol=s.cell_tol, penalty=s.penalty,
                                 inner_solver=s.inner_solver)
    grid = config.domain_spec().grid()
    solution = solve_darcy(
        DarcyProblem(A=a, eta0=config.carreau.eta0, f=config.forcing.sample(grid), grid=grid,
                     tol=s.darcy_tol, max_iter=s.max_iter)
    )
    writer = ReportWriter(_output_dir(args, config, "darcy"))
    writer.write_json(
        "darcy.json",
        {
            "A": a.matrix.tolist(),
            "config_hash": config_hash(config),
            "iterations": solution.report.iterations,
            "residuals": solution.residuals.model_dump(),
        },
    )
    writer.write_snapshot("darcy_u.bin", solution.u, "Darcy velocity")
    writer.write_snapshot("darcy_p.bin", solution.p, "Darcy pressure")
    writer.write_run_meta("darcy", {"config_hash": config_hash(config)})
    console.say(f"✅ Darcy solve: {solution.report.iterations} CG iterations, residuals {solution.residuals.model_dump()}")
    console.say(f"📁 Output: {writer.output_dir}")
    return EXIT_OK


def run_sweep_command(args, config: LabConfig, console: Console) -> int:
    from src.graph.sweep_graph import run_sweep

    output_dir = _output_dir(args, config, "sweep")
    workers = max(config.sweep.workers, Config.workers())
    report = run_sweep(config, output_dir=output_dir, workers=workers)
    for name, ok in sorted(report.pass_flags.items()):
        console.say(f"   {'✅' if ok else '❌'} {name}")
    console.say(f"📁 Output: {output_dir}")
    if not report.complete:
        print(f"❌ Sweep incomplete: {report.error_kind}: {report.error}", file=sys.stderr)
        return EXIT_SOLVER if report.error_kind in SOLVER_FAILURES else EXIT_CONFIG
    return EXIT_OK


def run_verify(args, config: LabConfig, console: Console) -> int:
    from src.tools.verification import run_verification

    results = run_verification(config)
    for result in results:
        console.say(f"   {'✅' if result.passed else '❌'} {result.name}: {result.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"❌ verify failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SOLVER
    console.say("✨ All checks passed")
    return EXIT_OK


COMMANDS = {
    "cell": run_cell,
    "micro": run_micro_command,
    "darcy": run_darcy_command,
    "sweep": run_sweep_command,
    "verify": run_verify,
}


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and map failures to exit codes"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    console = Console(args.quiet)
    setup_logging(args.quiet)

    try:
        Config.validate()
        config = load_lab_config(args.config)
        console.say(f"🧮 Homogenization Lab - {args.command}")
        console.say(f"📊 LangSmith Project: {Config.LANGSMITH_PROJECT}")
        return COMMANDS[args.command](args, config, console)
    except (ConfigurationError, DomainError, ValidationError) as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, NumericalError) as e:
        print(f"❌ Solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"❌ I/O failure: {e}", file=sys.stderr)
        return EXIT_IO
    except HomogenizationError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(cli_main())
