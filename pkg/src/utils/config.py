import hashlib
import json
import logging
import os
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.geometry.holes import DomainSpec, HoleShape
from src.solvers.micro_solver import ForcingSpec, MicroConfig
from src.solvers.saddle_point import InnerSolver
from src.solvers.viscosity import CarreauParams
from src.utils.errors import ConfigurationError

load_dotenv()

SECTIONS = ("domain", "hole", "carreau", "forcing", "solver", "sweep")


class Config:
    """Environment configuration"""

    LANGSMITH_API_KEY = os.getenv("LANGSMITH_API_KEY")
    LANGSMITH_PROJECT = os.getenv("LANGSMITH_PROJECT", "homogenization-lab")

    LOG_LEVEL = os.getenv("HOMOG_LOG_LEVEL", "WARNING").upper()
    WORKERS = os.getenv("HOMOG_WORKERS", "1")

    # Output Settings
    BASE_DIR = Path(__file__).parent.parent.parent
    OUTPUT_DIR = Path(os.getenv("HOMOG_OUTPUT_DIR", str(BASE_DIR / "outputs")))

    @classmethod
    def get_output_dir(cls, run_name: str = None) -> Path:
        """
        Get output directory, optionally one per run.

        Args:
            run_name: Name of the run (e.g., "sweep", "micro eps=0.25")

        Returns:
            Path to output directory. If run_name provided, returns
            {OUTPUT_DIR}/{run_name_clean}/, otherwise {OUTPUT_DIR}/
        """
        if run_name:
            clean = "".join(c if c.isalnum() or c in ("-", "_", ".") else "_" for c in run_name.strip())
            return cls.OUTPUT_DIR / clean.lower()
        return cls.OUTPUT_DIR

    @classmethod
    def workers(cls) -> int:
        try:
            return int(cls.WORKERS)
        except ValueError:
            raise ConfigurationError(f"HOMOG_WORKERS must be an integer, got {cls.WORKERS!r}")

    @classmethod
    def validate(cls):
        """Validate environment configuration"""
        if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigurationError(f"HOMOG_LOG_LEVEL {cls.LOG_LEVEL!r} is not a logging level")
        if cls.workers() < 1:
            raise ConfigurationError("HOMOG_WORKERS must be >= 1")


def setup_logging(quiet: bool = False) -> None:
    level = logging.ERROR if quiet else getattr(logging, Config.LOG_LEVEL, logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


class DomainSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lx: float = Field(default=1.0, gt=0)  # length
    ly: float = Field(default=1.0, gt=0)
    epsilon: float = Field(default=0.25, gt=0, le=1.0)  # used by the single-run commands
    cells_per_eps: int = Field(default=16, ge=8)


class SolverSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dt: float = Field(default=0.1, gt=0)
    t_end: float = Field(default=1.0, gt=0)
    picard_tol: float = Field(default=1e-9, gt=0)
    picard_max: int = Field(default=50, ge=1)
    linear_tol: float = Field(default=1e-12, gt=0, le=1e-4)
    cell_tol: float = Field(default=1e-10, gt=0, le=1e-4)
    darcy_tol: float = Field(default=1e-10, gt=0, le=1e-4)
    max_iter: int = Field(default=20000, ge=1)
    penalty: Optional[float] = Field(default=None, gt=0)  # None: 1e-8 h^2
    cell_resolution: Optional[int] = Field(default=None, ge=8)  # None: cells_per_eps
    inner_solver: InnerSolver = "direct"
    steady_tol: float = Field(default=1e-8, gt=0)
    convection: Literal["upwind", "skew"] = "upwind"
    fast_forward: bool = True


class SweepSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilon_list: List[float] = Field(default_factory=lambda: [0.25, 0.125, 0.0625])
    workers: int = Field(default=1, ge=1)
    refinement: List[int] = Field(default_factory=lambda: [32, 64, 128])
    output_dir: Optional[str] = None

    @field_validator("epsilon_list")
    @classmethod
    def _check_epsilons(cls, values: List[float]) -> List[float]:
        if len(values) < 3:
            raise ValueError(f"a sweep needs at least 3 epsilon values, got {len(values)}")
        if any(e <= 0 or e > 1 for e in values):
            raise ValueError("epsilon values must lie in (0, 1]")
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ValueError("epsilon_list must be strictly descending")
        return values

    @field_validator("refinement")
    @classmethod
    def _check_refinement(cls, values: List[int]) -> List[int]:
        # empty disables the cell refinement study
        if not values:
            return values
        if len(values) < 3 or any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError(f"refinement needs >= 3 ascending resolutions, got {values}")
        if any(n < 8 or n % 2 for n in values):
            raise ValueError("refinement resolutions must be even and >= 8")
        return values


class LabConfig(BaseModel):
    """Validated run configuration: the six documented sections"""

    model_config = ConfigDict(extra="forbid")

    domain: DomainSection = Field(default_factory=DomainSection)
    hole: HoleShape = Field(default_factory=HoleShape)
    carreau: CarreauParams = Field(default_factory=CarreauParams)
    forcing: ForcingSpec = Field(default_factory=ForcingSpec)
    solver: SolverSection = Field(default_factory=SolverSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    @model_validator(mode="after")
    def _check_geometry(self) -> "LabConfig":
        self.hole.check_containment()
        for eps in [self.domain.epsilon] + list(self.sweep.epsilon_list):
            self.domain_spec(eps).eps_cells()
        if self.solver.t_end < self.solver.dt:
            raise ValueError(f"t_end = {self.solver.t_end} must be >= dt = {self.solver.dt}")
        return self

    def domain_spec(self, epsilon: Optional[float] = None) -> DomainSpec:
        return DomainSpec(
            lx=self.domain.lx,
            ly=self.domain.ly,
            epsilon=self.domain.epsilon if epsilon is None else epsilon,
            hole=self.hole,
            cells_per_eps=self.domain.cells_per_eps,
        )

    def micro_config(self, epsilon: Optional[float] = None) -> MicroConfig:
        s = self.solver
        return MicroConfig(
            domain=self.domain_spec(epsilon),
            params=self.carreau,
            forcing=self.forcing,
            dt=s.dt,
            t_end=s.t_end,
            picard_tol=s.picard_tol,
            picard_max=s.picard_max,
            linear_tol=s.linear_tol,
            max_iter=s.max_iter,
            inner_solver=s.inner_solver,
            steady_tol=s.steady_tol,
            convection=s.convection,
            fast_forward=s.fast_forward,
        )

    @property
    def cell_resolution(self) -> int:
        n = self.solver.cell_resolution or self.domain.cells_per_eps
        if n % 2:
            raise ConfigurationError(f"cell_resolution must be even, got {n}")
        return n

    def output_dir(self, run_name: str) -> Path:
        if self.sweep.output_dir:
            return Path(self.sweep.output_dir)
        return Config.get_output_dir(run_name)


def canonical_json(config: LabConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(config: LabConfig) -> str:
    """SHA-256 of the canonical JSON dump of the validated configuration"""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def load_lab_config(path: Union[str, Path, None]) -> LabConfig:
    """
    Load and validate a YAML configuration.

    Args:
        path: YAML file; None returns the built-in defaults

    Returns:
        LabConfig with every section validated
    """
    if path is None:
        return LabConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{path}: invalid YAML: {e}")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping of sections {SECTIONS}")
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(f"{path}: unknown section(s) {unknown}; expected {SECTIONS}")
    try:
        return LabConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"{path}: {e}")
