from typing import Any, Dict, List, Optional, TypedDict

from pydantic import BaseModel, Field
from typing_extensions import Annotated
import operator

from src.solvers.cell_problem import PermeabilityTensor
from src.solvers.darcy_solver import DarcySolution
from src.tools.analysis import RateFit
from src.utils.config import LabConfig


class SweepState(TypedDict):
    """State for the epsilon-sweep workflow"""
    # Input
    config: LabConfig
    config_hash: str
    output_dir: str
    workers: int

    # Cell problem
    permeability: Optional[PermeabilityTensor]
    cell_summary: Dict[str, Any]  # residuals, energy identity, refinement table

    # Limit problem
    darcy: Optional[DarcySolution]
    darcy_summary: Dict[str, Any]

    # Micro runs, one outcome per epsilon in sweep order
    micro_outcomes: Annotated[List[Any], operator.add]

    # Analysis
    records: List[Dict[str, Any]]
    rates: Dict[str, Optional[Dict[str, Any]]]
    pass_flags: Dict[str, bool]
    warnings: Annotated[List[str], operator.add]

    # Status
    status: str  # "cell", "darcy", "micro", "analyzed", "completed", "error"
    error_message: Optional[str]
    error_kind: Optional[str]  # exception class that stopped the sweep
    report_path: Optional[str]


class SweepReport(BaseModel):
    """Body of report.json; deterministic for a given configuration"""

    schema_version: str = "1.0"
    complete: bool = True
    error: Optional[str] = None
    error_kind: Optional[str] = None
    config: Dict[str, Any]
    config_hash: str
    permeability: Optional[List[List[float]]] = None
    cell: Dict[str, Any] = Field(default_factory=dict)
    darcy: Dict[str, Any] = Field(default_factory=dict)
    records: List[Dict[str, Any]] = Field(default_factory=list)
    rates: Dict[str, Optional[RateFit]] = Field(default_factory=dict)
    bound_exponents: Dict[str, Optional[float]] = Field(default_factory=dict)
    pass_flags: Dict[str, bool] = Field(default_factory=dict)
    labels: Dict[str, str] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.complete and all(self.pass_flags.values())
