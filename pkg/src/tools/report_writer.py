import csv
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from src.geometry.masks import SolidMask, export_mask_pgm
from src.grid.fields import GridSpec, ScalarField, StaggeredVectorField
from src.solvers.cell_problem import RefinementStudy
from src.solvers.micro_solver import EnergyLedger
from src.tools.analysis import RateFit

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

LEDGER_COLUMNS = ("step", "t", "kinetic", "dissipation_cum", "work_cum", "slack")
REFINEMENT_COLUMNS = (
    "n", "a11", "a12", "a21", "a22", "residual", "iterations", "porosity",
    "solid_defect", "a11_corrected", "a22_corrected",
)


def _sanitize(name: str) -> str:
    """Sanitize a file stem for the filesystem"""
    return "".join(c if c.isalnum() or c in ("-", "_", ".") else "_" for c in name).strip()


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_refinement_csv(study: RefinementStudy, path: Union[str, Path]) -> Path:
    return write_csv(path, REFINEMENT_COLUMNS, ([getattr(r, c) for c in REFINEMENT_COLUMNS] for r in study.rows))


def write_snapshot(path: Union[str, Path], field: Union[ScalarField, StaggeredVectorField],
                   name: str, units: str = "nondimensional") -> Tuple[Path, Path]:
    """
    Raw little-endian float64 values, row-major, plus a JSON sidecar.

    A velocity stores the u face array followed by the v face array; the
    sidecar lists the shape and element offset of each component.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(field, StaggeredVectorField):
        parts = [("u", field.u), ("v", field.v)]
        location = "faces"
    else:
        parts = [("p", field.values)]
        location = "centers"
    components = []
    offset = 0
    with open(path, "wb") as f:
        for label, arr in parts:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))
            components.append({"name": label, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = {
        "field": name,
        "units": units,
        "location": location,
        "dtype": "<f8",
        "order": "C",
        "grid": field.grid.model_dump(),
        "components": components,
    }
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, sidecar


def read_snapshot(path: Union[str, Path]) -> Union[ScalarField, StaggeredVectorField]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    grid = GridSpec(**meta["grid"])
    data = np.fromfile(path, dtype="<f8")
    arrays = []
    for comp in meta["components"]:
        size = int(np.prod(comp["shape"]))
        arrays.append(data[comp["offset"]:comp["offset"] + size].reshape(comp["shape"]))
    if meta["location"] == "faces":
        return StaggeredVectorField(grid, arrays[0], arrays[1])
    return ScalarField(grid, arrays[0])


class ReportWriter:
    """Organizes the artifacts of one run under its output directory"""

    def __init__(self, output_dir: Union[str, Path]):
        """
        Initialize ReportWriter.

        Args:
            output_dir: Directory for every artifact of the run; created if missing
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.files: List[str] = []

    def _path(self, filename: str) -> Path:
        path = self.output_dir / _sanitize(filename)
        if path.name not in self.files:
            self.files.append(path.name)
        return path

    def write_json(self, filename: str, payload: Dict[str, Any]) -> Path:
        """Sorted keys and fixed indentation so equal payloads give equal bytes"""
        path = self._path(filename)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def write_table(self, filename: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        return write_csv(self._path(filename), header, rows)

    def write_ledger(self, ledger: EnergyLedger, filename: str = "ledger.csv") -> Path:
        rows = ([getattr(e, c) for c in LEDGER_COLUMNS] for e in ledger.entries)
        return self.write_table(filename, LEDGER_COLUMNS, rows)

    def write_norms(self, rows: Iterable[Tuple[float, str, float]]) -> Path:
        return self.write_table("norms.csv", ("epsilon", "norm_name", "value"), rows)

    def write_rates(self, fits: Dict[str, RateFit]) -> Path:
        rows = ((name, fit.slope, fit.residual) for name, fit in sorted(fits.items()))
        return self.write_table("rates.csv", ("norm_name", "slope", "residual"), rows)

    def write_darcy_compare(self, rows: Iterable[Tuple[float, float]]) -> Path:
        return self.write_table("darcy_compare.csv", ("epsilon", "rel_error"), rows)

    def write_refinement(self, study: RefinementStudy) -> Path:
        return write_refinement_csv(study, self._path("refinement.csv"))

    def write_snapshot(self, filename: str, field, name: str, units: str = "nondimensional") -> Path:
        path, sidecar = write_snapshot(self._path(filename), field, name, units)
        self._path(sidecar.name)
        return path

    def write_mask(self, mask: SolidMask, filename: str = "mask.pgm") -> Path:
        return export_mask_pgm(mask, self._path(filename))

    def write_run_meta(self, command: str, extra: Dict[str, Any] = None) -> Path:
        """Timestamps live here so that report.json stays byte-reproducible"""
        meta = {
            "command": command,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "schema_version": SCHEMA_VERSION,
        }
        meta.update(extra or {})
        return self.write_json("run_meta.json", meta)

    def create_readme(self, title: str, lines: Sequence[str]) -> Path:
        """Create README for the run"""
        readme_file = self._path("README.md")
        with open(readme_file, "w", encoding="utf-8") as f:
            f.write(f"# {title}\n\n")
            f.write("## Summary\n\n")
            for line in lines:
                f.write(f"- {line}\n")
            f.write("\n## Files\n\n")
            for name in sorted(self.files):
                f.write(f"- `{name}`\n")
        logger.info("wrote %d artifacts to %s", len(self.files), self.output_dir)
        return readme_file
