"""
Post-processing shared by the sweep: zero extension, epsilon-cell averages,
log-log rate fits and micro versus Darcy comparisons.
"""
import logging
import math
from typing import Iterable, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel

from src.geometry.masks import SolidMask
from src.grid.fields import GridSpec, ScalarField, StaggeredVectorField
from src.grid.operators import face_to_center
from src.solvers.darcy_solver import DarcySolution
from src.utils.errors import ConfigurationError, ContractViolation, DomainError, StructuralError

logger = logging.getLogger(__name__)

ZERO_EXTENSION_TOL = 1e-10


class RateFit(BaseModel):
    """Least-squares line through (log eps, log norm)"""

    slope: float
    intercept: float
    residual: float  # RMS of the log residuals
    n_points: int


def zero_extend(u: StaggeredVectorField, mask: SolidMask) -> StaggeredVectorField:
    """
    View a velocity on Omega_eps as a field on the whole rectangle.

    The micro solution is stored on the full grid already, so this only
    checks that nothing lives on a face of a solid cell.
    """
    if u.grid != mask.grid:
        raise StructuralError("velocity and mask are built on different grids")
    vec = u.to_flat()
    worst = float(np.abs(vec[mask.solid_faces()]).max(initial=0.0))
    if worst > ZERO_EXTENSION_TOL:
        raise ContractViolation(f"velocity is {worst:.3e} on a solid cell; cannot extend by zero")
    return u.copy()


def _block_size(grid: GridSpec, eps: float) -> int:
    ratio = eps / grid.hx
    cpe = int(round(ratio))
    if cpe < 1 or abs(ratio - cpe) > 1e-9 * ratio or grid.nx % cpe or grid.ny % cpe:
        raise ConfigurationError(
            f"grid {grid.nx}x{grid.ny} (h = {grid.hx:.6g}) cannot be split into epsilon-cells of size {eps}"
        )
    if abs(eps / grid.hy - cpe) > 1e-9 * ratio:
        raise ConfigurationError("cell averaging needs hx = hy")
    return cpe


def _blocks(values: np.ndarray, cpe: int) -> np.ndarray:
    nx, ny = values.shape
    return values.reshape(nx // cpe, cpe, ny // cpe, cpe)


def cell_average(field: Union[ScalarField, StaggeredVectorField], eps: float) -> np.ndarray:
    """
    Mean over every epsilon-cell [k eps, (k+1) eps) x [l eps, (l+1) eps).

    A scalar field gives an (N, M) array, a velocity a (2, N, M) array of
    face values averaged to centers first.
    """
    cpe = _block_size(field.grid, eps)
    if isinstance(field, ScalarField):
        return _blocks(field.values, cpe).mean(axis=(1, 3))
    if isinstance(field, StaggeredVectorField):
        uc, vc = face_to_center(field)
        return np.stack([_blocks(uc, cpe).mean(axis=(1, 3)), _blocks(vc, cpe).mean(axis=(1, 3))])
    raise StructuralError(f"cannot cell-average {type(field).__name__}")


def fit_rate(pairs: Iterable[Tuple[float, float]]) -> RateFit:
    pairs = list(pairs)
    if len(pairs) < 3:
        raise DomainError(f"a rate fit needs at least 3 points, got {len(pairs)}")
    eps = np.array([p[0] for p in pairs], dtype=float)
    norms = np.array([p[1] for p in pairs], dtype=float)
    if np.any(norms <= 0) or np.any(~np.isfinite(norms)):
        raise DomainError(f"rate fits need positive finite norms, got {norms.tolist()}")
    if np.any(eps <= 0):
        raise DomainError("epsilon values must be positive")
    x, y = np.log(eps), np.log(norms)
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = math.sqrt(float(np.mean((y - design @ np.array([slope, intercept])) ** 2)))
    return RateFit(slope=float(slope), intercept=float(intercept), residual=residual, n_points=len(pairs))


def _check_compatible(a: GridSpec, b: GridSpec) -> None:
    if (a.lx, a.ly, a.x0, a.y0) != (b.lx, b.ly, b.x0, b.y0) or a.periodic_x or b.periodic_x:
        raise ConfigurationError("micro and Darcy fields live on different rectangles")


def _relative(diff: np.ndarray, ref: np.ndarray) -> float:
    ref_norm = float(np.linalg.norm(ref))
    diff_norm = float(np.linalg.norm(diff))
    if ref_norm == 0.0:
        return diff_norm
    return diff_norm / ref_norm


def compare_to_darcy(u_micro: StaggeredVectorField, darcy: DarcySolution, eps: float,
                     mask: Optional[SolidMask] = None) -> float:
    """Relative error of eps^-2 times the epsilon-cell averages of u against those of the Darcy velocity"""
    _check_compatible(u_micro.grid, darcy.u.grid)
    if mask is not None:
        u_micro = zero_extend(u_micro, mask)
    micro = cell_average(u_micro, eps) / eps ** 2
    limit = cell_average(darcy.u, eps)
    return _relative(micro - limit, limit)


def compare_pressure(p_micro: ScalarField, mask: SolidMask, darcy: DarcySolution, eps: float) -> float:
    """
    Relative error of the epsilon-cell averaged micro pressure against the
    Darcy pressure; the micro average runs over fluid cells only and both
    are gauged to mean zero.
    """
    _check_compatible(p_micro.grid, darcy.p.grid)
    cpe = _block_size(p_micro.grid, eps)
    fluid = _blocks(mask.fluid.astype(float), cpe).sum(axis=(1, 3))
    total = _blocks(np.where(mask.fluid, p_micro.values, 0.0), cpe).sum(axis=(1, 3))
    micro = total / np.maximum(fluid, 1.0)
    limit = cell_average(darcy.p, eps)
    return _relative((micro - micro.mean()) - (limit - limit.mean()), limit - limit.mean())
