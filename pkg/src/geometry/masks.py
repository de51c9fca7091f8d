"""
Solid masks for the unit cell Q0 \\ T and the perforated domain Omega_eps
"""
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from src.geometry.holes import DomainSpec, HoleShape
from src.grid.fields import GridSpec
from src.utils.errors import StructuralError

logger = logging.getLogger(__name__)


class SolidMask:
    """Per-cell solid flag on a grid; porosity is cached at construction"""

    def __init__(self, grid: GridSpec, solid):
        solid = np.array(solid, dtype=bool)
        if solid.shape != grid.center_shape:
            raise StructuralError(f"mask shape {solid.shape} does not match grid {grid.center_shape}")
        solid.setflags(write=False)
        self.grid = grid
        self.solid = solid
        self.porosity = float(np.count_nonzero(~solid)) / float(grid.n_cells)

    @property
    def fluid(self) -> np.ndarray:
        return ~self.solid

    def fluid_cells(self) -> np.ndarray:
        """Flat boolean selector of fluid cells"""
        return self.fluid.ravel()

    def n_solid(self) -> int:
        return int(np.count_nonzero(self.solid))

    def pinned_u(self) -> np.ndarray:
        """u faces touching a solid cell or lying on a wall"""
        g = self.grid
        if g.periodic_x:
            return self.solid | np.roll(self.solid, 1, axis=0)
        pinned = np.ones(g.u_shape, dtype=bool)
        pinned[1:-1, :] = self.solid[:-1, :] | self.solid[1:, :]
        return pinned

    def pinned_v(self) -> np.ndarray:
        g = self.grid
        if g.periodic_y:
            return self.solid | np.roll(self.solid, 1, axis=1)
        pinned = np.ones(g.v_shape, dtype=bool)
        pinned[:, 1:-1] = self.solid[:, :-1] | self.solid[:, 1:]
        return pinned

    def free_faces(self) -> np.ndarray:
        """Flat boolean selector of velocity unknowns that are not pinned to zero"""
        return ~np.concatenate([self.pinned_u().ravel(), self.pinned_v().ravel()])

    def solid_faces(self) -> np.ndarray:
        """Flat boolean selector of faces touching a solid cell (walls excluded)"""
        g = self.grid
        su = self.solid | np.roll(self.solid, 1, axis=0)
        sv = self.solid | np.roll(self.solid, 1, axis=1)
        if not g.periodic_x:
            su = np.zeros(g.u_shape, dtype=bool)
            su[1:-1, :] = self.solid[:-1, :] | self.solid[1:, :]
            su[0, :] = self.solid[0, :]
            su[-1, :] = self.solid[-1, :]
        if not g.periodic_y:
            sv = np.zeros(g.v_shape, dtype=bool)
            sv[:, 1:-1] = self.solid[:, :-1] | self.solid[:, 1:]
            sv[:, 0] = self.solid[:, 0]
            sv[:, -1] = self.solid[:, -1]
        return np.concatenate([su.ravel(), sv.ravel()])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SolidMask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.solid, other.solid)

    def __hash__(self) -> int:
        return hash((self.grid, self.solid.tobytes()))

    def __repr__(self) -> str:
        return f"SolidMask({self.grid.nx}x{self.grid.ny}, porosity={self.porosity:.4f})"


def build_cell_mask(hole: HoleShape, n: int) -> SolidMask:
    """Staircase Q0 \\ T on a periodic n x n grid: a cell is solid iff its center is in T"""
    hole.check_containment()
    grid = GridSpec.unit_cell(n)
    x, y = grid.center_coords()
    return SolidMask(grid, hole.contains(x, y))


def build_perforated_mask(spec: DomainSpec) -> SolidMask:
    """
    Stamp the cell mask into every epsilon-cell of K_eps.

    Epsilon-cell k spans global cells [cpe*k - cpe/2, cpe*k + cpe/2), so the
    stamp is a pure index copy of build_cell_mask(hole, cpe).
    """
    spec.hole.check_containment()
    grid = spec.grid()
    cpe = spec.cells_per_eps
    half = cpe // 2
    local = build_cell_mask(spec.hole, cpe).solid
    kx_range, ky_range = spec.interior_cells()

    ix = np.arange(grid.nx) + half
    iy = np.arange(grid.ny) + half
    kx, lx = ix // cpe, ix % cpe
    ky, ly = iy // cpe, iy % cpe
    in_x = (kx >= kx_range.start) & (kx < kx_range.stop)
    in_y = (ky >= ky_range.start) & (ky < ky_range.stop)
    solid = local[np.ix_(lx, ly)] & np.outer(in_x, in_y)
    mask = SolidMask(grid, solid)
    logger.debug("perforated mask eps=%g: %d holes, porosity %.4f", spec.epsilon, count_holes(mask, spec), mask.porosity)
    return mask


def porosity(mask: SolidMask) -> float:
    return mask.porosity


def _eps_blocks(mask: SolidMask, spec: DomainSpec) -> np.ndarray:
    """Solid flags regrouped per epsilon-cell (half-cell collar blocks included)"""
    cpe = spec.cells_per_eps
    half = cpe // 2
    nx_eps, ny_eps = spec.eps_cells()
    padded = np.pad(mask.solid, half, constant_values=False)
    return padded.reshape(nx_eps + 1, cpe, ny_eps + 1, cpe)


def count_holes(mask: SolidMask, spec: DomainSpec) -> int:
    """Number of epsilon-cells containing at least one solid cell"""
    return int(np.count_nonzero(_eps_blocks(mask, spec).any(axis=(1, 3))))


def collar_is_fluid(mask: SolidMask, spec: DomainSpec) -> bool:
    """True when no solid cell lies within epsilon/2 of the outer boundary"""
    half = spec.cells_per_eps // 2
    s = mask.solid
    return not (s[:half].any() or s[-half:].any() or s[:, :half].any() or s[:, -half:].any())


def export_mask_pgm(mask: SolidMask, path: Union[str, Path], binary: bool = True) -> Path:
    """
    Write the mask as a portable graymap, fluid white and solid black.

    Rows run from top (largest y) to bottom. ``binary`` selects P5 (written
    with Pillow) over the plain-text P2 variant.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.ascontiguousarray(np.where(mask.solid, 0, 255).astype(np.uint8).T[::-1])
    if binary:
        Image.fromarray(pixels).save(path, format="PPM")
    else:
        rows = "\n".join(" ".join(str(int(p)) for p in row) for row in pixels)
        path.write_text(f"P2\n{pixels.shape[1]} {pixels.shape[0]}\n255\n{rows}\n", encoding="ascii")
    return path
