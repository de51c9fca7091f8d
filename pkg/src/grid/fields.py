"""
Grid specification and value-semantic fields on a MAC (staggered) grid.

Arrays are indexed [i, j] with i along x and j along y and flattened in C
order. Pressure-like quantities live at cell centers, the x-velocity on
vertical faces, the y-velocity on horizontal faces. A wall axis carries
n + 1 faces (both boundary faces included), a periodic axis n faces.
"""
from typing import Callable, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.utils.errors import StructuralError


class GridSpec(BaseModel):
    """Uniform rectangular grid; hashable so operators can be cached per grid"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    nx: int = Field(ge=4)
    ny: int = Field(ge=4)
    lx: float = Field(gt=0)
    ly: float = Field(gt=0)
    periodic_x: bool = False
    periodic_y: bool = False
    x0: float = 0.0  # left edge
    y0: float = 0.0  # bottom edge

    @classmethod
    def unit_cell(cls, n: int) -> "GridSpec":
        """Periodic grid on Q0 = (-1/2, 1/2)^2"""
        return cls(nx=n, ny=n, lx=1.0, ly=1.0, periodic_x=True, periodic_y=True, x0=-0.5, y0=-0.5)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy

    @property
    def center_shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def u_shape(self) -> Tuple[int, int]:
        return (self.nx if self.periodic_x else self.nx + 1, self.ny)

    @property
    def v_shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny if self.periodic_y else self.ny + 1)

    @property
    def node_shape(self) -> Tuple[int, int]:
        return (self.u_shape[0], self.v_shape[1])

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_faces(self) -> int:
        return int(np.prod(self.u_shape) + np.prod(self.v_shape))

    def _axis_points(self, n: int, h: float, origin: float, periodic: bool, staggered: bool) -> np.ndarray:
        if staggered:
            count = n if periodic else n + 1
            return origin + h * np.arange(count)
        return origin + h * (np.arange(n) + 0.5)

    def center_coords(self) -> Tuple[np.ndarray, np.ndarray]:
        x = self._axis_points(self.nx, self.hx, self.x0, self.periodic_x, False)
        y = self._axis_points(self.ny, self.hy, self.y0, self.periodic_y, False)
        return np.meshgrid(x, y, indexing="ij")

    def u_coords(self) -> Tuple[np.ndarray, np.ndarray]:
        x = self._axis_points(self.nx, self.hx, self.x0, self.periodic_x, True)
        y = self._axis_points(self.ny, self.hy, self.y0, self.periodic_y, False)
        return np.meshgrid(x, y, indexing="ij")

    def v_coords(self) -> Tuple[np.ndarray, np.ndarray]:
        x = self._axis_points(self.nx, self.hx, self.x0, self.periodic_x, False)
        y = self._axis_points(self.ny, self.hy, self.y0, self.periodic_y, True)
        return np.meshgrid(x, y, indexing="ij")

    def node_coords(self) -> Tuple[np.ndarray, np.ndarray]:
        x = self._axis_points(self.nx, self.hx, self.x0, self.periodic_x, True)
        y = self._axis_points(self.ny, self.hy, self.y0, self.periodic_y, True)
        return np.meshgrid(x, y, indexing="ij")

    def node_weights(self) -> np.ndarray:
        """Quadrature weight of each node: number of adjacent cells / 4"""
        wx = np.ones(self.node_shape[0])
        wy = np.ones(self.node_shape[1])
        if not self.periodic_x:
            wx[[0, -1]] = 0.5
        if not self.periodic_y:
            wy[[0, -1]] = 0.5
        return np.outer(wx, wy)


def _as_array(values, shape: Tuple[int, int], name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.size != shape[0] * shape[1]:
        raise StructuralError(f"{name} has {arr.size} values, grid expects {shape}")
    return arr.reshape(shape)


def check_same_grid(*fields) -> GridSpec:
    """Return the common grid of the fields or raise StructuralError"""
    grid = fields[0].grid
    for other in fields[1:]:
        if other.grid != grid:
            raise StructuralError(f"grid mismatch: {grid} vs {other.grid}")
    return grid


class ScalarField:
    """One value per cell center"""

    def __init__(self, grid: GridSpec, values):
        self.grid = grid
        self.values = _as_array(values, grid.center_shape, "scalar field")

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.center_shape))

    @classmethod
    def sample(cls, grid: GridSpec, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ScalarField":
        x, y = grid.center_coords()
        return cls(grid, np.broadcast_to(fn(x, y), grid.center_shape))

    def to_flat(self) -> np.ndarray:
        return self.values.ravel().copy()

    @classmethod
    def from_flat(cls, grid: GridSpec, vec: np.ndarray) -> "ScalarField":
        return cls(grid, vec)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values)

    def mean(self) -> float:
        return float(self.values.mean())

    def __add__(self, other: "ScalarField") -> "ScalarField":
        check_same_grid(self, other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        check_same_grid(self, other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"ScalarField(nx={self.grid.nx}, ny={self.grid.ny})"


class StaggeredVectorField:
    """Velocity-like field: u on vertical faces, v on horizontal faces"""

    def __init__(self, grid: GridSpec, u_faces, v_faces):
        self.grid = grid
        self.u = _as_array(u_faces, grid.u_shape, "u_faces")
        self.v = _as_array(v_faces, grid.v_shape, "v_faces")

    @classmethod
    def zeros(cls, grid: GridSpec) -> "StaggeredVectorField":
        return cls(grid, np.zeros(grid.u_shape), np.zeros(grid.v_shape))

    @classmethod
    def sample(cls, grid: GridSpec, fx: Callable, fy: Callable) -> "StaggeredVectorField":
        """Evaluate fx at u-face positions and fy at v-face positions"""
        xu, yu = grid.u_coords()
        xv, yv = grid.v_coords()
        u = np.broadcast_to(fx(xu, yu), grid.u_shape)
        v = np.broadcast_to(fy(xv, yv), grid.v_shape)
        return cls(grid, u, v)

    @property
    def u_faces(self) -> np.ndarray:
        return self.u

    @property
    def v_faces(self) -> np.ndarray:
        return self.v

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    @classmethod
    def from_flat(cls, grid: GridSpec, vec: np.ndarray) -> "StaggeredVectorField":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != grid.n_faces:
            raise StructuralError(f"vector of length {vec.size} does not match {grid.n_faces} faces")
        nu = grid.u_shape[0] * grid.u_shape[1]
        return cls(grid, vec[:nu], vec[nu:])

    def copy(self) -> "StaggeredVectorField":
        return StaggeredVectorField(self.grid, self.u, self.v)

    def max_abs(self) -> float:
        return float(max(np.abs(self.u).max(initial=0.0), np.abs(self.v).max(initial=0.0)))

    def __add__(self, other: "StaggeredVectorField") -> "StaggeredVectorField":
        check_same_grid(self, other)
        return StaggeredVectorField(self.grid, self.u + other.u, self.v + other.v)

    def __sub__(self, other: "StaggeredVectorField") -> "StaggeredVectorField":
        check_same_grid(self, other)
        return StaggeredVectorField(self.grid, self.u - other.u, self.v - other.v)

    def __mul__(self, c: float) -> "StaggeredVectorField":
        return StaggeredVectorField(self.grid, self.u * c, self.v * c)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"StaggeredVectorField(nx={self.grid.nx}, ny={self.grid.ny})"


class TensorField:
    """
    Symmetric 2x2 tensor at cell centers.

    Only xx, xy and yy are stored; ``yx`` returns the xy array itself so the
    two off-diagonal components are identical by construction.
    """

    def __init__(self, grid: GridSpec, xx, xy, yy):
        self.grid = grid
        self.xx = _as_array(xx, grid.center_shape, "xx")
        self.xy = _as_array(xy, grid.center_shape, "xy")
        self.yy = _as_array(yy, grid.center_shape, "yy")

    @classmethod
    def zeros(cls, grid: GridSpec) -> "TensorField":
        z = np.zeros(grid.center_shape)
        return cls(grid, z, z, z)

    @property
    def yx(self) -> np.ndarray:
        return self.xy

    def components(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.xx, self.xy, self.yx, self.yy)

    def magnitude_sq(self) -> np.ndarray:
        """|D|^2 = D:D at every center"""
        return self.xx ** 2 + self.yy ** 2 + 2.0 * self.xy ** 2

    def scaled(self, weight: np.ndarray) -> "TensorField":
        """Pointwise product with a center array (e.g. a viscosity factor)"""
        return TensorField(self.grid, self.xx * weight, self.xy * weight, self.yy * weight)

    def copy(self) -> "TensorField":
        return TensorField(self.grid, self.xx, self.xy, self.yy)

    def __add__(self, other: "TensorField") -> "TensorField":
        check_same_grid(self, other)
        return TensorField(self.grid, self.xx + other.xx, self.xy + other.xy, self.yy + other.yy)

    def __sub__(self, other: "TensorField") -> "TensorField":
        check_same_grid(self, other)
        return TensorField(self.grid, self.xx - other.xx, self.xy - other.xy, self.yy - other.yy)

    def __mul__(self, c: float) -> "TensorField":
        return TensorField(self.grid, self.xx * c, self.xy * c, self.yy * c)

    __rmul__ = __mul__


class VelocityGradient:
    """
    Full gradient of a staggered field.

    The diagonal entries live at cell centers, the off-diagonal ones at
    nodes, which is where the MAC differences are centered.
    """

    def __init__(self, grid: GridSpec, dudx, dvdy, dudy, dvdx):
        self.grid = grid
        self.dudx = _as_array(dudx, grid.center_shape, "du/dx")
        self.dvdy = _as_array(dvdy, grid.center_shape, "dv/dy")
        self.dudy = _as_array(dudy, grid.node_shape, "du/dy")
        self.dvdx = _as_array(dvdx, grid.node_shape, "dv/dx")
