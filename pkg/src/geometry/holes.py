"""
Model hole T inside the unit cell and the perforated-domain description
"""
import math
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.grid.fields import GridSpec
from src.utils.errors import ConfigurationError

_DIVISIBILITY_TOL = 1e-9


class HoleShape(BaseModel):
    """
    Hole in Q0 = (-1/2, 1/2)^2, lengths in units of the cell width.

    ``radius`` is the disk radius or the square half-width; an ellipse uses
    ``semi_axes``. ``center`` is the offset x0 of the hole in the cell.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["disk", "ellipse", "square"] = "disk"
    radius: float = Field(default=0.25, ge=0.0)
    semi_axes: Optional[Tuple[float, float]] = None
    center: Tuple[float, float] = (0.0, 0.0)

    @model_validator(mode="after")
    def _check_parameters(self) -> "HoleShape":
        if self.kind == "ellipse":
            if self.semi_axes is None:
                raise ValueError("an ellipse hole needs semi_axes [a, b]")
            if min(self.semi_axes) < 0:
                raise ValueError("semi_axes must be non-negative")
        return self

    def half_extents(self) -> Tuple[float, float]:
        if self.kind == "ellipse":
            return (float(self.semi_axes[0]), float(self.semi_axes[1]))
        return (self.radius, self.radius)

    def area(self) -> float:
        a, b = self.half_extents()
        if self.kind == "square":
            return 4.0 * a * b
        return math.pi * a * b

    def scaled(self, factor: float) -> "HoleShape":
        """Same shape and center with every extent multiplied by ``factor``"""
        if self.kind == "ellipse":
            a, b = self.semi_axes
            return self.model_copy(update={"semi_axes": (a * factor, b * factor)})
        return self.model_copy(update={"radius": self.radius * factor})

    def max_scale(self) -> float:
        """Largest factor that keeps the hole strictly inside Q0"""
        reach = [
            (0.5 - abs(self.center[axis])) / extent
            for axis, extent in enumerate(self.half_extents())
            if extent > 0.0
        ]
        return min(reach) if reach else math.inf

    def check_containment(self) -> None:
        """Closure of the hole must lie strictly inside Q0"""
        for axis, extent in enumerate(self.half_extents()):
            reach = extent + abs(self.center[axis])
            if reach >= 0.5:
                raise ConfigurationError(
                    f"{self.kind} hole reaches {reach:.4g} from the cell center along axis {axis}; "
                    "it must stay strictly inside (-1/2, 1/2)^2"
                )

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Vectorized strict inclusion test for cell-local coordinates"""
        dx = np.asarray(x) - self.center[0]
        dy = np.asarray(y) - self.center[1]
        a, b = self.half_extents()
        if self.kind == "square":
            return np.maximum(np.abs(dx), np.abs(dy)) < self.radius
        if a == 0.0 or b == 0.0:
            return np.zeros(np.broadcast(dx, dy).shape, dtype=bool)
        return (dx / a) ** 2 + (dy / b) ** 2 < 1.0


class DomainSpec(BaseModel):
    """Rectangle (0, lx) x (0, ly) perforated with period epsilon"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lx: float = Field(default=1.0, gt=0)
    ly: float = Field(default=1.0, gt=0)
    epsilon: float = Field(gt=0, le=1.0)
    hole: HoleShape = Field(default_factory=HoleShape)
    cells_per_eps: int = Field(default=16, ge=8)

    @model_validator(mode="after")
    def _check_even(self) -> "DomainSpec":
        if self.cells_per_eps % 2:
            raise ValueError("cells_per_eps must be even so that cell edges fall on grid lines")
        return self

    @property
    def h(self) -> float:
        return self.epsilon / self.cells_per_eps

    def _ratio(self, length: float, name: str) -> int:
        ratio = length / self.epsilon
        count = int(round(ratio))
        if count < 1 or abs(ratio - count) > _DIVISIBILITY_TOL * max(1.0, ratio):
            raise ConfigurationError(
                f"{name} = {length} is not an integer multiple of epsilon = {self.epsilon}"
            )
        return count

    def eps_cells(self) -> Tuple[int, int]:
        """Number of epsilon-cells per axis, N = L / epsilon"""
        return self._ratio(self.lx, "lx"), self._ratio(self.ly, "ly")

    def grid(self) -> GridSpec:
        nx_eps, ny_eps = self.eps_cells()
        return GridSpec(
            nx=nx_eps * self.cells_per_eps,
            ny=ny_eps * self.cells_per_eps,
            lx=self.lx,
            ly=self.ly,
        )

    def interior_cells(self) -> Tuple[range, range]:
        """Index set K_eps: cells k with eps * closure(Q_k) inside the open rectangle"""
        nx_eps, ny_eps = self.eps_cells()
        return range(1, nx_eps), range(1, ny_eps)

    def with_epsilon(self, epsilon: float) -> "DomainSpec":
        return self.model_copy(update={"epsilon": epsilon})
