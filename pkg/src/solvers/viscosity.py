"""
Carreau-Yasuda viscosity law

    eta_r(D) = (eta0 - eta_inf) (1 + lam |D|^2)^(r/2 - 1) + eta_inf
"""
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.grid.fields import ScalarField
from src.utils.errors import DomainError

ArrayLike = Union[np.ndarray, ScalarField, float]


class CarreauParams(BaseModel):
    """
    Constants of the viscosity law.

    ``newtonian`` hard-codes eta = eta0 regardless of r; it exists to check
    that r = 2 reduces to the constant-viscosity model.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    eta0: float = Field(default=1.0, gt=0)
    eta_inf: float = Field(default=0.5, ge=0)
    lam: float = Field(default=1.0, gt=0)
    r: float = Field(default=2.0, gt=1)
    newtonian: bool = False

    @model_validator(mode="after")
    def _check_order(self) -> "CarreauParams":
        if self.eta0 < self.eta_inf:
            raise ValueError(f"eta0 = {self.eta0} must be >= eta_inf = {self.eta_inf}")
        if self.r < 2 and self.eta_inf <= 0:
            raise ValueError("shear-thinning exponents r < 2 need eta_inf > 0 for coercivity")
        return self

    @property
    def is_linear(self) -> bool:
        return self.newtonian or self.r == 2.0

    @property
    def dual_exponent(self) -> float:
        """r' = r / (r - 1)"""
        return self.r / (self.r - 1.0)


def _values(d_sq: ArrayLike) -> np.ndarray:
    arr = d_sq.values if isinstance(d_sq, ScalarField) else np.asarray(d_sq, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("|D|^2 must be non-negative")
    return arr


def _wrap(like: ArrayLike, values: np.ndarray):
    if isinstance(like, ScalarField):
        return ScalarField(like.grid, values)
    return values


def shear_factor(d_sq: ArrayLike, params: CarreauParams):
    """(1 + lam |D|^2)^(r/2 - 1); exactly one for the linear model"""
    arr = _values(d_sq)
    if params.is_linear:
        return _wrap(d_sq, np.ones_like(arr))
    return _wrap(d_sq, (1.0 + params.lam * arr) ** (0.5 * params.r - 1.0))


def carreau_viscosity(d_sq: ArrayLike, params: CarreauParams):
    """Pointwise viscosity for a field (or array) of |D|^2 values"""
    arr = _values(d_sq)
    if params.is_linear:
        return _wrap(d_sq, np.full_like(arr, params.eta0))
    factor = (1.0 + params.lam * arr) ** (0.5 * params.r - 1.0)
    return _wrap(d_sq, (params.eta0 - params.eta_inf) * factor + params.eta_inf)
