"""
Norms and probes computed from completed micro runs.

Space-time norms are assembled from the per-step history kept by
TimeIntegrals, so nothing here touches a solver.
"""
import logging
import math
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel

from src.grid.fields import StaggeredVectorField
from src.grid.operators import field_power, gradient, velocity_gradient, rate_of_strain
from src.solvers.micro_solver import MicroRun, MicroState, TimeIntegrals
from src.utils.errors import DomainError

logger = logging.getLogger(__name__)

NORM_NAMES = (
    "u_l2l2",
    "grad_u_l2l2",
    "u_linfl2",
    "u_lrlr",
    "grad_u_lrlr",
    "U",
    "grad_U",
    "G",
    "H",
    "R",
)


def remainder_exponent(r: float) -> Optional[float]:
    """Power of epsilon bounding the stress remainder; None when it vanishes (r = 2)"""
    if r <= 1:
        raise DomainError(f"viscosity exponent must exceed 1, got {r}")
    if r == 2:
        return None
    if r < 2:
        return 2.0 - r
    if r < 4:
        return (r - 2.0) / r
    return 1.0


def bound_exponents(r: float) -> Dict[str, Optional[float]]:
    """Epsilon powers of the a-priori bounds, keyed like NORM_NAMES"""
    return {
        "u_l2l2": 2.0,
        "grad_u_l2l2": 1.0,
        "u_linfl2": 0.0,
        "u_lrlr": 2.0 / r + 1.0 if r > 2 else None,
        "grad_u_lrlr": 2.0 / r if r > 2 else None,
        "U": 2.0,
        "grad_U": 1.0,
        "G": 2.0,
        "H": 1.0,
        "R": remainder_exponent(r),
    }


class ScalingNorms(BaseModel):
    """Discrete norms of one run over (0, T) x Omega"""

    epsilon: float
    r: float
    u_l2l2: float = 0.0
    grad_u_l2l2: float = 0.0
    u_linfl2: float = 0.0
    u_lrlr: float = 0.0
    grad_u_lrlr: float = 0.0
    U: float = 0.0  # W^{1,2}(0,T; L2)
    grad_U: float = 0.0
    G: float = 0.0  # W^{1,1}(0,T; L3/2)
    H: float = 0.0
    R: float = 0.0

    def values(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in NORM_NAMES}

    def bound_exponents(self) -> Dict[str, Optional[float]]:
        return bound_exponents(self.r)


class RemainderDecay(BaseModel):
    epsilon: float
    r: float
    norm: float
    pairing: float
    theoretical_exponent: Optional[float] = None


def _sum(history: Dict[str, List[float]], key: str, weighted: bool = True) -> float:
    dts = history["dt"]
    values = history[key]
    if weighted:
        return float(sum(dt * v for dt, v in zip(dts, values)))
    return float(sum(values))


def scaling_norms(run: MicroRun, eps: Optional[float] = None) -> ScalingNorms:
    """
    Velocity, time-integral and remainder norms of a completed run.

    A Sobolev-in-time norm W^{1,p}(0,T;X) of an accumulator is
    (int ||acc||_X^p + int ||integrand||_X^p)^(1/p).
    """
    integrals = run.integrals
    h = integrals.history
    eps = integrals.epsilon if eps is None else eps
    r = integrals.params.r
    ph = integrals.stress_exponent
    if not h["dt"]:
        return ScalingNorms(epsilon=eps, r=r)

    def weighted_sq(key: str) -> float:
        return sum(dt * v * v for dt, v in zip(h["dt"], h[key]))

    return ScalingNorms(
        epsilon=eps,
        r=r,
        u_l2l2=math.sqrt(weighted_sq("u_l2")),
        grad_u_l2l2=math.sqrt(weighted_sq("grad_u_l2")),
        u_linfl2=max([integrals.initial_l2] + h["u_l2"]),
        u_lrlr=_sum(h, "u_lr") ** (1.0 / r),
        grad_u_lrlr=_sum(h, "grad_u_lr") ** (1.0 / r),
        U=math.sqrt(weighted_sq("U_l2") + weighted_sq("u_l2")),
        grad_U=math.sqrt(weighted_sq("grad_U_l2") + weighted_sq("grad_u_l2")),
        G=_sum(h, "G_l32") + _sum(h, "conv_l32"),
        H=(_sum(h, "H_p") + _sum(h, "stress_p")) ** (1.0 / ph),
        R=_sum(h, "R_p") ** (1.0 / integrals.params.dual_exponent),
    )


def stress_remainder_norms(integrals: TimeIntegrals, r: Optional[float] = None) -> RemainderDecay:
    """
    Space-time L^{r'} norm of the remainder accumulator and the pairing
    eps^-1 int_0^T int_0^t int |(g - 1) Du| that the decay bound controls.
    """
    r = integrals.params.r if r is None else r
    h = integrals.history
    rp = r / (r - 1.0) if r > 1 else None
    if rp is None:
        raise DomainError(f"viscosity exponent must exceed 1, got {r}")
    t_end = integrals.t
    norm = _sum(h, "R_p") ** (1.0 / rp) if h["dt"] else 0.0
    pairing = sum(dt * (t_end - t) * v for dt, t, v in zip(h["dt"], h["t"], h["remainder_l1"]))
    return RemainderDecay(
        epsilon=integrals.epsilon,
        r=r,
        norm=norm,
        pairing=pairing / integrals.epsilon,
        theoretical_exponent=remainder_exponent(r),
    )


def accumulator_identity_defect(integrals: TimeIntegrals) -> float:
    """max |H - R - D(U)| relative to max |H|; zero up to roundoff"""
    diff = integrals.H - integrals.R - rate_of_strain(integrals.U)
    worst = max(float(np.abs(c).max(initial=0.0)) for c in (diff.xx, diff.xy, diff.yy))
    scale = max(float(np.abs(c).max(initial=0.0)) for c in (integrals.H.xx, integrals.H.xy, integrals.H.yy))
    if scale == 0.0:
        return worst
    return worst / scale


def _gradient_norm(u: StaggeredVectorField) -> float:
    return math.sqrt(field_power(velocity_gradient(u), 2))


def poincare_probe(state: MicroState, eps: float) -> float:
    """||u|| / (eps ||grad u||) for a computed velocity"""
    grad = _gradient_norm(state.u)
    if grad == 0.0:
        raise DomainError("Poincare ratio is undefined for a zero velocity field")
    return math.sqrt(field_power(state.u, 2)) / (eps * grad)


def korn_probe(state: MicroState) -> float:
    """||grad u|| / ||Du||; never below one on the MAC grid"""
    strain = math.sqrt(field_power(rate_of_strain(state.u), 2))
    if strain == 0.0:
        raise DomainError("Korn ratio is undefined for a rigid or zero velocity field")
    return _gradient_norm(state.u) / strain


def momentum_balance_residual(run: MicroRun) -> float:
    """
    Relative defect of the time-integrated momentum balance on free faces:

        eps^2 (u(T) - u0) + int -div(eta Du) + G + grad Pint - Fint = 0
    """
    integrals = run.integrals
    free = integrals.free_faces
    eps2 = integrals.epsilon ** 2
    lhs = (
        eps2 * (run.state.u.to_flat() - integrals.u0.to_flat())
        + integrals.viscous.to_flat()
        + integrals.G.to_flat()
        + gradient(integrals.Pint).to_flat()
        - integrals.Fint.to_flat()
    )[free]
    scale = float(np.linalg.norm(integrals.Fint.to_flat()[free]))
    defect = float(np.linalg.norm(lhs))
    if scale == 0.0:
        return defect
    return defect / scale
