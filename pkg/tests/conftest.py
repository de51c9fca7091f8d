import numpy as np
import pytest

from src.geometry.holes import DomainSpec, HoleShape
from src.grid.fields import GridSpec, StaggeredVectorField
from src.solvers.micro_solver import ForcingSpec, MicroConfig
from src.solvers.viscosity import CarreauParams


def stream_velocity(grid: GridSpec, psi: np.ndarray) -> StaggeredVectorField:
    """Discretely divergence-free velocity from a node stream function (walls on both axes)"""
    u = (psi[:, 1:] - psi[:, :-1]) / grid.hy
    v = -(psi[1:, :] - psi[:-1, :]) / grid.hx
    return StaggeredVectorField(grid, u, v)


def corner_vortex(grid: GridSpec, lo: int = 2, hi: int = 4, amplitude: float = 0.01) -> StaggeredVectorField:
    """Stream function bump on nodes [lo, hi]^2, away from walls and the centered holes"""
    psi = np.zeros(grid.node_shape)
    psi[lo:hi + 1, lo:hi + 1] = 1.0
    psi[lo + 1:hi, lo + 1:hi] = 2.0
    return stream_velocity(grid, amplitude * grid.hx * psi)


def micro_config(epsilon: float = 0.5, cells_per_eps: int = 8, **overrides) -> MicroConfig:
    params = overrides.pop("params", CarreauParams())
    forcing = overrides.pop("forcing", ForcingSpec())
    hole = overrides.pop("hole", HoleShape(kind="disk", radius=0.25))
    settings = {"dt": 0.1, "t_end": 0.3}
    settings.update(overrides)
    return MicroConfig(
        domain=DomainSpec(epsilon=epsilon, cells_per_eps=cells_per_eps, hole=hole),
        params=params,
        forcing=forcing,
        **settings,
    )


@pytest.fixture
def square_grid():
    return GridSpec(nx=16, ny=16, lx=1.0, ly=1.0)


@pytest.fixture
def rect_grid():
    return GridSpec(nx=12, ny=8, lx=1.5, ly=1.0)


@pytest.fixture
def periodic_grid():
    return GridSpec.unit_cell(16)


@pytest.fixture
def disk():
    return HoleShape(kind="disk", radius=0.25)


@pytest.fixture
def small_domain(disk):
    return DomainSpec(epsilon=0.25, cells_per_eps=8, hole=disk)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
