"""
Sparse MAC operators: divergence, gradient, strain, Laplacian and norms.

Every operator is assembled once per GridSpec from one-dimensional
stencils combined with Kronecker products and cached.
"""
import logging
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from src.grid.fields import (
    GridSpec,
    ScalarField,
    StaggeredVectorField,
    TensorField,
    VelocityGradient,
)
from src.utils.errors import DomainError, StructuralError

logger = logging.getLogger(__name__)

Field = Union[ScalarField, StaggeredVectorField, TensorField, VelocityGradient]


def _coo(rows, cols, data, shape) -> sp.csr_matrix:
    mat = sp.coo_matrix((data, (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def face_difference_1d(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    """Faces to centers: (f[i+1] - f[i]) / h"""
    i = np.arange(n)
    if periodic:
        right = (i + 1) % n
        nf = n
    else:
        right = i + 1
        nf = n + 1
    rows = np.concatenate([i, i])
    cols = np.concatenate([i, right])
    data = np.concatenate([-np.ones(n), np.ones(n)]) / h
    return _coo(rows, cols, data, (n, nf))


def node_difference_1d(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    """Centers to nodes (c[i] - c[i-1]) / h, wall ghosts mirror with sign flip"""
    if periodic:
        i = np.arange(n)
        rows = np.concatenate([i, i])
        cols = np.concatenate([i, (i - 1) % n])
        data = np.concatenate([np.ones(n), -np.ones(n)]) / h
        return _coo(rows, cols, data, (n, n))
    i = np.arange(1, n)
    rows = np.concatenate([i, i, [0, n]])
    cols = np.concatenate([i, i - 1, [0, n - 1]])
    data = np.concatenate([np.ones(n - 1), -np.ones(n - 1), [2.0, -2.0]]) / h
    return _coo(rows, cols, data, (n + 1, n))


def face_average_1d(n: int, periodic: bool) -> sp.csr_matrix:
    """Faces (or nodes) to centers: (f[i] + f[i+1]) / 2"""
    i = np.arange(n)
    right = (i + 1) % n if periodic else i + 1
    nf = n if periodic else n + 1
    return _coo(np.concatenate([i, i]), np.concatenate([i, right]), np.full(2 * n, 0.5), (n, nf))


def face_second_difference_1d(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    if periodic:
        i = np.arange(n)
        rows = np.concatenate([i, i, i])
        cols = np.concatenate([(i - 1) % n, i, (i + 1) % n])
        data = np.concatenate([np.ones(n), -2.0 * np.ones(n), np.ones(n)]) / h ** 2
        return _coo(rows, cols, data, (n, n))
    # boundary faces carry no equation
    i = np.arange(1, n)
    rows = np.concatenate([i, i, i])
    cols = np.concatenate([i - 1, i, i + 1])
    data = np.concatenate([np.ones(n - 1), -2.0 * np.ones(n - 1), np.ones(n - 1)]) / h ** 2
    return _coo(rows, cols, data, (n + 1, n + 1))


def center_second_difference_1d(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    i = np.arange(n)
    if periodic:
        rows = np.concatenate([i, i, i])
        cols = np.concatenate([(i - 1) % n, i, (i + 1) % n])
        data = np.concatenate([np.ones(n), -2.0 * np.ones(n), np.ones(n)]) / h ** 2
        return _coo(rows, cols, data, (n, n))
    diag = -2.0 * np.ones(n)
    diag[[0, -1]] = -3.0  # ghost value -c at the wall
    inner = np.arange(n - 1)
    rows = np.concatenate([i, inner, inner + 1])
    cols = np.concatenate([i, inner + 1, inner])
    data = np.concatenate([diag, np.ones(n - 1), np.ones(n - 1)]) / h ** 2
    return _coo(rows, cols, data, (n, n))


class StaggeredOperators:
    """
    All sparse operators of one grid.

    Face vectors are ordered [u.ravel(), v.ravel()], center vectors and node
    vectors are raveled in C order.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        g = grid
        nux, ny = g.u_shape
        nx, nvy = g.v_shape
        self.n_u = nux * ny
        self.n_v = nx * nvy

        dfx = face_difference_1d(nx, g.hx, g.periodic_x)
        dfy = face_difference_1d(ny, g.hy, g.periodic_y)
        dnx = node_difference_1d(nx, g.hx, g.periodic_x)
        dny = node_difference_1d(ny, g.hy, g.periodic_y)
        avx = face_average_1d(nx, g.periodic_x)
        avy = face_average_1d(ny, g.periodic_y)

        ix, iy = sp.identity(nx), sp.identity(ny)
        iux, ivy = sp.identity(nux), sp.identity(nvy)

        self.div_u = sp.kron(dfx, iy, format="csr")
        self.div_v = sp.kron(ix, dfy, format="csr")
        self.divergence = sp.hstack([self.div_u, self.div_v], format="csr")

        interior = np.concatenate([self._interior_u().ravel(), self._interior_v().ravel()])
        self.interior_faces = interior
        self.boundary_faces = ~interior
        self.gradient = (sp.diags(interior.astype(float)) @ (-self.divergence.T)).tocsr()
        self.gradient.eliminate_zeros()

        # strain pieces: diagonal at centers, symmetric gradient at nodes
        zero_cu = sp.csr_matrix((nx * ny, self.n_v))
        zero_cv = sp.csr_matrix((nx * ny, self.n_u))
        self.strain_xx = sp.hstack([self.div_u, zero_cu], format="csr")
        self.strain_yy = sp.hstack([zero_cv, self.div_v], format="csr")
        self.dudy_nodes = sp.kron(iux, dny, format="csr")
        self.dvdx_nodes = sp.kron(dnx, ivy, format="csr")
        self.strain_xy_nodes = 0.5 * sp.hstack([self.dudy_nodes, self.dvdx_nodes], format="csr")
        self.node_to_center = sp.kron(avx, avy, format="csr")
        self.strain_xy = (self.node_to_center @ self.strain_xy_nodes).tocsr()

        self.u_to_center = sp.kron(avx, iy, format="csr")
        self.v_to_center = sp.kron(ix, avy, format="csr")
        # v values averaged onto u faces and the transpose
        self.v_to_u = sp.kron(avx.T, avy, format="csr")
        self.u_to_v = self.v_to_u.T.tocsr()

        lap_u = sp.kron(face_second_difference_1d(nx, g.hx, g.periodic_x), iy) + sp.kron(
            iux, center_second_difference_1d(ny, g.hy, g.periodic_y)
        )
        lap_v = sp.kron(center_second_difference_1d(nx, g.hx, g.periodic_x), ivy) + sp.kron(
            ix, face_second_difference_1d(ny, g.hy, g.periodic_y)
        )
        lap = sp.block_diag([lap_u, lap_v], format="csr")
        self.laplacian = (sp.diags(interior.astype(float)) @ lap).tocsr()
        self.laplacian.eliminate_zeros()
        logger.debug("assembled MAC operators for %dx%d grid", nx, ny)

    def _interior_u(self) -> np.ndarray:
        mask = np.ones(self.grid.u_shape, dtype=bool)
        if not self.grid.periodic_x:
            mask[[0, -1], :] = False
        return mask

    def _interior_v(self) -> np.ndarray:
        mask = np.ones(self.grid.v_shape, dtype=bool)
        if not self.grid.periodic_y:
            mask[:, [0, -1]] = False
        return mask

    def viscous_matrix(self, eta_centers: np.ndarray) -> sp.csr_matrix:
        """
        Matrix of the bilinear form sum(eta Du:Dv) per unit volume.

        Center viscosity weights the diagonal strain; the node weight of the
        off-diagonal strain is the average of the adjacent centers times the
        node quadrature weight, which equals node_to_center^T applied to eta.
        """
        eta = np.asarray(eta_centers, dtype=np.float64).ravel()
        w_c = sp.diags(eta)
        w_n = sp.diags(self.node_to_center.T @ eta)
        mat = (
            self.strain_xx.T @ w_c @ self.strain_xx
            + self.strain_yy.T @ w_c @ self.strain_yy
            + 2.0 * (self.strain_xy_nodes.T @ w_n @ self.strain_xy_nodes)
        )
        return mat.tocsr()


@lru_cache(maxsize=32)
def operators_for(grid: GridSpec) -> StaggeredOperators:
    return StaggeredOperators(grid)


def _require_vector(v) -> None:
    if not isinstance(v, StaggeredVectorField):
        raise StructuralError(f"expected StaggeredVectorField, got {type(v).__name__}")
    if v.u.shape != v.grid.u_shape or v.v.shape != v.grid.v_shape:
        raise StructuralError("face arrays do not match the grid spec")


def divergence(v: StaggeredVectorField) -> ScalarField:
    _require_vector(v)
    ops = operators_for(v.grid)
    return ScalarField(v.grid, ops.divergence @ v.to_flat())


def gradient(p: ScalarField) -> StaggeredVectorField:
    if not isinstance(p, ScalarField) or p.values.shape != p.grid.center_shape:
        raise StructuralError("gradient expects a ScalarField on its grid")
    ops = operators_for(p.grid)
    return StaggeredVectorField.from_flat(p.grid, ops.gradient @ p.to_flat())


def rate_of_strain(v: StaggeredVectorField) -> TensorField:
    """D = (grad v + grad v^T) / 2 with the off-diagonal averaged from nodes to centers"""
    _require_vector(v)
    ops = operators_for(v.grid)
    vec = v.to_flat()
    return TensorField(v.grid, ops.strain_xx @ vec, ops.strain_xy @ vec, ops.strain_yy @ vec)


def velocity_gradient(v: StaggeredVectorField) -> VelocityGradient:
    _require_vector(v)
    ops = operators_for(v.grid)
    return VelocityGradient(
        v.grid,
        ops.div_u @ v.u.ravel(),
        ops.div_v @ v.v.ravel(),
        ops.dudy_nodes @ v.u.ravel(),
        ops.dvdx_nodes @ v.v.ravel(),
    )


def face_to_center(v: StaggeredVectorField) -> Tuple[np.ndarray, np.ndarray]:
    _require_vector(v)
    ops = operators_for(v.grid)
    shape = v.grid.center_shape
    return (ops.u_to_center @ v.u.ravel()).reshape(shape), (ops.v_to_center @ v.v.ravel()).reshape(shape)


def vector_laplacian(v: StaggeredVectorField, dirichlet_mask=None) -> StaggeredVectorField:
    """
    Componentwise 5-point Laplacian.

    Wall boundary faces and, when a mask is given, faces touching a solid
    cell are pinned and get a zero result.
    """
    _require_vector(v)
    ops = operators_for(v.grid)
    out = ops.laplacian @ v.to_flat()
    if dirichlet_mask is not None:
        if dirichlet_mask.grid != v.grid:
            raise StructuralError("mask and field are built on different grids")
        out[~dirichlet_mask.free_faces()] = 0.0
    return StaggeredVectorField.from_flat(v.grid, out)


def field_power(f: Field, q: float = 2.0) -> float:
    """sum |f|^q times the cell volume (the q-th power of the spatial norm)"""
    if q < 1:
        raise DomainError(f"norm exponent must be >= 1, got {q}")
    vol = f.grid.cell_volume
    if isinstance(f, ScalarField):
        total = np.sum(np.abs(f.values) ** q)
    elif isinstance(f, StaggeredVectorField):
        total = np.sum(np.abs(f.u) ** q) + np.sum(np.abs(f.v) ** q)
    elif isinstance(f, TensorField):
        total = np.sum(np.abs(f.xx) ** q) + np.sum(np.abs(f.yy) ** q) + 2.0 * np.sum(np.abs(f.xy) ** q)
    elif isinstance(f, VelocityGradient):
        w = f.grid.node_weights()
        total = (
            np.sum(np.abs(f.dudx) ** q)
            + np.sum(np.abs(f.dvdy) ** q)
            + np.sum(w * np.abs(f.dudy) ** q)
            + np.sum(w * np.abs(f.dvdx) ** q)
        )
    else:
        raise StructuralError(f"cannot take the norm of {type(f).__name__}")
    return float(total * vol)


def field_norm(f: Field, q: float = 2.0, dt: Optional[float] = None) -> float:
    """
    Discrete Lq norm: (sum |f|^q hx hy dt)^(1/q).

    Staggered and tensor fields sum over their components; without dt the
    spatial norm is returned.
    """
    total = field_power(f, q)
    if dt is not None:
        total *= dt
    return total ** (1.0 / q)
