"""
P1 finite-element assembly on TriMesh. Every element integral uses a
closed-form P1 formula, so assembled operators carry no quadrature
error. The diffusion coefficient is P0 (one value per triangle), the
reaction c and source Q are nodal, and the advection b is constant per
triangle. Sparse systems are solved by SuperLU with an explicit residual
contract.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Optional, Sequence, Union
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from recon.errors import ConfigurationError, SolverError
from recon.mesh import TriMesh

logger = logging.getLogger(__name__)

CoefficientField = np.ndarray
RealNodalField = np.ndarray
ComplexNodalField = np.ndarray

RESIDUAL_TOL = 1e-10

_MASS_LOCAL = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_EDGE_LOCAL = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


@dataclass(frozen=True, eq=False)
class ScalarData:
    """
    Lower-order data of the elliptic operator.

    Args:
        Q (np.ndarray): Nodal source values
        c (Union[float, np.ndarray]): Reaction, constant or nodal
        b (np.ndarray): Advection, None, a constant 2-vector or (T, 2)
            per-triangle vectors
    """
    Q: np.ndarray
    c: Union[float, np.ndarray] = 1.0
    b: Optional[np.ndarray] = None

    @classmethod
    def from_functions(cls, mesh: TriMesh, Q: Union[float, Callable] = 1.0,
        c: Union[float, Callable] = 1.0, b: Optional[Sequence[float]] = None) -> 'ScalarData':
        """
        Builds nodal data from scalars or callables f(x, y).

        Args:
            mesh (TriMesh): Mesh the data live on
            Q (Union[float, Callable]): Source
            c (Union[float, Callable]): Reaction
            b (Sequence[float]): Constant advection vector

        Returns:
            ScalarData: Data sampled at the mesh nodes
        """
        q = interpolate(mesh, Q)
        c_value = c if np.isscalar(c) else interpolate(mesh, c)
        b_value = None if b is None else np.asarray(b, dtype=float)
        return cls(q, c_value, b_value)

    @property
    def has_advection(self) -> bool:
        return self.b is not None and bool(np.any(np.asarray(self.b) != 0.0))

    @property
    def is_pure_neumann(self) -> bool:
        """True when c vanishes identically and there is no advection."""
        return not self.has_advection and bool(np.all(np.asarray(self.c) == 0.0))

    def advection_per_triangle(self, mesh: TriMesh) -> np.ndarray:
        if self.b is None:
            return np.zeros((mesh.n_triangles, 2))
        b = np.asarray(self.b, dtype=float)
        if b.shape == (2,):
            return np.broadcast_to(b, (mesh.n_triangles, 2))
        return b.reshape(mesh.n_triangles, 2)

    def check_assumptions(self, mesh: TriMesh, alpha_lower: float):
        """
        Checks b.n >= 0 on every boundary edge and c >= alpha_lower. Only
        constant advection is accepted here, which is divergence free.

        Raises:
            ConfigurationError: Naming the violated condition
        """
        if np.any(np.asarray(self.c) < alpha_lower):
            raise ConfigurationError(f'reaction c below lower bound {alpha_lower}')
        if not self.has_advection:
            return
        b = np.asarray(self.b, dtype=float)
        if b.shape != (2,):
            raise ConfigurationError('coercivity check needs a constant advection vector')
        d = mesh.nodes[mesh.boundary_edges[:, 1]] - mesh.nodes[mesh.boundary_edges[:, 0]]
        # outward normal of an edge with the domain on its left
        normals = np.column_stack([d[:, 1], -d[:, 0]]) / mesh.boundary_edge_lengths[:, None]
        if np.any(normals @ b < -1e-14):
            raise ConfigurationError('advection enters through the boundary (b.n < 0)')


@dataclass
class SparseSystem:
    """
    A square sparse system. After apply_dirichlet the matrix only acts on
    the free unknowns and fixed/fixed_values remember the eliminated ones.

    Args:
        matrix (sp.csr_matrix): System matrix on the unknowns
        rhs (np.ndarray): Right-hand side on the unknowns
        size (int): Dimension of the full nodal vector
        free (np.ndarray): Full-vector index of every unknown
        fixed (np.ndarray): Eliminated indices
        fixed_values (np.ndarray): Prescribed values at fixed
    """
    matrix: sp.csr_matrix
    rhs: np.ndarray
    size: int = -1
    free: Optional[np.ndarray] = None
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        rows, cols = self.matrix.shape
        if rows != cols:
            raise ValueError(f'System matrix must be square, got {rows}x{cols}')
        if self.size < 0:
            self.size = rows
        if self.free is None:
            self.free = np.arange(rows)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.matrix.data) or np.iscomplexobj(self.rhs)

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Scatters a solution on the unknowns into the full vector."""
        dtype = np.result_type(x, self.fixed_values)
        full = np.zeros(self.size, dtype=dtype)
        full[self.free] = x
        full[self.fixed] = self.fixed_values
        return full


def interpolate(mesh: TriMesh, fn: Union[float, Callable, np.ndarray]) -> np.ndarray:
    """Nodal interpolant of a scalar, a callable f(x, y) or nodal values."""
    if callable(fn):
        return np.asarray(fn(mesh.nodes[:, 0], mesh.nodes[:, 1]), dtype=float) \
            * np.ones(mesh.n_nodes)
    value = np.asarray(fn, dtype=float)
    if value.ndim == 0:
        return np.full(mesh.n_nodes, float(value))
    if value.shape != (mesh.n_nodes,):
        raise ValueError(f'{value.shape[0]} nodal values for {mesh.n_nodes} nodes')
    return value


def coefficient_from_function(mesh: TriMesh, fn: Callable) -> CoefficientField:
    """P0 coefficient sampled at triangle centroids."""
    c = mesh.centroids
    return np.asarray(fn(c[:, 0], c[:, 1]), dtype=float) * np.ones(mesh.n_triangles)


def coefficient_from_regions(mesh: TriMesh, values: Sequence[float]) -> CoefficientField:
    values = np.asarray(values, dtype=float)
    if values.shape[0] < mesh.n_regions:
        raise ValueError(f'{values.shape[0]} region values for {mesh.n_regions} regions')
    return values[mesh.regions]


def gradients(mesh: TriMesh, u: np.ndarray) -> np.ndarray:
    """Per-triangle constant gradient (T, 2) of a P1 field."""
    return np.einsum('tij,ti->tj', mesh.basis_gradients, u[mesh.triangles])


def centroid_values(mesh: TriMesh, u: np.ndarray) -> np.ndarray:
    """Value of a P1 field at every triangle centroid."""
    return u[mesh.triangles].mean(axis=1)


def p0_inner(mesh: TriMesh, a: np.ndarray, b: np.ndarray) -> float:
    """L2 inner product of two P0 fields."""
    return float(np.sum(mesh.areas * a * b))


def _assemble_local(mesh: TriMesh, local: np.ndarray) -> sp.csr_matrix:
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness(mesh: TriMesh, alpha: CoefficientField) -> sp.csr_matrix:
    """
    Assembles (alpha grad u, grad v) for P0 alpha.

    Args:
        mesh (TriMesh): Mesh
        alpha (CoefficientField): One value per triangle (sign not checked)

    Returns:
        sp.csr_matrix: Symmetric stiffness matrix
    """
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (mesh.n_triangles,))
    g = mesh.basis_gradients
    local = np.einsum('tik,tjk->tij', g, g) * (alpha * mesh.areas)[:, None, None]
    return _assemble_local(mesh, local)


def assemble_mass(mesh: TriMesh, c: Union[float, np.ndarray] = 1.0) -> sp.csr_matrix:
    """
    Assembles (c u, v). A constant c scales the element matrix
    area/12 [[2,1,1],[1,2,1],[1,1,2]]; nodal c is integrated exactly
    through the P1 triple products.
    """
    c = np.asarray(c, dtype=float)
    areas = mesh.areas
    if c.ndim == 0:
        local = _MASS_LOCAL[None, :, :] * (float(c) * areas)[:, None, None]
        return _assemble_local(mesh, local)
    ct = c[mesh.triangles]
    # int phi_i phi_j phi_k = area * (1/10 | 1/30 | 1/60) for 3 | 2 | 1 distinct-index multiplicity
    total = ct.sum(axis=1)
    local = np.empty((mesh.n_triangles, 3, 3))
    for i in range(3):
        for j in range(3):
            if i == j:
                local[:, i, j] = (ct[:, i] / 10.0 + (total - ct[:, i]) / 30.0)
            else:
                k = 3 - i - j
                local[:, i, j] = (ct[:, i] + ct[:, j]) / 30.0 + ct[:, k] / 60.0
    local *= areas[:, None, None]
    return _assemble_local(mesh, local)


def assemble_boundary_mass(mesh: TriMesh) -> sp.csr_matrix:
    """Assembles <u, v> on the boundary with the exact edge formula."""
    e = mesh.boundary_edges
    local = _EDGE_LOCAL[None, :, :] * mesh.boundary_edge_lengths[:, None, None]
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_convection(mesh: TriMesh, b: Optional[np.ndarray]) -> sp.csr_matrix:
    """
    Assembles (b . grad u, v) with per-triangle constant b. Entry (i, j)
    of the element matrix is area/3 * b . grad(phi_j).
    """
    data = ScalarData(np.zeros(mesh.n_nodes), 0.0, b)
    bt = data.advection_per_triangle(mesh)
    flux = np.einsum('tjk,tk->tj', mesh.basis_gradients, bt) * (mesh.areas / 3.0)[:, None]
    local = np.repeat(flux[:, None, :], 3, axis=1)
    return _assemble_local(mesh, local)


@lru_cache(maxsize=64)
def unit_mass(mesh: TriMesh) -> sp.csr_matrix:
    """Cached mass matrix with c = 1. Callers must not mutate it."""
    return assemble_mass(mesh, 1.0)


@lru_cache(maxsize=64)
def unit_stiffness(mesh: TriMesh) -> sp.csr_matrix:
    """Cached stiffness matrix with alpha = 1. Callers must not mutate it."""
    return assemble_stiffness(mesh, np.ones(mesh.n_triangles))


@lru_cache(maxsize=64)
def boundary_mass(mesh: TriMesh) -> sp.csr_matrix:
    """Cached boundary mass matrix. Callers must not mutate it."""
    return assemble_boundary_mass(mesh)


def assemble_operator(mesh: TriMesh, alpha: CoefficientField, data: ScalarData) -> sp.csr_matrix:
    """Real operator matrix of a(u, v) = (alpha grad u, grad v) + (b . grad u, v) + (c u, v)."""
    matrix = assemble_stiffness(mesh, alpha) + assemble_mass(mesh, data.c)
    if data.has_advection:
        matrix = matrix + assemble_convection(mesh, data.b)
    return matrix.tocsr()


def assemble_load(mesh: TriMesh, Q: Union[float, np.ndarray]) -> np.ndarray:
    """(Q, v) for the nodal interpolant of Q."""
    return unit_mass(mesh) @ interpolate(mesh, Q)


def assemble_boundary_load(mesh: TriMesh, values: np.ndarray,
    nodes: Optional[np.ndarray] = None) -> np.ndarray:
    """
    <h, v> on the boundary for the P1 boundary interpolant of h.

    Args:
        mesh (TriMesh): Mesh
        values (np.ndarray): Values of h
        nodes (np.ndarray): Node index of every value; defaults to
            mesh.boundary_nodes

    Returns:
        np.ndarray: Load vector on all nodes
    """
    values = np.asarray(values)
    if nodes is None:
        nodes = mesh.boundary_nodes
    nodes = np.asarray(nodes, dtype=np.int64)
    if values.shape != nodes.shape:
        raise ValueError(f'{values.shape[0]} boundary values for {nodes.shape[0]} nodes')
    stray = np.setdiff1d(nodes, mesh.boundary_nodes)
    if stray.size:
        raise ValueError(f'Boundary values given on interior node {int(stray[0])}')
    full = np.zeros(mesh.n_nodes, dtype=values.dtype if np.iscomplexobj(values) else float)
    full[nodes] = values
    return boundary_mass(mesh) @ full


def apply_dirichlet(system: SparseSystem, nodes: np.ndarray, values: np.ndarray) -> SparseSystem:
    """
    Eliminates prescribed unknowns symmetrically: their rows and columns
    leave the system and their column contributions move to the rhs.

    Args:
        system (SparseSystem): Unconstrained full system
        nodes (np.ndarray): Indices to prescribe
        values (np.ndarray): Value of every prescribed index

    Returns:
        SparseSystem: Reduced system that expands to the full vector
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    values = np.asarray(values)
    if values.shape != nodes.shape:
        raise ValueError(f'{values.shape[0]} Dirichlet values for {nodes.shape[0]} nodes')
    if system.dimension != system.size:
        raise ValueError('System already carries Dirichlet constraints')
    mask = np.ones(system.size, dtype=bool)
    mask[nodes] = False
    free = np.flatnonzero(mask)
    a = system.matrix
    a_free = a[free][:, free]
    rhs = system.rhs[free] - a[free][:, nodes] @ values
    return SparseSystem(a_free, rhs, size=system.size, free=free, fixed=nodes, fixed_values=values)


def solve_sparse(system: SparseSystem, kind: str = 'real') -> np.ndarray:
    """
    Solves a sparse system by SuperLU factorization with one step of
    iterative refinement when needed.

    Args:
        system (SparseSystem): System to solve
        kind (str): 'real' or 'complex'

    Returns:
        np.ndarray: Full nodal solution vector

    Raises:
        SolverError: If the factorization fails or the relative residual
            exceeds RESIDUAL_TOL
    """
    if kind not in ('real', 'complex'):
        raise ValueError(f'Solve kind {kind} not recognized')
    if kind == 'real' and system.is_complex:
        raise ValueError('Complex system passed to a real solve')
    dtype = complex if kind == 'complex' else float
    a = system.matrix.astype(dtype).tocsc()
    b = np.asarray(system.rhs, dtype=dtype)
    if system.dimension == 0:
        return system.expand(np.zeros(0, dtype=dtype))

    try:
        lu = splu(a)
    except RuntimeError as err:
        raise SolverError('sparse factorization failed', str(err)) from err

    with np.errstate(all='ignore'):
        x = lu.solve(b)
        residual = _relative_residual(a, x, b)
        if residual > RESIDUAL_TOL and np.isfinite(residual):
            x = x + lu.solve(b - a @ x)
            residual = _relative_residual(a, x, b)
    if not np.all(np.isfinite(x)) or not residual <= RESIDUAL_TOL:
        raise SolverError('residual contract missed', f'relative residual {residual:.3e}')
    return system.expand(x)


def _relative_residual(a: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    r = np.linalg.norm(a @ x - b)
    scale = np.linalg.norm(b)
    return float(r / scale) if scale > 0 else float(r)


def solve_neumann_mean_zero(system: SparseSystem, mesh: TriMesh) -> np.ndarray:
    """
    Solves a (possibly singular) pure Neumann system under the constraint
    that the discrete boundary mean 1^T M_G u vanishes, through a saddle
    system with one Lagrange multiplier. Nonsingular systems are accepted
    and the constraint is enforced all the same.

    Args:
        system (SparseSystem): Full unconstrained system
        mesh (TriMesh): Mesh providing the boundary mass

    Returns:
        np.ndarray: Nodal solution
    """
    weights = boundary_mass(mesh) @ np.ones(mesh.n_nodes)
    w = sp.csr_matrix(weights.reshape(-1, 1))
    augmented = sp.bmat([[system.matrix, w], [w.T, None]], format='csr')
    rhs = np.concatenate([system.rhs, [0.0]])
    kind = 'complex' if system.is_complex else 'real'
    x = solve_sparse(SparseSystem(augmented, rhs), kind)
    return x[:-1]


def norms(field: np.ndarray, mesh: TriMesh) -> Dict[str, float]:
    """
    Discrete norms of a P1 field computed with the exact P1 matrices.

    Args:
        field (np.ndarray): Real or complex nodal values
        mesh (TriMesh): Mesh

    Returns:
        Dict[str, float]: keys 'L2', 'H1_seminorm', 'H1', 'boundary_L2'
    """
    u = np.asarray(field)
    l2 = float(np.real(np.vdot(u, unit_mass(mesh) @ u)))
    semi = float(np.real(np.vdot(u, unit_stiffness(mesh) @ u)))
    bnd = float(np.real(np.vdot(u, boundary_mass(mesh) @ u)))
    l2, semi, bnd = max(l2, 0.0), max(semi, 0.0), max(bnd, 0.0)
    return {
        'L2': l2 ** 0.5,
        'H1_seminorm': semi ** 0.5,
        'H1': (l2 + semi) ** 0.5,
        'boundary_L2': bnd ** 0.5,
    }
