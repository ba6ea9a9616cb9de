"""
Forward solves for the coefficient inverse problem: the complex Robin
(CCBM) state, the Dirichlet and Neumann baseline states, the CCBM adjoint
and the linearized CCBM state. Also synthesizes Cauchy data on a finer
mesh and corrupts the Dirichlet trace with multiplicative Gaussian noise.
"""

from dataclasses import dataclass, replace
from typing import Callable, Optional, Union
import logging

import numpy as np
import scipy.sparse as sp

from recon.errors import InverseCrimeError, SolverError, WellPosednessError
from recon.fem_core import (CoefficientField, ComplexNodalField, RealNodalField, ScalarData,
    SparseSystem, apply_dirichlet, assemble_boundary_load, assemble_load, assemble_operator,
    assemble_stiffness, boundary_mass, interpolate, solve_neumann_mean_zero, solve_sparse,
    unit_mass, unit_stiffness)
from recon.mesh import TriMesh

logger = logging.getLogger(__name__)

# two uniform refinements multiply the triangle count by 16
MIN_REFINEMENT_RATIO = 16


@dataclass(frozen=True, eq=False)
class CauchyData:
    """
    Boundary measurements aligned with the boundary nodes of the
    inversion mesh.

    Args:
        nodes (np.ndarray): Boundary node indices of the inversion mesh
        f (np.ndarray): Dirichlet trace at nodes
        g (np.ndarray): Neumann flux at nodes
        noise_level (float): delta used to corrupt f
        seed (int): Seed of the noise draw, None when clean
        state_sup (float): max |u*| of the synthetic fine-mesh state
    """
    nodes: np.ndarray
    f: np.ndarray
    g: np.ndarray
    noise_level: float = 0.0
    seed: Optional[int] = None
    state_sup: float = float('nan')

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64)
        f = np.asarray(self.f, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if f.shape != nodes.shape or g.shape != nodes.shape:
            raise ValueError(f'Cauchy arrays of sizes {f.shape}, {g.shape} for {nodes.shape[0]} nodes')
        if self.noise_level < 0:
            raise ValueError(f'Noise level {self.noise_level} must be non-negative')
        object.__setattr__(self, 'nodes', nodes)
        object.__setattr__(self, 'f', f)
        object.__setattr__(self, 'g', g)

    @classmethod
    def from_functions(cls, mesh: TriMesh, f: Union[float, Callable],
        g: Union[float, Callable]) -> 'CauchyData':
        """Samples analytic Cauchy data at the boundary nodes of a mesh."""
        nodes = mesh.boundary_nodes
        return cls(nodes, interpolate(mesh, f)[nodes], interpolate(mesh, g)[nodes])

    def scaled(self, factor: float) -> 'CauchyData':
        return replace(self, f=factor * self.f, g=factor * self.g)


@dataclass
class StateBundle:
    """
    States of one coefficient. Fields that a method does not need stay None.
    """
    mesh: TriMesh
    alpha: CoefficientField
    u: Optional[ComplexNodalField] = None
    u_D: Optional[RealNodalField] = None
    u_N: Optional[RealNodalField] = None
    p: Optional[ComplexNodalField] = None


def _check_cauchy(mesh: TriMesh, cauchy: CauchyData):
    if not np.array_equal(cauchy.nodes, mesh.boundary_nodes):
        raise ValueError('Cauchy data are not aligned with the mesh boundary nodes')


def _solve(system: SparseSystem, kind: str, alpha: np.ndarray) -> np.ndarray:
    try:
        return solve_sparse(system, kind)
    except SolverError as err:
        diagnostic = f'{err.diagnostic}; alpha in [{alpha.min():.4g}, {alpha.max():.4g}]'
        raise SolverError('forward solve failed', diagnostic) from err


def ccbm_matrix(mesh: TriMesh, alpha: CoefficientField, data: ScalarData) -> sp.csr_matrix:
    """Matrix of B(u, v; alpha) = a(u, v) + i <u, v>."""
    return (assemble_operator(mesh, alpha, data) + 1j * boundary_mass(mesh)).tocsr()


def ccbm_adjoint_matrix(mesh: TriMesh, alpha: CoefficientField, data: ScalarData) -> sp.csr_matrix:
    """Matrix of the adjoint form, the conjugate transpose of ccbm_matrix."""
    return ccbm_matrix(mesh, alpha, data).conj().T.tocsr()


def ccbm_rhs(mesh: TriMesh, data: ScalarData, cauchy: CauchyData) -> np.ndarray:
    """Load vector of l(v) = (Q, v) + <g, v> + i <f, v>."""
    return (assemble_load(mesh, data.Q)
        + assemble_boundary_load(mesh, cauchy.g, cauchy.nodes)
        + 1j * assemble_boundary_load(mesh, cauchy.f, cauchy.nodes))


def solve_ccbm_state(mesh: TriMesh, alpha: CoefficientField, data: ScalarData,
    cauchy: CauchyData) -> ComplexNodalField:
    """
    Solves the complex Robin problem alpha du/dn + i u = g + i f.

    Args:
        mesh (TriMesh): Inversion mesh
        alpha (CoefficientField): Diffusion coefficient
        data (ScalarData): b, c and Q
        cauchy (CauchyData): Measurements on the mesh boundary

    Returns:
        ComplexNodalField: u = u_r + i u_i
    """
    _check_cauchy(mesh, cauchy)
    system = SparseSystem(ccbm_matrix(mesh, alpha, data), ccbm_rhs(mesh, data, cauchy))
    return _solve(system, 'complex', alpha)


def solve_dirichlet_state(mesh: TriMesh, alpha: CoefficientField, data: ScalarData,
    f: np.ndarray) -> RealNodalField:
    """
    Solves the Dirichlet problem with trace f given at mesh.boundary_nodes.
    """
    system = SparseSystem(assemble_operator(mesh, alpha, data), assemble_load(mesh, data.Q))
    system = apply_dirichlet(system, mesh.boundary_nodes, np.asarray(f, dtype=float))
    return _solve(system, 'real', alpha)


def solve_neumann_state(mesh: TriMesh, alpha: CoefficientField, data: ScalarData,
    g: np.ndarray) -> RealNodalField:
    """
    Solves the Neumann problem alpha du/dn = g with g given at
    mesh.boundary_nodes. Without reaction and advection the solution is
    fixed by a zero boundary mean and the data must be compatible.

    Raises:
        WellPosednessError: If pure Neumann data are incompatible
    """
    rhs = assemble_load(mesh, data.Q) + assemble_boundary_load(mesh, np.asarray(g, dtype=float))
    system = SparseSystem(assemble_operator(mesh, alpha, data), rhs)
    if not data.is_pure_neumann:
        return _solve(system, 'real', alpha)
    gap = abs(rhs.sum())
    if gap > 1e-10 * max(1.0, np.abs(rhs).sum()):
        raise WellPosednessError(f'incompatible Neumann data: int Q + int g = {rhs.sum():.3e}')
    return solve_neumann_mean_zero(system, mesh)


def solve_ccbm_adjoint(mesh: TriMesh, alpha: CoefficientField, data: ScalarData,
    u_i: RealNodalField, w0: float, w1: float) -> ComplexNodalField:
    """
    Solves B*(p, v; alpha) = w0 (u_i, v) + w1 (grad u_i, grad v).

    Args:
        mesh (TriMesh): Inversion mesh
        alpha (CoefficientField): Diffusion coefficient
        data (ScalarData): b, c and Q
        u_i (RealNodalField): Imaginary part of the CCBM state
        w0 (float): L2 misfit weight
        w1 (float): H1-seminorm misfit weight

    Returns:
        ComplexNodalField: p = p_r + i p_i
    """
    rhs = w0 * (unit_mass(mesh) @ u_i) + w1 * (unit_stiffness(mesh) @ u_i)
    system = SparseSystem(ccbm_adjoint_matrix(mesh, alpha, data), rhs.astype(complex))
    return _solve(system, 'complex', alpha)


def solve_ccbm_linearized(mesh: TriMesh, alpha: CoefficientField, data: ScalarData,
    u: ComplexNodalField, dalpha: CoefficientField) -> ComplexNodalField:
    """Derivative u' of the CCBM state in direction dalpha: B(u', v) = -(dalpha grad u, grad v)."""
    rhs = -(assemble_stiffness(mesh, dalpha) @ u)
    return _solve(SparseSystem(ccbm_matrix(mesh, alpha, data), rhs), 'complex', alpha)


def transfer_boundary_trace(fine_mesh: TriMesh, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """
    Interpolates a nodal trace linearly along the fine boundary polyline
    at the given points. Each point is projected onto its closest fine
    boundary edge.

    Args:
        fine_mesh (TriMesh): Mesh carrying the trace
        values (np.ndarray): Nodal values on fine_mesh (all nodes)
        points (np.ndarray): (P, 2) points on or near the boundary

    Returns:
        np.ndarray: (P,) interpolated values
    """
    a = fine_mesh.nodes[fine_mesh.boundary_edges[:, 0]]
    b = fine_mesh.nodes[fine_mesh.boundary_edges[:, 1]]
    d = b - a
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    rel = points[:, None, :] - a[None, :, :]
    s = np.einsum('pek,ek->pe', rel, d) / np.einsum('ek,ek->e', d, d)[None, :]
    s = np.clip(s, 0.0, 1.0)
    closest = a[None, :, :] + s[:, :, None] * d[None, :, :]
    dist = np.linalg.norm(points[:, None, :] - closest, axis=2)
    edge = np.argmin(dist, axis=1)
    t = s[np.arange(len(points)), edge]
    i, j = fine_mesh.boundary_edges[edge].T
    return (1.0 - t) * values[i] + t * values[j]


def synthesize_cauchy_data(alpha_star: CoefficientField, data: ScalarData,
    g_input: Union[float, Callable], fine_mesh: TriMesh, coarse_mesh: TriMesh,
    allow_inverse_crime: bool = False) -> CauchyData:
    """
    Generates clean Cauchy data: solves the Neumann problem with input
    g_input on the fine mesh and reads the Dirichlet trace f off at the
    coarse boundary nodes.

    Args:
        alpha_star (CoefficientField): Exact coefficient on fine_mesh
        data (ScalarData): b, c and Q on fine_mesh
        g_input (Union[float, Callable]): Neumann input g(x, y)
        fine_mesh (TriMesh): Data mesh
        coarse_mesh (TriMesh): Inversion mesh
        allow_inverse_crime (bool): Skip the refinement-gap guard (tests)

    Returns:
        CauchyData: (f, g) at the coarse boundary nodes with state_sup set

    Raises:
        InverseCrimeError: If fine_mesh is not at least two uniform
            refinements finer than coarse_mesh
    """
    ratio = fine_mesh.n_triangles / coarse_mesh.n_triangles
    if not allow_inverse_crime and (fine_mesh is coarse_mesh or ratio < MIN_REFINEMENT_RATIO):
        raise InverseCrimeError(
            f'data mesh has {fine_mesh.n_triangles} triangles, inversion mesh '
            f'{coarse_mesh.n_triangles}; at least two refinement levels are required')

    g_fine = interpolate(fine_mesh, g_input)[fine_mesh.boundary_nodes]
    u_star = solve_neumann_state(fine_mesh, alpha_star, data, g_fine)

    nodes = coarse_mesh.boundary_nodes
    f = transfer_boundary_trace(fine_mesh, u_star, coarse_mesh.nodes[nodes])
    g = interpolate(coarse_mesh, g_input)[nodes]
    state_sup = float(np.abs(u_star).max())
    logger.info('synthesized Cauchy data on %d boundary nodes (|u*|_inf = %.4g)',
        nodes.size, state_sup)
    return CauchyData(nodes, f, g, state_sup=state_sup)


def add_noise(cauchy: CauchyData, u_star_sup: Optional[float], delta: float,
    seed: int) -> CauchyData:
    """
    Corrupts the Dirichlet trace: f_k <- (1 + delta eta_k) f_k with eta_k
    i.i.d. Gaussian of mean 0 and standard deviation u_star_sup, drawn
    from a Philox counter-based generator. g stays clean.

    Args:
        cauchy (CauchyData): Clean data
        u_star_sup (float): max |u*|, defaults to cauchy.state_sup
        delta (float): Noise level
        seed (int): Generator seed

    Returns:
        CauchyData: Noisy copy
    """
    if delta < 0:
        raise ValueError(f'Noise level {delta} must be non-negative')
    if delta == 0:
        return replace(cauchy, noise_level=0.0, seed=seed)
    if u_star_sup is None:
        u_star_sup = cauchy.state_sup
    if not u_star_sup > 0:
        raise ValueError(f'Noise scale {u_star_sup} must be positive')
    rng = np.random.Generator(np.random.Philox(seed))
    eta = rng.normal(0.0, u_star_sup, size=cauchy.f.shape)
    return replace(cauchy, f=(1.0 + delta * eta) * cauchy.f, noise_level=float(delta), seed=seed)
