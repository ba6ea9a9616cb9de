"""
Cost functionals and their L2 gradient densities with respect to the P0
diffusion coefficient:

- ccbm: 1/2 (w0 |u_i|_0^2 + w1 |grad u_i|_0^2) of the complex Robin state
- kv:   Kohn-Vogelius energy gap between the Dirichlet and Neumann states
- td:   Dirichlet-trace tracking of the Neumann state
- tn:   Neumann-flux tracking of the Dirichlet state

All misfits carry a factor 1/2 and share the Tikhonov term
1/2 rho |alpha|_0^2. Gradients are exact derivatives of the discrete
costs, obtained from discrete adjoint solves.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence
import logging

import numpy as np

from recon.errors import SolverError
from recon.fem_core import (CoefficientField, ScalarData, SparseSystem, apply_dirichlet,
    assemble_load, assemble_operator, assemble_stiffness, boundary_mass, gradients, p0_inner,
    solve_sparse, unit_mass, unit_stiffness)
from recon.forward import (CauchyData, StateBundle, solve_ccbm_adjoint, solve_ccbm_state,
    solve_dirichlet_state, solve_neumann_state)
from recon.mesh import PartitionSpec, TriMesh

logger = logging.getLogger(__name__)

METHODS = ('ccbm', 'kv', 'td', 'tn')

GradientDensity = np.ndarray


@dataclass(frozen=True)
class Weights:
    """
    Args:
        w0 (float): L2 misfit weight (CCBM)
        w1 (float): H1-seminorm misfit weight (CCBM)
        rho (float): Tikhonov parameter
    """
    w0: float = 1.0
    w1: float = 0.0
    rho: float = 0.0

    def __post_init__(self):
        if self.w0 < 0 or self.w1 < 0 or self.rho < 0:
            raise ValueError(f'Weights {self} must be non-negative')


@dataclass(frozen=True)
class CostBreakdown:
    misfit: float
    regularization: float
    total: float

    @classmethod
    def of(cls, misfit: float, regularization: float) -> 'CostBreakdown':
        return cls(float(misfit), float(regularization), float(misfit + regularization))


@dataclass
class Evaluation:
    """
    Cost and (optionally) gradient of one method at one coefficient.

    Args:
        cost (CostBreakdown): Misfit, regularization and total
        misfit_density (np.ndarray): L2 gradient density of the misfit
        density (np.ndarray): misfit_density + rho alpha
        states (StateBundle): States and adjoints that were solved
    """
    cost: CostBreakdown
    misfit_density: Optional[GradientDensity] = None
    density: Optional[GradientDensity] = None
    states: Optional[StateBundle] = None


def regularization_value(mesh: TriMesh, alpha: CoefficientField) -> float:
    """R(alpha) = |alpha|_0^2 for P0 alpha."""
    return float(np.sum(alpha * alpha * mesh.areas))


def _quadratic(matrix, u: np.ndarray) -> float:
    return float(np.real(np.vdot(u, matrix @ u)))


def _dot_grad(mesh: TriMesh, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(gradients(mesh, a) * gradients(mesh, b), axis=1)


def _check_gradient_support(data: ScalarData):
    if data.has_advection:
        raise NotImplementedError('gradients are only derived for b = 0')


def _finish(mesh: TriMesh, alpha: CoefficientField, weights: Weights, misfit: float,
    misfit_density: Optional[np.ndarray], states: StateBundle) -> Evaluation:
    regularization = 0.5 * weights.rho * regularization_value(mesh, alpha)
    density = None
    if misfit_density is not None:
        density = misfit_density + weights.rho * alpha
    return Evaluation(CostBreakdown.of(misfit, regularization), misfit_density, density, states)


def reweight(evaluation: Evaluation, mesh: TriMesh, alpha: CoefficientField,
    rho: float) -> Evaluation:
    """Same states and misfit under a new Tikhonov parameter."""
    return _finish(mesh, alpha, Weights(rho=rho), evaluation.cost.misfit,
        evaluation.misfit_density, evaluation.states)


def _evaluate_ccbm(mesh, alpha, data, cauchy, weights, gradient):
    u = solve_ccbm_state(mesh, alpha, data, cauchy)
    u_r, u_i = u.real, u.imag
    misfit = 0.5 * (weights.w0 * _quadratic(unit_mass(mesh), u_i)
        + weights.w1 * _quadratic(unit_stiffness(mesh), u_i))
    states = StateBundle(mesh, alpha, u=u)
    density = None
    if gradient:
        p = solve_ccbm_adjoint(mesh, alpha, data, u_i, weights.w0, weights.w1)
        states.p = p
        density = _dot_grad(mesh, u_r, p.imag) - _dot_grad(mesh, u_i, p.real)
    return misfit, density, states


def _evaluate_kv(mesh, alpha, data, cauchy, weights, gradient):
    u_d = solve_dirichlet_state(mesh, alpha, data, cauchy.f)
    u_n = solve_neumann_state(mesh, alpha, data, cauchy.g)
    e = u_d - u_n
    stiffness = assemble_stiffness(mesh, alpha)
    m_gamma = boundary_mass(mesh)
    misfit = 0.5 * _quadratic(stiffness, e) + 0.5 * _quadratic(m_gamma, e)
    states = StateBundle(mesh, alpha, u_D=u_d, u_N=u_n)
    density = None
    if gradient:
        operator_t = assemble_operator(mesh, alpha, data).T.tocsr()
        r = stiffness @ e + m_gamma @ e
        p_n = solve_sparse(SparseSystem(operator_t, r))
        nodes = mesh.boundary_nodes
        p_d = solve_sparse(apply_dirichlet(SparseSystem(operator_t, r), nodes, np.zeros(nodes.size)))
        grad_e = gradients(mesh, e)
        density = (0.5 * np.sum(grad_e * grad_e, axis=1)
            - _dot_grad(mesh, u_d, p_d) + _dot_grad(mesh, u_n, p_n))
    return misfit, density, states


def _evaluate_td(mesh, alpha, data, cauchy, weights, gradient):
    v = solve_neumann_state(mesh, alpha, data, cauchy.g)
    residual = np.zeros(mesh.n_nodes)
    residual[cauchy.nodes] = v[cauchy.nodes] - cauchy.f
    m_gamma = boundary_mass(mesh)
    misfit = 0.5 * _quadratic(m_gamma, residual)
    states = StateBundle(mesh, alpha, u_N=v)
    density = None
    if gradient:
        operator_t = assemble_operator(mesh, alpha, data).T.tocsr()
        p = solve_sparse(SparseSystem(operator_t, m_gamma @ residual))
        density = -_dot_grad(mesh, v, p)
    return misfit, density, states


def recover_boundary_flux(mesh: TriMesh, alpha: CoefficientField, data: ScalarData,
    u: np.ndarray) -> np.ndarray:
    """
    Weak recovery of alpha du/dn at the boundary nodes: the functional
    <alpha du/dn, phi_j> = a(u, phi_j) - (Q, phi_j) is evaluated for the
    boundary hat functions and inverted with the boundary mass matrix.

    Args:
        mesh (TriMesh): Mesh
        alpha (CoefficientField): Coefficient
        data (ScalarData): b, c and Q
        u (np.ndarray): Nodal state

    Returns:
        np.ndarray: Flux at mesh.boundary_nodes

    Raises:
        SolverError: If the boundary mass system cannot be solved
    """
    nodes = mesh.boundary_nodes
    functional = assemble_operator(mesh, alpha, data) @ u - assemble_load(mesh, data.Q)
    m_bb = boundary_mass(mesh)[nodes][:, nodes]
    try:
        return solve_sparse(SparseSystem(m_bb, functional[nodes]))
    except SolverError as err:
        raise SolverError('boundary flux recovery failed', err.diagnostic) from err


def _evaluate_tn(mesh, alpha, data, cauchy, weights, gradient):
    u = solve_dirichlet_state(mesh, alpha, data, cauchy.f)
    nodes = mesh.boundary_nodes
    r = recover_boundary_flux(mesh, alpha, data, u) - cauchy.g
    m_bb = boundary_mass(mesh)[nodes][:, nodes]
    misfit = 0.5 * _quadratic(m_bb, r)
    states = StateBundle(mesh, alpha, u_D=u)
    density = None
    if gradient:
        operator_t = assemble_operator(mesh, alpha, data).T.tocsr()
        system = SparseSystem(operator_t, np.zeros(mesh.n_nodes))
        p = solve_sparse(apply_dirichlet(system, nodes, r))
        density = _dot_grad(mesh, u, p)
    return misfit, density, states


_EVALUATORS: Dict[str, Callable] = {
    'ccbm': _evaluate_ccbm,
    'kv': _evaluate_kv,
    'td': _evaluate_td,
    'tn': _evaluate_tn,
}


def evaluate(method: str, mesh: TriMesh, alpha: CoefficientField, data: ScalarData,
    cauchy: CauchyData, weights: Weights, gradient: bool = True) -> Evaluation:
    """
    Evaluates the cost of a method and, if asked, its gradient density.

    Args:
        method (str): One of METHODS
        mesh (TriMesh): Inversion mesh
        alpha (CoefficientField): Coefficient
        data (ScalarData): b, c and Q
        cauchy (CauchyData): Measurements
        weights (Weights): w0, w1 and rho
        gradient (bool): Also solve the adjoint problems

    Returns:
        Evaluation: Cost, densities and states
    """
    if method not in _EVALUATORS:
        raise ValueError(f'Method {method} not recognized')
    if method == 'ccbm' and weights.w0 + weights.w1 <= 0:
        raise ValueError('CCBM needs w0 + w1 > 0')
    if gradient:
        _check_gradient_support(data)
        if method in ('kv', 'td') and data.is_pure_neumann:
            raise NotImplementedError('gradients through a mean-zero Neumann state are not derived')
    alpha = np.asarray(alpha, dtype=float)
    misfit, density, states = _EVALUATORS[method](mesh, alpha, data, cauchy, weights, gradient)
    return _finish(mesh, alpha, weights, misfit, density, states)


def cost_ccbm(mesh, alpha, data, cauchy, weights) -> CostBreakdown:
    return evaluate('ccbm', mesh, alpha, data, cauchy, weights, gradient=False).cost


def grad_ccbm(mesh, alpha, data, cauchy, weights) -> GradientDensity:
    """Per-triangle grad u_r . grad p_i - grad u_i . grad p_r + rho alpha."""
    return evaluate('ccbm', mesh, alpha, data, cauchy, weights).density


def cost_kv(mesh, alpha, data, cauchy, weights) -> CostBreakdown:
    return evaluate('kv', mesh, alpha, data, cauchy, weights, gradient=False).cost


def grad_kv(mesh, alpha, data, cauchy, weights) -> GradientDensity:
    return evaluate('kv', mesh, alpha, data, cauchy, weights).density


def cost_td(mesh, alpha, data, cauchy, weights) -> CostBreakdown:
    return evaluate('td', mesh, alpha, data, cauchy, weights, gradient=False).cost


def grad_td(mesh, alpha, data, cauchy, weights) -> GradientDensity:
    return evaluate('td', mesh, alpha, data, cauchy, weights).density


def cost_tn(mesh, alpha, data, cauchy, weights) -> CostBreakdown:
    return evaluate('tn', mesh, alpha, data, cauchy, weights, gradient=False).cost


def grad_tn(mesh, alpha, data, cauchy, weights) -> GradientDensity:
    return evaluate('tn', mesh, alpha, data, cauchy, weights).density


@dataclass
class ErrorMetrics:
    L2_error: float
    relative_L2: float
    region_values: List[float] = field(default_factory=list)
    region_exact: List[float] = field(default_factory=list)
    per_region_abs_errors: List[float] = field(default_factory=list)
    per_region_rel_errors: List[float] = field(default_factory=list)
    avg_abs_error: float = 0.0
    avg_rel_error: float = 0.0


def region_means(mesh: TriMesh, alpha: np.ndarray) -> np.ndarray:
    """Area-weighted mean of a P0 field over every subregion."""
    weight = np.bincount(mesh.regions, weights=mesh.areas, minlength=mesh.n_regions)
    total = np.bincount(mesh.regions, weights=mesh.areas * alpha, minlength=mesh.n_regions)
    return total / weight


def error_metrics(alpha: CoefficientField, alpha_star: Sequence[float], mesh: TriMesh,
    partition: Optional[PartitionSpec] = None) -> ErrorMetrics:
    """
    Compares a reconstruction with the exact coefficient.

    Args:
        alpha (CoefficientField): Reconstruction
        alpha_star (Sequence[float]): Exact values, either one per region
            or one per triangle
        mesh (TriMesh): Mesh with region ids
        partition (PartitionSpec): Partition the regions came from

    Returns:
        ErrorMetrics: L2 errors plus per-region absolute and relative
            errors (|a - a*| / |a*|) and their averages
    """
    alpha = np.asarray(alpha, dtype=float)
    n_regions = mesh.n_regions
    if partition is not None and partition.n_regions != n_regions:
        raise ValueError(f'Partition has {partition.n_regions} regions, mesh has {n_regions}')
    alpha_star = np.asarray(alpha_star, dtype=float)
    if alpha_star.shape[0] == mesh.n_triangles:
        exact = alpha_star
    elif alpha_star.shape[0] == n_regions:
        exact = alpha_star[mesh.regions]
    else:
        raise ValueError(f'{alpha_star.shape[0]} exact values for {n_regions} regions')

    diff = alpha - exact
    l2 = p0_inner(mesh, diff, diff) ** 0.5
    norm = p0_inner(mesh, exact, exact) ** 0.5
    values = region_means(mesh, alpha)
    reference = region_means(mesh, exact)
    abs_err = np.abs(values - reference)
    rel_err = abs_err / np.abs(reference)
    return ErrorMetrics(
        L2_error=l2,
        relative_L2=l2 / norm if norm > 0 else float('inf'),
        region_values=values.tolist(),
        region_exact=reference.tolist(),
        per_region_abs_errors=abs_err.tolist(),
        per_region_rel_errors=rel_err.tolist(),
        avg_abs_error=float(abs_err.mean()),
        avg_rel_error=float(rel_err.mean()),
    )


def check_gradient(method: str, mesh: TriMesh, alpha: CoefficientField, data: ScalarData,
    cauchy: CauchyData, weights: Weights, n_directions: int = 5, seed: int = 0,
    steps: Sequence[float] = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)) -> List[float]:
    """
    Finite-difference oracle: compares <density, d> with central
    differences of the total cost in random directions d, keeping the
    best step of the sweep for every direction.

    Returns:
        List[float]: Relative error per direction
    """
    alpha = np.asarray(alpha, dtype=float)
    density = evaluate(method, mesh, alpha, data, cauchy, weights).density
    rng = np.random.Generator(np.random.Philox(seed))

    def total(a):
        return evaluate(method, mesh, a, data, cauchy, weights, gradient=False).cost.total

    errors = []
    for _ in range(n_directions):
        direction = rng.standard_normal(mesh.n_triangles)
        adjoint = p0_inner(mesh, density, direction)
        best = np.inf
        for h in steps:
            fd = (total(alpha + h * direction) - total(alpha - h * direction)) / (2.0 * h)
            scale = max(abs(adjoint), abs(fd), 1e-300)
            best = min(best, abs(fd - adjoint) / scale)
        logger.debug('%s gradient check: adjoint %.6e, relative error %.3e', method, adjoint, best)
        errors.append(float(best))
    return errors
