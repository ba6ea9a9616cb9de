"""
Sobolev-gradient descent on the diffusion coefficient.

Every iteration solves the states and adjoints of the configured method,
smooths the L2 gradient density in the mu-weighted H1 inner product,
takes a fixed or Armijo step, and optionally restricts the result to a
piecewise-constant field with the pick-a-point rule.
"""

from dataclasses import dataclass, field, fields
from typing import Callable, List, Optional, Tuple
import logging

import numpy as np

from recon.errors import ConfigurationError, SolverError
from recon.fem_core import (CoefficientField, RealNodalField, ScalarData, SparseSystem,
    centroid_values, norms, p0_inner, solve_sparse, unit_mass, unit_stiffness)
from recon.forward import CauchyData
from recon.mesh import PartitionSpec, TriMesh
from recon.objectives import (METHODS, CostBreakdown, ErrorMetrics, Weights,
    error_metrics, evaluate, region_means, regularization_value, reweight)

logger = logging.getLogger(__name__)

UPDATE_RULES = ('smoothed-full', 'smoothed-misfit-plus-raw-tikhonov', 'l2-conventional')
STEP_RULES = ('fixed', 'armijo')
TIKHONOV_SIGNS = {'minus': 1.0, 'paper-plus': -1.0}
STALL_ACTIONS = ('stop', 'continue')


@dataclass(frozen=True)
class DescentConfig:
    """
    Args:
        method (str): ccbm, kv, td or tn
        update_rule (str): One of UPDATE_RULES
        mu (float): Weight of the gradient term of the smoothing product
        step (str): 'fixed' or 'armijo'
        t (float): Fixed step, or the first Armijo trial
        c1 (float): Armijo sufficient-decrease constant
        shrink (float): Armijo backtracking factor
        t_min (float): Smallest Armijo trial before the search stalls
        rho (float): Tikhonov parameter, the starting value under balancing
        balancing_gamma (float): gamma > 1 turns on the balancing principle
        w0 (float): CCBM L2 weight
        w1 (float): CCBM H1-seminorm weight
        k_max (int): Number of iterations
        projection (PartitionSpec): Pick-a-point restriction, if any
        tikhonov_sign (str): 'minus' or 'paper-plus' for the separate
            Tikhonov term of the non-smoothed-full rules
        bounds (Tuple[float, float]): Clamp applied after every step
        seed (int): Seed recorded with the run
        on_stall (str): 'stop' or 'continue' after a stalled search
        step_growth (float): Factor applied to the last accepted step to
            start the next search, 1.0 restarts at t
        grad_tol (float): Stop once the smoothed gradient norm drops below
    """
    method: str = 'ccbm'
    update_rule: str = 'smoothed-full'
    mu: float = 1.0
    step: str = 'fixed'
    t: float = 0.1
    c1: float = 1e-4
    shrink: float = 0.5
    t_min: float = 1e-8
    rho: float = 0.0
    balancing_gamma: Optional[float] = None
    w0: float = 1.0
    w1: float = 0.0
    k_max: int = 100
    projection: Optional[PartitionSpec] = None
    tikhonov_sign: str = 'minus'
    bounds: Optional[Tuple[float, float]] = None
    seed: int = 0
    on_stall: str = 'stop'
    step_growth: float = 1.0
    grad_tol: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f'Method {self.method!r} not recognized')
        if self.update_rule not in UPDATE_RULES:
            raise ConfigurationError(f'Update rule {self.update_rule!r} not recognized')
        if self.step not in STEP_RULES:
            raise ConfigurationError(f'Step rule {self.step!r} not recognized')
        if self.tikhonov_sign not in TIKHONOV_SIGNS:
            raise ConfigurationError(f'Tikhonov sign {self.tikhonov_sign!r} not recognized')
        if self.on_stall not in STALL_ACTIONS:
            raise ConfigurationError(f'Stall action {self.on_stall!r} not recognized')
        if self.k_max < 0 or self.mu < 0 or self.rho < 0 or self.t <= 0:
            raise ConfigurationError('k_max, mu and rho must be non-negative and t positive')
        if not 0.0 <= self.c1 < 1.0 or not 0.0 < self.shrink < 1.0 or self.t_min <= 0:
            raise ConfigurationError('Armijo needs c1 in [0, 1), shrink in (0, 1) and t_min > 0')
        if self.balancing_gamma is not None and self.balancing_gamma <= 1.0:
            raise ConfigurationError(f'Balancing gamma {self.balancing_gamma} must exceed 1')
        if self.step_growth < 1.0:
            raise ConfigurationError(f'Step growth {self.step_growth} must be at least 1')
        if self.bounds is not None:
            lower, upper = self.bounds
            if not lower < upper:
                raise ConfigurationError(f'Bounds {self.bounds} are empty')
            object.__setattr__(self, 'bounds', (float(lower), float(upper)))

    @classmethod
    def from_dict(cls, values: dict) -> 'DescentConfig':
        """
        Builds a config from JSON values; a projection may be given as a
        PartitionSpec keyword dict.

        Raises:
            ConfigurationError: On unknown keys or invalid values
        """
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError('Unknown descent keys', unknown)
        values = dict(values)
        projection = values.get('projection')
        if isinstance(projection, dict):
            values['projection'] = PartitionSpec(**projection)
        if values.get('bounds') is not None:
            values['bounds'] = tuple(values['bounds'])
        return cls(**values)

    @property
    def sign(self) -> float:
        return TIKHONOV_SIGNS[self.tikhonov_sign]

    @property
    def smoothing_weight(self) -> float:
        return 0.0 if self.update_rule == 'l2-conventional' else self.mu


@dataclass
class IterationRecord:
    """State of the iterate alpha_k before step k is taken."""
    k: int
    cost: CostBreakdown
    grad_norm: float
    step: float
    rho: float
    region_values: Optional[List[float]] = None
    errors: Optional[ErrorMetrics] = None
    stalled: bool = False


@dataclass
class InversionRun:
    """
    Args:
        alpha (CoefficientField): Final coefficient
        history (List[IterationRecord]): One record per iteration
        failure (str): Diagnostic of the solver failure that ended the run
        stalled (bool): A line search ran out of trial steps
    """
    alpha: CoefficientField
    history: List[IterationRecord] = field(default_factory=list)
    failure: Optional[str] = None
    stalled: bool = False

    @property
    def failed(self) -> bool:
        return self.failure is not None


@dataclass
class LineSearchResult:
    step: float
    alpha: Optional[np.ndarray]
    cost: Optional[float]
    n_trials: int
    stalled: bool = False
    descent: bool = True


def sobolev_smooth(mesh: TriMesh, density: np.ndarray, mu: float) -> RealNodalField:
    """
    Riesz representative of a P0 density in the inner product
    mu (grad u, grad v) + (u, v), i.e. the P1 solution of
    (mu K + M) G = b with b_j = sum over triangles T containing j of
    density_T |T| / 3.

    Args:
        mesh (TriMesh): Mesh
        density (np.ndarray): Per-triangle density
        mu (float): Smoothing weight, 0 gives the nodal L2 projection

    Returns:
        RealNodalField: Smoothed gradient G
    """
    if mu < 0:
        raise ValueError(f'Smoothing weight {mu} must be non-negative')
    density = np.asarray(density, dtype=float)
    if density.shape != (mesh.n_triangles,):
        raise ValueError(f'{density.shape[0]} density values for {mesh.n_triangles} triangles')
    share = np.repeat(density * mesh.areas / 3.0, 3)
    rhs = np.bincount(mesh.triangles.ravel(), weights=share, minlength=mesh.n_nodes)
    matrix = unit_mass(mesh) if mu == 0 else mu * unit_stiffness(mesh) + unit_mass(mesh)
    return solve_sparse(SparseSystem(matrix, rhs))


def descent_direction(mesh: TriMesh, alpha: CoefficientField, smoothed: RealNodalField,
    config: DescentConfig, rho: float) -> CoefficientField:
    """
    Per-triangle search direction. The smoothed gradient enters through
    its centroid values; rules other than smoothed-full add the raw
    Tikhonov derivative rho alpha separately.
    """
    direction = -centroid_values(mesh, smoothed)
    if config.update_rule != 'smoothed-full':
        direction = direction - config.sign * rho * np.asarray(alpha, dtype=float)
    return direction


def clamp(alpha: CoefficientField, bounds: Optional[Tuple[float, float]]) -> CoefficientField:
    if bounds is None:
        return alpha
    return np.clip(alpha, bounds[0], bounds[1])


def descent_step(mesh: TriMesh, alpha: CoefficientField, smoothed: RealNodalField,
    config: DescentConfig, rho: float, t: float) -> CoefficientField:
    """
    One update alpha - t G(centroid) for smoothed-full, and
    alpha - t G(centroid) - s t rho alpha for the other rules with s = +1
    under the minus sign convention and -1 under paper-plus. The clamp to
    config.bounds is applied last.

    Args:
        mesh (TriMesh): Mesh
        alpha (CoefficientField): Current coefficient
        smoothed (RealNodalField): Smoothed gradient of the density the
            rule calls for
        config (DescentConfig): Update rule, sign and bounds
        rho (float): Tikhonov parameter of this iteration
        t (float): Step size

    Returns:
        CoefficientField: Updated coefficient
    """
    direction = descent_direction(mesh, alpha, smoothed, config, rho)
    return clamp(np.asarray(alpha, dtype=float) + t * direction, config.bounds)


def armijo_search(alpha: np.ndarray, direction: np.ndarray, cost_fn: Callable[[np.ndarray], float],
    slope: float, c1: float = 1e-4, shrink: float = 0.5, t_init: float = 1.0,
    t_min: float = 1e-8, cost0: Optional[float] = None,
    apply: Optional[Callable[[np.ndarray, float, np.ndarray], np.ndarray]] = None,
    step_slope: Optional[Callable[[np.ndarray], float]] = None) -> LineSearchResult:
    """
    Backtracking search for the largest t = t_init shrink^n with
    J(trial(t)) <= J(alpha) - c1 t |slope|. When the trial point is
    clamped or projected, pass step_slope so the decrease is measured
    along the step actually taken: J(trial) <= J(alpha) + c1 dJ(trial - alpha).
    A trial whose forward solve fails or whose cost is None counts as
    rejected.

    Args:
        alpha (np.ndarray): Current point
        direction (np.ndarray): Search direction
        cost_fn (Callable): Cost of a trial point, may raise SolverError
            or return None for an inadmissible point
        slope (float): Directional derivative of the cost along direction
        c1 (float): Sufficient-decrease constant
        shrink (float): Backtracking factor
        t_init (float): First trial step
        t_min (float): Smallest trial step
        cost0 (float): J(alpha), computed when None
        apply (Callable): Maps (alpha, t, direction) to the trial point,
            alpha + t direction by default
        step_slope (Callable): Directional derivative of the cost along
            a step, t |slope| is used when None

    Returns:
        LineSearchResult: Accepted step, trial point and its cost. A
            non-descent direction returns t_min with descent False; an
            exhausted search returns t_min with stalled True.
    """
    if apply is None:
        apply = lambda a, t, d: a + t * d
    if cost0 is None:
        cost0 = cost_fn(alpha)

    def trial(t):
        point = apply(alpha, t, direction)
        try:
            return point, cost_fn(point)
        except SolverError as err:
            logger.debug('trial step %.3e rejected: %s', t, err)
            return point, None

    if slope >= 0:
        logger.warning('search direction is not a descent direction (slope %.3e)', slope)
        point, cost = trial(t_min)
        return LineSearchResult(t_min, point, cost, 1, descent=False)

    def decrease(t, point):
        if step_slope is None:
            return t * abs(slope)
        return max(-step_slope(point - alpha), 0.0)

    t = t_init
    n_trials = 0
    while t >= t_min:
        n_trials += 1
        point, cost = trial(t)
        if cost is not None and cost <= cost0 - c1 * decrease(t, point):
            return LineSearchResult(t, point, cost, n_trials)
        t *= shrink
    logger.warning('line search stalled after %d trials', n_trials)
    point, cost = trial(t_min)
    return LineSearchResult(t_min, point, cost, n_trials + 1, stalled=True)


def project_piecewise_constant(alpha: CoefficientField, partition: PartitionSpec,
    mesh: TriMesh) -> CoefficientField:
    """
    Pick-a-point restriction: every subregion takes the value of the
    triangle containing its sample point.

    Raises:
        ConfigurationError: If a sample point lies outside the mesh
    """
    alpha = np.asarray(alpha, dtype=float)
    values = np.empty(partition.n_regions)
    for i, point in enumerate(partition.sample_points):
        tri = mesh.locate(point)
        if tri < 0:
            raise ConfigurationError(f'sample point {point} lies outside the mesh')
        values[i] = alpha[tri]
    return values[partition.region_of(mesh.centroids)]


def update_rho_balancing(misfit: float, regularization: float, gamma: float,
    previous: float = 0.0) -> float:
    """
    Balancing principle rho = (gamma - 1) J / R, which makes
    (gamma - 1) J - rho R vanish. A non-positive R holds the previous rho.
    """
    if gamma <= 1.0:
        raise ValueError(f'Balancing gamma {gamma} must exceed 1')
    if regularization <= 0:
        logger.warning('balancing principle held rho at %g (R = %g)', previous, regularization)
        return previous
    return (gamma - 1.0) * misfit / regularization


def run_inversion(mesh: TriMesh, data: ScalarData, cauchy: CauchyData,
    alpha0: CoefficientField, config: DescentConfig,
    alpha_star: Optional[np.ndarray] = None) -> InversionRun:
    """
    Runs k_max descent iterations: state, adjoint, density, smoothing,
    step and optional projection. Record k describes alpha_k, so the
    final coefficient has no record of its own.

    Args:
        mesh (TriMesh): Inversion mesh
        data (ScalarData): b, c and Q
        cauchy (CauchyData): Measurements on mesh
        alpha0 (CoefficientField): Initial coefficient
        config (DescentConfig): Descent parameters
        alpha_star (np.ndarray): Exact coefficient per region or per
            triangle, enables error tracking

    Returns:
        InversionRun: Final coefficient and history. A solver failure
            ends the run with the history kept and failure set.
    """
    alpha = np.array(alpha0, dtype=float)
    if alpha.shape != (mesh.n_triangles,):
        raise ValueError(f'{alpha.shape[0]} initial values for {mesh.n_triangles} triangles')
    partition = config.projection

    def project(a):
        if partition is not None:
            a = project_piecewise_constant(a, partition, mesh)
        return a

    def trial_cost(a, weights):
        # alpha must stay positive and a negative misfit means the solve went unstable
        if a.min() <= 0:
            return None
        cost = evaluate(config.method, mesh, a, data, cauchy, weights, gradient=False).cost
        if cost.misfit < 0:
            return None
        return cost.total

    alpha = project(alpha)
    run = InversionRun(alpha)
    rho = config.rho
    t_start = config.t
    logger.info('%s inversion: %s, %s step, mu=%g, k_max=%d', config.method,
        config.update_rule, config.step, config.mu, config.k_max)

    for k in range(config.k_max):
        weights = Weights(config.w0, config.w1, rho)
        try:
            current = evaluate(config.method, mesh, alpha, data, cauchy, weights)
        except SolverError as err:
            logger.warning('%s run failed at iteration %d: %s', config.method, k, err)
            run.failure = f'iteration {k}: {err}'
            break
        if config.balancing_gamma is not None:
            rho = update_rho_balancing(current.cost.misfit, regularization_value(mesh, alpha),
                config.balancing_gamma, rho)
            weights = Weights(config.w0, config.w1, rho)
            current = reweight(current, mesh, alpha, rho)

        density = current.density if config.update_rule == 'smoothed-full' \
            else current.misfit_density
        smoothed = sobolev_smooth(mesh, density, config.smoothing_weight)
        grad_norm = norms(smoothed, mesh)['H1']
        direction = descent_direction(mesh, alpha, smoothed, config, rho)

        def take_step(a, t, d):
            return project(descent_step(mesh, a, smoothed, config, rho, t))

        record = IterationRecord(k, current.cost, grad_norm, config.t, rho)
        if partition is not None:
            record.region_values = region_means(mesh, alpha).tolist()
        if alpha_star is not None:
            record.errors = error_metrics(alpha, alpha_star, mesh, partition)
        run.history.append(record)

        if config.grad_tol is not None and grad_norm <= config.grad_tol:
            logger.info('gradient norm %.3e below tolerance at iteration %d', grad_norm, k)
            break

        if config.step == 'fixed':
            alpha = take_step(alpha, config.t, direction)
            logger.debug('k=%d J=%.6e |G|=%.3e', k, current.cost.total, grad_norm)
            continue

        slope = p0_inner(mesh, current.density, direction)
        search = armijo_search(alpha, direction,
            lambda a: trial_cost(a, weights),
            slope, c1=config.c1, shrink=config.shrink, t_init=t_start, t_min=config.t_min,
            cost0=current.cost.total, apply=take_step,
            step_slope=lambda s: p0_inner(mesh, current.density, s))
        record.step = search.step
        logger.debug('k=%d J=%.6e |G|=%.3e t=%.3e', k, current.cost.total, grad_norm, search.step)
        if search.stalled:
            record.stalled = True
            run.stalled = True
            if config.on_stall == 'stop':
                logger.warning('%s run stopped after a stalled search at iteration %d',
                    config.method, k)
                break
        # a stalled or non-descent trial is only taken if it does not raise the cost
        if search.cost is not None and search.cost <= current.cost.total:
            alpha = search.alpha
        if config.step_growth > 1.0:
            t_start = min(config.t, search.step * config.step_growth)

    run.alpha = alpha
    if run.history:
        logger.info('%s inversion done: J=%.6e after %d iterations', config.method,
            run.history[-1].cost.total, len(run.history))
    return run
