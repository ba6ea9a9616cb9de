"""
Named experiment presets and the JSON experiment config.

A preset is a plain dict so a config file can override any part of it
with recursive_update. Scalar fields such as alpha*, Q and g are written
as expressions in x and y.
"""

from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Union
import copy
import json
import logging

import numpy as np

from recon.errors import ConfigurationError
from recon.fem_core import ScalarData, coefficient_from_function
from recon.forward import CauchyData, synthesize_cauchy_data
from recon.inversion import DescentConfig
from recon.mesh import (PartitionSpec, TriMesh, assign_regions, build_disk_mesh,
    build_square_mesh, refine_uniform)
from recon.objectives import METHODS

logger = logging.getLogger(__name__)

_EXPRESSION_NAMES = {
    'pi': np.pi, 'sin': np.sin, 'cos': np.cos, 'exp': np.exp, 'sqrt': np.sqrt,
    'abs': np.abs, 'log': np.log,
}

_PIECEWISE = {
    'domain': {'kind': 'square', 'extent': [-1.0, 1.0, -1.0, 1.0], 'n': 16},
    'Q': 'x + y + 2',
    'c': 1.0,
    'g': 'exp(sin(pi*x)*sin(pi*y))',
    'alpha0': 2.0,
    'fine_refinements': 2,
    'descent': {'mu': 1.0, 'step': 'armijo', 't': 100.0, 'step_growth': 2.0, 'k_max': 300,
        'bounds': [0.05, 10.0]},
}

_SMOOTH = {
    'domain': {'kind': 'disk', 'center': [0.0, 0.0], 'radius': 1.0, 'n': 8},
    'alpha_star': '1 + 0.5*x*y',
    'Q': '1',
    'c': 1.0,
    'g': '1',
    'alpha0': 1.0,
    'partition': None,
    'fine_refinements': 2,
    'descent': {'mu': 1.0, 'step': 'armijo', 't': 10.0, 'step_growth': 2.0, 'k_max': 200,
        'bounds': [0.05, 10.0]},
}

_RADIUS_TWO = {'domain': {'radius': 2.0, 'n': 10}}


def recursive_update(d: dict, u: dict) -> dict:
    """
    Recursively updates a dictionary.

    Args:
        d (dict): Dictionary 1
        u (dict): Dictionary 2

    Returns:
        dict: Updated dictionary
    """
    for k, v in u.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k] = recursive_update(d[k], v)
        else:
            d[k] = copy.deepcopy(v)
    return d


def _preset(base: dict, *updates: dict) -> dict:
    preset = copy.deepcopy(base)
    for update in updates:
        recursive_update(preset, update)
    return preset


PRESETS: Dict[str, dict] = {
    'smooth-disk': _preset(_SMOOTH),
    'smooth-disk-oscillatory-input': _preset(_SMOOTH, {'g': 'sin(pi*x)*sin(pi*y)'}),
    'smooth-disk-mixed-input': _preset(_SMOOTH, {'g': '2 + sin(pi*x)*sin(pi*y)'}),
    'mildly-oscillatory': _preset(_SMOOTH, _RADIUS_TWO, {
        'alpha_star': '1 + 0.25*sin(pi*x)*sin(pi*y)',
        'g': 'sin(pi*x)*sin(pi*y)',
    }),
    'mildly-oscillatory-caption': _preset(_SMOOTH, _RADIUS_TWO, {
        'alpha_star': '1 + 0.25*x*y*sin(pi*x)*sin(pi*y)',
        'g': 'sin(pi*x)*sin(pi*y)',
    }),
    'h1-weight-pringle': _preset(_SMOOTH, _RADIUS_TWO, {
        'descent': {'mu': 0.1, 'rho': 0.001},
    }),
    'h1-weight-oscillating': _preset(_SMOOTH, _RADIUS_TWO, {
        'alpha_star': '1 + sin(pi*x/8)*sin(pi*y/8)',
        'g': 'sin(pi*x)*sin(pi*y)',
        'descent': {'mu': 0.1, 'rho': 0.001},
    }),
    'two-subregions': _preset(_PIECEWISE, {
        'alpha_star': [0.75, 0.5],
        'partition': {'kind': 'half-plane', 'sample_points': [[-0.95, 0.0], [0.95, 0.0]]},
    }),
    'three-subregions': _preset(_PIECEWISE, {
        'alpha_star': [0.75, 1.5, 0.5],
        'partition': {'kind': 'disk-plus-halves', 'radius': 0.5,
            'sample_points': [[-0.95, 0.0], [0.0, 0.0], [0.95, 0.0]]},
    }),
    'four-quadrants': _preset(_PIECEWISE, {
        'alpha_star': [0.25, 0.5, 0.75, 1.0],
        'partition': {'kind': 'quadrants', 'xi': 0.9},
    }),
}

_SCENARIO_KEYS = {'domain', 'alpha_star', 'Q', 'c', 'g', 'alpha0', 'partition',
    'fine_refinements', 'coercivity_floor', 'descent'}
_DOMAIN_KEYS = {'square': {'kind', 'extent', 'n'}, 'disk': {'kind', 'center', 'radius', 'n'}}
_PARTITION_KEYS = {'kind', 'sample_points', 'axis', 'threshold', 'radius', 'center', 'xi'}
CONFIG_KEYS = {'scenario', 'overrides', 'methods', 'noise_levels', 'seeds', 'descent',
    'output_dir', 'log_level'}


def field_function(expr: Union[str, float]) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """
    Compiles an expression in x and y into a vectorized function. Only
    numpy's elementary functions and pi are visible to the expression.

    Raises:
        ConfigurationError: If the expression does not compile
    """
    if not isinstance(expr, str):
        value = float(expr)
        return lambda x, y: np.full(np.shape(x), value)
    try:
        code = compile(expr, '<field>', 'eval')
    except SyntaxError as err:
        raise ConfigurationError(f'Field expression {expr!r} is not valid: {err.msg}') from err
    unknown = set(code.co_names) - set(_EXPRESSION_NAMES) - {'x', 'y'}
    if unknown:
        raise ConfigurationError(f'Field expression {expr!r} uses unknown names', unknown)

    def fn(x, y):
        namespace = dict(_EXPRESSION_NAMES, x=x, y=y)
        return np.asarray(eval(code, {'__builtins__': {}}, namespace), dtype=float) \
            * np.ones(np.shape(x))
    return fn


def partition_from_dict(values: Optional[dict]) -> Optional[PartitionSpec]:
    if values is None:
        return None
    values = dict(values)
    if values.get('kind') == 'quadrants' and 'sample_points' not in values:
        xi = float(values.pop('xi', 0.9))
        cx, cy = values.get('center', (0.0, 0.0))
        values['sample_points'] = [[cx + xi, cy + xi], [cx - xi, cy + xi],
            [cx - xi, cy - xi], [cx + xi, cy - xi]]
    values.pop('xi', None)
    if 'center' in values:
        values['center'] = tuple(values['center'])
    return PartitionSpec(**values)


@dataclass
class ScenarioSetup:
    """Everything a run needs that does not depend on method, noise or seed."""
    mesh: TriMesh
    fine_mesh: TriMesh
    data: ScalarData
    alpha0: np.ndarray
    alpha_star: np.ndarray
    exact_regions: Optional[List[float]]
    partition: Optional[PartitionSpec]
    cauchy: CauchyData


@dataclass
class Scenario:
    """
    A resolved preset.

    Args:
        name (str): Preset name
        domain (dict): 'square' with extent and n cells per side, or
            'disk' with center, radius and n rings
        alpha_star (Union[str, List[float]]): Expression or region values
        Q (str): Source expression
        c (float): Reaction
        g (str): Neumann input expression
        alpha0 (float): Constant initial guess
        partition (dict): PartitionSpec keywords, quadrants may give xi
        fine_refinements (int): Uniform refinements of the data mesh
        coercivity_floor (float): When set, c and the boundary advection
            are checked against this lower bound before any solve
        descent (dict): Default DescentConfig values
    """
    name: str
    domain: dict
    alpha_star: Union[str, List[float]]
    Q: Union[str, float] = 1.0
    c: float = 1.0
    g: Union[str, float] = 1.0
    alpha0: float = 1.0
    partition: Optional[dict] = None
    fine_refinements: int = 2
    coercivity_floor: Optional[float] = None
    descent: dict = field(default_factory=dict)

    @classmethod
    def from_preset(cls, name: str, overrides: Optional[dict] = None) -> 'Scenario':
        if name not in PRESETS:
            raise ConfigurationError('Unknown scenario preset', [name])
        values = copy.deepcopy(PRESETS[name])
        if overrides:
            recursive_update(values, overrides)
        unknown = _unknown_scenario_keys(values)
        if unknown:
            raise ConfigurationError('Unknown scenario keys', unknown)
        return cls(name=name, **values)

    @property
    def partition_spec(self) -> Optional[PartitionSpec]:
        return partition_from_dict(self.partition)

    def build_mesh(self, refinements: int = 0) -> TriMesh:
        """Inversion mesh, refined uniformly and labelled with its regions."""
        domain = self.domain
        if domain['kind'] == 'square':
            mesh = build_square_mesh(*domain['extent'], int(domain['n']))
        elif domain['kind'] == 'disk':
            mesh = build_disk_mesh(tuple(domain['center']), float(domain['radius']),
                int(domain['n']))
        else:
            raise ConfigurationError(f'Domain kind {domain["kind"]!r} not recognized')
        for _ in range(refinements):
            mesh = refine_uniform(mesh)
        spec = self.partition_spec
        if spec is not None:
            mesh = assign_regions(mesh, spec)
        return mesh

    def _coefficient(self, mesh: TriMesh) -> np.ndarray:
        if isinstance(self.alpha_star, str):
            return coefficient_from_function(mesh, field_function(self.alpha_star))
        values = np.asarray(self.alpha_star, dtype=float)
        if values.shape[0] != mesh.n_regions:
            raise ConfigurationError(
                f'{values.shape[0]} alpha* values for {mesh.n_regions} regions')
        return values[mesh.regions]

    def setup(self) -> ScenarioSetup:
        """
        Builds both meshes, the scalar data and the clean Cauchy data of
        this scenario.
        """
        mesh = self.build_mesh()
        fine_mesh = self.build_mesh(self.fine_refinements)
        q = field_function(self.Q)
        data = ScalarData.from_functions(mesh, q, self.c)
        fine_data = ScalarData.from_functions(fine_mesh, q, self.c)
        if self.coercivity_floor is not None:
            data.check_assumptions(mesh, self.coercivity_floor)
            fine_data.check_assumptions(fine_mesh, self.coercivity_floor)
        cauchy = synthesize_cauchy_data(self._coefficient(fine_mesh), fine_data,
            field_function(self.g), fine_mesh, mesh)
        exact = None if isinstance(self.alpha_star, str) else [float(a) for a in self.alpha_star]
        logger.info('scenario %s: %d triangles (h=%.4f), data mesh %d triangles (h=%.4f)',
            self.name, mesh.n_triangles, mesh.max_edge_length(), fine_mesh.n_triangles,
            fine_mesh.max_edge_length())
        return ScenarioSetup(mesh, fine_mesh, data, np.full(mesh.n_triangles, float(self.alpha0)),
            self._coefficient(mesh), exact, self.partition_spec, cauchy)


def _unknown_scenario_keys(values: dict) -> List[str]:
    unknown = [k for k in values if k not in _SCENARIO_KEYS]
    domain = values.get('domain', {})
    allowed = _DOMAIN_KEYS.get(domain.get('kind'), set(domain))
    unknown += [f'domain.{k}' for k in domain if k not in allowed]
    partition = values.get('partition') or {}
    unknown += [f'partition.{k}' for k in partition if k not in _PARTITION_KEYS]
    descent_keys = {f.name for f in fields(DescentConfig)}
    unknown += [f'descent.{k}' for k in values.get('descent', {}) if k not in descent_keys]
    return unknown


@dataclass
class ExperimentConfig:
    """
    A sweep over methods, noise levels and seeds on one scenario.

    Args:
        scenario (Scenario): Resolved preset
        methods (List[str]): Subset of ccbm, kv, td, tn
        noise_levels (List[float]): delta values
        seeds (List[int]): Noise seeds
        descent (dict): DescentConfig values on top of the preset's
        output_dir (str): Artifact directory
        log_level (str): Logging level name
    """
    scenario: Scenario
    methods: List[str]
    noise_levels: List[float]
    seeds: List[int] = field(default_factory=lambda: [0])
    descent: dict = field(default_factory=dict)
    output_dir: str = 'results'
    log_level: str = 'info'

    @classmethod
    def from_dict(cls, values: dict) -> 'ExperimentConfig':
        """
        Validates a config dict.

        Raises:
            ConfigurationError: Listing every unknown key, on an empty
                method or noise list, or on an unknown preset or method
        """
        unknown = [k for k in values if k not in CONFIG_KEYS]
        descent_keys = {f.name for f in fields(DescentConfig)} - {'method', 'projection'}
        unknown += [f'descent.{k}' for k in values.get('descent', {}) if k not in descent_keys]
        if unknown:
            raise ConfigurationError('Unknown config keys', unknown)
        if 'scenario' not in values:
            raise ConfigurationError('Missing config keys', ['scenario'])
        methods = list(values.get('methods', METHODS))
        noise_levels = [float(d) for d in values.get('noise_levels', [0.0])]
        if not methods:
            raise ConfigurationError('Empty config lists', ['methods'])
        if not noise_levels:
            raise ConfigurationError('Empty config lists', ['noise_levels'])
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ConfigurationError('Unknown methods', bad)
        if any(d < 0 for d in noise_levels):
            raise ConfigurationError('Negative noise levels', ['noise_levels'])
        seeds = [int(s) for s in values.get('seeds', [0])]
        if not seeds:
            raise ConfigurationError('Empty config lists', ['seeds'])
        scenario = Scenario.from_preset(values['scenario'], values.get('overrides'))
        config = cls(scenario, methods, noise_levels, seeds, dict(values.get('descent', {})),
            values.get('output_dir', 'results'), values.get('log_level', 'info'))
        # fail early on invalid descent values
        config.descent_config(methods[0], seeds[0])
        return config

    @classmethod
    def from_file(cls, path: str) -> 'ExperimentConfig':
        with open(path, 'r', encoding='utf-8') as f:
            try:
                values = json.load(f)
            except json.JSONDecodeError as err:
                raise ConfigurationError(f'{path} is not valid JSON: {err}') from err
        return cls.from_dict(values)

    def descent_config(self, method: str, seed: int) -> DescentConfig:
        values = recursive_update(copy.deepcopy(self.scenario.descent), self.descent)
        values['method'] = method
        values['seed'] = seed
        spec = self.scenario.partition_spec
        if spec is not None:
            values['projection'] = spec.to_dict()
        return DescentConfig.from_dict(values)
