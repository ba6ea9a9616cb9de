"""
Writers for run artifacts: iteration histories, measurements, final
coefficient dumps, legacy VTK fields and the method comparison table.
CSV payloads carry no timestamps so identical runs give identical files.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import logging
import os

import numpy as np
import pandas as pd

from recon.forward import CauchyData
from recon.inversion import InversionRun
from recon.mesh import PartitionSpec, TriMesh
from recon.objectives import region_means

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ['k', 'cost_total', 'cost_misfit', 'cost_reg', 'grad_norm', 'step', 'rho']
MEASUREMENT_COLUMNS = ['node_index', 'x', 'y', 'f', 'g']
FIELD_COLUMNS = ['triangle', 'x', 'y', 'region', 'alpha']

# VTK_TRIANGLE
_VTK_TRIANGLE = 5


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def history_frame(run: InversionRun) -> pd.DataFrame:
    """One row per IterationRecord; region and error columns when recorded."""
    rows = []
    for record in run.history:
        row = {
            'k': record.k,
            'cost_total': record.cost.total,
            'cost_misfit': record.cost.misfit,
            'cost_reg': record.cost.regularization,
            'grad_norm': record.grad_norm,
            'step': record.step,
            'rho': record.rho,
        }
        if record.region_values is not None:
            for i, value in enumerate(record.region_values):
                row[f'alpha_region_{i}'] = value
        if record.errors is not None:
            for i, value in enumerate(record.errors.per_region_abs_errors):
                row[f'err_region_{i}'] = value
            row['avg_err'] = record.errors.avg_abs_error
        rows.append(row)
    if not rows:
        return pd.DataFrame(columns=HISTORY_COLUMNS)
    return pd.DataFrame(rows)


def write_history_csv(run: InversionRun, path: str):
    """
    Writes the history CSV of a run. A failed or stalled run gets a
    trailing '#' marker line.
    """
    _ensure_parent(path)
    history_frame(run).to_csv(path, index=False)
    with open(path, 'a', encoding='utf-8') as f:
        if run.failed:
            f.write(f'# failed: {run.failure}\n')
        elif run.stalled:
            f.write('# stalled\n')


def read_history_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment='#', float_precision='round_trip')


def write_measurement_csv(mesh: TriMesh, cauchy: CauchyData, path: str):
    _ensure_parent(path)
    xy = mesh.nodes[cauchy.nodes]
    frame = pd.DataFrame({
        'node_index': cauchy.nodes,
        'x': xy[:, 0],
        'y': xy[:, 1],
        'f': cauchy.f,
        'g': cauchy.g,
    })
    frame.to_csv(path, index=False, columns=MEASUREMENT_COLUMNS)


def write_field_csv(mesh: TriMesh, alpha: np.ndarray, path: str):
    """Final P0 coefficient with triangle centroids and region ids."""
    _ensure_parent(path)
    c = mesh.centroids
    frame = pd.DataFrame({
        'triangle': np.arange(mesh.n_triangles),
        'x': c[:, 0],
        'y': c[:, 1],
        'region': mesh.regions,
        'alpha': alpha,
    })
    frame.to_csv(path, index=False, columns=FIELD_COLUMNS)


def read_field_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision='round_trip')


def emit_field_vtk(mesh: TriMesh, values: np.ndarray, path: str, name: str = 'field',
    location: Optional[str] = None):
    """
    Writes a legacy ASCII (v3.0) unstructured grid with one scalar field.

    Args:
        mesh (TriMesh): Mesh
        values (np.ndarray): P0 (one per triangle) or P1 (one per node) field
        path (str): Output file
        name (str): Scalar name
        location (str): 'cell' or 'point'; inferred from the size if None

    Raises:
        ValueError: If the size matches neither, or both without location
        OSError: If the path is not writable
    """
    values = np.asarray(values, dtype=float)
    if location is None:
        is_cell = values.shape[0] == mesh.n_triangles
        is_point = values.shape[0] == mesh.n_nodes
        if is_cell == is_point:
            raise ValueError(f'Cannot tell whether {values.shape[0]} values are P0 or P1')
        location = 'cell' if is_cell else 'point'
    expected = mesh.n_triangles if location == 'cell' else mesh.n_nodes
    if location not in ('cell', 'point') or values.shape != (expected,):
        raise ValueError(f'{values.shape[0]} values for {location} data of size {expected}')

    lines = ['# vtk DataFile Version 3.0', f'recon {name}', 'ASCII',
        'DATASET UNSTRUCTURED_GRID', f'POINTS {mesh.n_nodes} double']
    lines.extend(f'{x!r} {y!r} 0.0' for x, y in mesh.nodes.tolist())
    lines.append(f'CELLS {mesh.n_triangles} {4 * mesh.n_triangles}')
    lines.extend(f'3 {a} {b} {c}' for a, b, c in mesh.triangles.tolist())
    lines.append(f'CELL_TYPES {mesh.n_triangles}')
    lines.extend([str(_VTK_TRIANGLE)] * mesh.n_triangles)
    header = 'CELL_DATA' if location == 'cell' else 'POINT_DATA'
    lines.append(f'{header} {expected}')
    lines.append(f'SCALARS {name} double 1')
    lines.append('LOOKUP_TABLE default')
    lines.extend(repr(v) for v in values.tolist())

    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')


@dataclass
class RunResult:
    """
    Outcome of one (method, noise, seed) run of an experiment.

    Args:
        method (str): Inversion method
        noise (float): delta
        seed (int): Noise seed
        mesh (TriMesh): Inversion mesh with region ids
        alpha (np.ndarray): Final coefficient, None if the run crashed
        partition (PartitionSpec): Partition the regions came from
        failure (str): Failure diagnostic, if any
    """
    method: str
    noise: float
    seed: int
    mesh: TriMesh
    alpha: Optional[np.ndarray]
    partition: Optional[PartitionSpec] = None
    failure: Optional[str] = None

    @property
    def region_values(self) -> np.ndarray:
        if self.alpha is None:
            return np.full(self.mesh.n_regions, np.nan)
        return region_means(self.mesh, self.alpha)


@dataclass
class ComparisonTable:
    """
    Reconstructed region values per (noise, seed, region) row and method
    column, with absolute and relative errors against exact values.

    Args:
        methods (List[str]): Column order
        exact (List[float]): Exact value of every region
        values (Dict[Tuple[float, int, int, str], float]): Keyed by
            (noise, seed, region, method)
    """
    methods: List[str]
    exact: List[float]
    values: Dict[Tuple[float, int, int, str], float] = field(default_factory=dict)
    stored_errors: Dict[Tuple[float, int, int, str], Tuple[float, float]] = \
        field(default_factory=dict)

    @property
    def n_regions(self) -> int:
        return len(self.exact)

    @property
    def runs(self) -> List[Tuple[float, int]]:
        return sorted({(noise, seed) for noise, seed, _, _ in self.values})

    def value(self, noise: float, seed: int, region: int, method: str) -> float:
        return self.values[(noise, seed, region, method)]

    def abs_error(self, noise: float, seed: int, region: int, method: str) -> float:
        return abs(self.value(noise, seed, region, method) - self.exact[region])

    def rel_error(self, noise: float, seed: int, region: int, method: str) -> float:
        return self.abs_error(noise, seed, region, method) / abs(self.exact[region])

    def average(self, noise: float, seed: int, method: str, relative: bool = False) -> float:
        error = self.rel_error if relative else self.abs_error
        return float(np.mean([error(noise, seed, r, method) for r in range(self.n_regions)]))

    def median_average(self, noise: float, method: str, relative: bool = False) -> float:
        """Median over seeds of the average region error."""
        seeds = [seed for n, seed in self.runs if n == noise]
        return float(np.median([self.average(noise, s, method, relative) for s in seeds]))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for noise, seed in self.runs:
            for region in range(self.n_regions):
                row = {'noise': noise, 'seed': seed, 'region': str(region),
                    'exact': self.exact[region]}
                for method in self.methods:
                    row[f'{method}_value'] = self.value(noise, seed, region, method)
                    row[f'{method}_abs_error'] = self.abs_error(noise, seed, region, method)
                    row[f'{method}_rel_error'] = self.rel_error(noise, seed, region, method)
                rows.append(row)
            row = {'noise': noise, 'seed': seed, 'region': 'avg', 'exact': np.nan}
            for method in self.methods:
                row[f'{method}_value'] = np.nan
                row[f'{method}_abs_error'] = self.average(noise, seed, method)
                row[f'{method}_rel_error'] = self.average(noise, seed, method, relative=True)
            rows.append(row)
        return pd.DataFrame(rows)

    def write_csv(self, path: str):
        _ensure_parent(path)
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def read_csv(cls, path: str) -> 'ComparisonTable':
        """Parses a table written by write_csv, keeping the stored errors."""
        frame = pd.read_csv(path, float_precision='round_trip', dtype={'region': str})
        methods = [c[:-len('_value')] for c in frame.columns if c.endswith('_value')]
        cells = frame[frame['region'] != 'avg']
        exact: Dict[int, float] = {}
        table = cls(methods, [])
        for row in cells.itertuples(index=False):
            row = row._asdict()
            region = int(row['region'])
            exact[region] = float(row['exact'])
            key = (float(row['noise']), int(row['seed']), region)
            for method in methods:
                table.values[key + (method,)] = float(row[f'{method}_value'])
                table.stored_errors[key + (method,)] = (
                    float(row[f'{method}_abs_error']), float(row[f'{method}_rel_error']))
        table.exact = [exact[r] for r in sorted(exact)]
        return table


def build_comparison_table(results: Iterable[RunResult], alpha_star: Sequence[float],
    methods: Optional[Sequence[str]] = None) -> ComparisonTable:
    """
    Collects the final region values of every run into one table.

    Args:
        results (Iterable[RunResult]): Runs sharing one partition
        alpha_star (Sequence[float]): Exact value of every region
        methods (Sequence[str]): Column order, order of appearance if None

    Returns:
        ComparisonTable: Table; failed runs contribute NaN values

    Raises:
        ValueError: If the runs do not share one partition or the region
            count differs from alpha_star
    """
    results = list(results)
    partitions = {repr(r.partition.to_dict()) if r.partition else None for r in results}
    if len(partitions) > 1:
        raise ValueError('Runs of one table must share their partition')
    if methods is None:
        methods = list(dict.fromkeys(r.method for r in results))
    table = ComparisonTable(list(methods), [float(a) for a in alpha_star])
    for result in results:
        values = result.region_values
        if values.shape[0] != table.n_regions:
            raise ValueError(f'{values.shape[0]} region values for {table.n_regions} exact values')
        for region, value in enumerate(values.tolist()):
            table.values[(float(result.noise), int(result.seed), region, result.method)] = value
    return table
