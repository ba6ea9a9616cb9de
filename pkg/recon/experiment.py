"""
Runs an ExperimentConfig: one inversion per (method, noise, seed), each
writing its own artifacts, then the comparison table once every run has
finished. A failing run is recorded and does not stop the others.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple
import itertools
import logging
import os

from recon.forward import add_noise
from recon.inversion import run_inversion
from recon.mesh import whole_domain
from recon.objectives import region_means
from recon.report import (RunResult, build_comparison_table, emit_field_vtk, write_field_csv,
    write_history_csv, write_measurement_csv)
from recon.scenarios import ExperimentConfig, ScenarioSetup

logger = logging.getLogger(__name__)


def run_name(method: str, noise: float, seed: int) -> str:
    return f'{method}_delta{noise!r}_seed{seed}'


class ExperimentRunner:
    """
    Handles all the runs of one experiment. The scenario is set up once
    (meshes, scalar data and clean Cauchy data) and shared read-only by
    the runs; every run owns its output files.
    """
    def __init__(self, config: ExperimentConfig, output_dir: Optional[str] = None, jobs: int = 1):
        if jobs < 1:
            raise ValueError(f'Job count {jobs} must be positive')
        self.config = config
        self.output_dir = output_dir or config.output_dir
        self.jobs = jobs
        self.setup: ScenarioSetup = None
        self.results: List[RunResult] = []

    @property
    def grid(self) -> List[Tuple[str, float, int]]:
        return list(itertools.product(self.config.methods, self.config.noise_levels,
            self.config.seeds))

    def run_one(self, method: str, noise: float, seed: int) -> RunResult:
        """
        Runs one inversion and writes its history, measurement, field and
        VTK files. Any exception is logged and stored on the result.
        """
        setup = self.setup
        name = run_name(method, noise, seed)
        base = os.path.join(self.output_dir, name)
        result = RunResult(method, noise, seed, setup.mesh, None, setup.partition)
        try:
            cauchy = add_noise(setup.cauchy, None, noise, seed)
            write_measurement_csv(setup.mesh, cauchy, f'{base}_measurement.csv')
            descent = self.config.descent_config(method, seed)
            alpha_star = setup.exact_regions if setup.exact_regions is not None \
                else setup.alpha_star
            run = run_inversion(setup.mesh, setup.data, cauchy, setup.alpha0, descent, alpha_star)
            write_history_csv(run, f'{base}_history.csv')
            write_field_csv(setup.mesh, run.alpha, f'{base}_alpha.csv')
            emit_field_vtk(setup.mesh, run.alpha, f'{base}_alpha.vtk', name='alpha')
            result.alpha = run.alpha
            if run.failed:
                result.failure = run.failure
        except Exception as err: # pylint: disable=broad-except
            logger.exception('run %s failed', name)
            result.failure = f'{type(err).__name__}: {err}'
        if result.failure is None:
            logger.info('run %s done', name)
        return result

    def write_table(self):
        setup = self.setup
        if setup.exact_regions is not None:
            exact = setup.exact_regions
        else:
            exact = region_means(setup.mesh, setup.alpha_star).tolist()
        table = build_comparison_table(self.results, exact, self.config.methods)
        path = os.path.join(self.output_dir, f'{self.config.scenario.name}_table.csv')
        table.write_csv(path)
        logger.info('comparison table written to %s', path)
        return table

    def start(self) -> List[RunResult]:
        """
        Sets up the scenario, runs the grid on self.jobs worker threads
        and writes the table after all runs have joined.
        """
        os.makedirs(self.output_dir, exist_ok=True)
        self.setup = self.config.scenario.setup()
        if self.setup.partition is None:
            self.setup.partition = whole_domain(tuple(self.setup.mesh.centroids[0]))
        grid = self.grid
        logger.info('running %d inversions on %d worker(s)', len(grid), self.jobs)
        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            self.results = list(pool.map(lambda args: self.run_one(*args), grid))
        self.write_table()
        emit_field_vtk(self.setup.mesh, self.setup.alpha_star,
            os.path.join(self.output_dir, 'alpha_star.vtk'), name='alpha_star')
        return self.results


def run_experiment(config: ExperimentConfig, output_dir: Optional[str] = None,
    jobs: int = 1) -> int:
    """
    Runs every (method, noise, seed) of a config.

    Returns:
        int: 0 if all runs succeeded, 1 otherwise
    """
    runner = ExperimentRunner(config, output_dir, jobs)
    results = runner.start()
    failed = [run_name(r.method, r.noise, r.seed) for r in results if r.failure is not None]
    for name in failed:
        logger.warning('failed run: %s', name)
    return 1 if failed else 0
