"""
Full-scale reconstruction scenarios. Deselected by default; run with

    pytest -m slow
"""

import numpy as np
import pytest

from recon.experiment import run_experiment
from recon.forward import add_noise
from recon.inversion import run_inversion
from recon.objectives import METHODS, error_metrics
from recon.scenarios import ExperimentConfig

pytestmark = pytest.mark.slow


def reconstruct(config, method, noise=0.0, seed=0):
    setup = config.scenario.setup()
    cauchy = add_noise(setup.cauchy, None, noise, seed)
    descent = config.descent_config(method, seed)
    run = run_inversion(setup.mesh, setup.data, cauchy, setup.alpha0, descent)
    metrics = error_metrics(run.alpha, setup.exact_regions, setup.mesh, setup.partition)
    return run, metrics


@pytest.mark.parametrize('method', METHODS)
def test_smooth_disk_armijo_histories_are_monotone(method):
    config = ExperimentConfig.from_dict({'scenario': 'smooth-disk', 'methods': [method],
        'noise_levels': [0.0], 'descent': {'k_max': 200, 'on_stall': 'continue'}})
    setup = config.scenario.setup()
    run = run_inversion(setup.mesh, setup.data, setup.cauchy, setup.alpha0,
        config.descent_config(method, 0))
    costs = [record.cost.total for record in run.history]
    assert len(costs) == 200
    assert all(b <= a for a, b in zip(costs, costs[1:]))


def test_two_subregions_recovered():
    config = ExperimentConfig.from_dict({'scenario': 'two-subregions', 'methods': ['ccbm'],
        'noise_levels': [0.0]})
    _, metrics = reconstruct(config, 'ccbm')
    assert metrics.per_region_abs_errors[0] <= 0.02
    assert metrics.per_region_abs_errors[1] <= 0.02


@pytest.mark.parametrize('method, bound', [('ccbm', 0.25), ('kv', 0.15)])
def test_three_subregions_average_error(method, bound):
    config = ExperimentConfig.from_dict({'scenario': 'three-subregions', 'methods': [method],
        'noise_levels': [0.0]})
    _, metrics = reconstruct(config, method)
    assert metrics.avg_abs_error <= bound


def test_four_quadrants_noise_robustness():
    config = ExperimentConfig.from_dict({'scenario': 'four-quadrants', 'methods': ['ccbm', 'tn'],
        'noise_levels': [0.001, 0.005, 0.01], 'seeds': [0, 1, 2, 3, 4]})
    medians = {}
    for method in config.methods:
        for noise in config.noise_levels:
            errors = [reconstruct(config, method, noise, seed)[1].avg_rel_error
                for seed in config.seeds]
            medians[(method, noise)] = float(np.median(errors))
    assert medians[('ccbm', 0.001)] <= 0.35
    for noise in config.noise_levels:
        assert medians[('ccbm', noise)] <= medians[('tn', noise)]


def test_two_subregion_sweep_is_reproducible(tmp_path):
    values = {'scenario': 'two-subregions', 'methods': list(METHODS),
        'noise_levels': [0.0, 0.003, 0.005, 0.01]}
    first, second = tmp_path / 'first', tmp_path / 'second'
    run_experiment(ExperimentConfig.from_dict(values), str(first), jobs=4)
    run_experiment(ExperimentConfig.from_dict(values), str(second), jobs=2)
    csvs = sorted(p.name for p in first.glob('*.csv'))
    assert len([name for name in csvs if name.endswith('_history.csv')]) == 16
    for name in csvs:
        assert (first / name).read_bytes() == (second / name).read_bytes()
