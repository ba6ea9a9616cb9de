import json

import numpy as np
import pandas as pd
import pytest

import recon_cli
from recon import experiment
from recon.errors import ConfigurationError
from recon.experiment import ExperimentRunner, run_experiment, run_name
from recon.mesh import mesh_io_read
from recon.report import ComparisonTable, read_field_csv, read_history_csv
from recon.scenarios import PRESETS, ExperimentConfig, Scenario, field_function, recursive_update

SMALL = {
    'scenario': 'two-subregions',
    'overrides': {'domain': {'n': 4}},
    'methods': ['ccbm', 'td'],
    'noise_levels': [0.0, 0.01],
    'seeds': [0],
    'descent': {'k_max': 3},
}


def small_config(**changes):
    values = json.loads(json.dumps(SMALL))
    values.update(changes)
    return ExperimentConfig.from_dict(values)


def test_recursive_update():
    d = {'a': {'b': 1, 'c': 2}, 'd': 3}
    recursive_update(d, {'a': {'b': 5}, 'e': [1]})
    assert d == {'a': {'b': 5, 'c': 2}, 'd': 3, 'e': [1]}


def test_presets_resolve():
    for name in PRESETS:
        scenario = Scenario.from_preset(name)
        assert scenario.descent['k_max'] > 0


def test_unknown_keys_are_all_listed():
    values = dict(SMALL, iterations=10, descent={'k_max': 3, 'stepsize': 1.0})
    with pytest.raises(ConfigurationError) as err:
        ExperimentConfig.from_dict(values)
    assert err.value.keys == ['descent.stepsize', 'iterations']


@pytest.mark.parametrize('changes', [
    {'methods': []},
    {'noise_levels': []},
    {'methods': ['ccbm', 'ls']},
    {'noise_levels': [-0.01]},
    {'scenario': 'five-subregions'},
    {'overrides': {'domain': {'cells': 4}}},
    {'descent': {'shrink': 2.0}},
])
def test_invalid_configs(changes):
    with pytest.raises(ConfigurationError):
        small_config(**changes)


def test_invalid_json(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"scenario": ')
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_file(str(path))


def test_descent_config_carries_projection():
    descent = small_config().descent_config('td', 4)
    assert descent.method == 'td'
    assert descent.seed == 4
    assert descent.k_max == 3
    assert descent.t == 100.0
    assert descent.projection.n_regions == 2


def test_field_function():
    fn = field_function('1 + 0.5*x*y')
    assert fn(np.array([1.0]), np.array([2.0])).tolist() == [2.0]
    assert field_function(2.5)(np.zeros(3), np.zeros(3)).tolist() == [2.5] * 3
    with pytest.raises(ConfigurationError):
        field_function('__import__("os").getcwd()')
    with pytest.raises(ConfigurationError):
        field_function('x +')


def test_scenario_setup():
    setup = small_config().scenario.setup()
    assert setup.mesh.n_regions == 2
    assert setup.exact_regions == [0.75, 0.5]
    assert setup.fine_mesh.n_triangles == 16 * setup.mesh.n_triangles
    assert np.all(setup.alpha0 == 2.0)
    assert np.array_equal(setup.cauchy.nodes, setup.mesh.boundary_nodes)


def test_presets_keep_alpha_positive():
    for name in PRESETS:
        config = ExperimentConfig.from_dict({'scenario': name, 'methods': ['kv'],
            'noise_levels': [0.0]})
        lower, upper = config.descent_config('kv', 0).bounds
        assert 0 < lower < upper


def test_coercivity_floor():
    overrides = {'domain': {'n': 4}, 'coercivity_floor': 2.0}
    with pytest.raises(ConfigurationError):
        small_config(overrides=overrides).scenario.setup()
    overrides['coercivity_floor'] = 0.5
    assert small_config(overrides=overrides).scenario.setup().mesh.n_triangles == 32


@pytest.fixture(scope='module')
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp('two_subregions')
    status = run_experiment(small_config(), str(out))
    return status, out


def test_small_experiment_writes_artifacts(small_run):
    status, out = small_run
    assert status == 0
    for method in ('ccbm', 'td'):
        for noise in (0.0, 0.01):
            base = out / run_name(method, noise, 0)
            for suffix in ('_measurement.csv', '_history.csv', '_alpha.csv', '_alpha.vtk'):
                assert (base.parent / (base.name + suffix)).exists()
            history = read_history_csv(f'{base}_history.csv')
            assert history['k'].tolist() == [0, 1, 2]
    assert (out / 'two-subregions_table.csv').exists()
    assert (out / 'alpha_star.vtk').exists()


def test_table_matches_field_files(small_run):
    _, out = small_run
    table = ComparisonTable.read_csv(str(out / 'two-subregions_table.csv'))
    assert table.methods == ['ccbm', 'td']
    assert table.exact == [0.75, 0.5]
    for method in ('ccbm', 'td'):
        field = read_field_csv(str(out / f'{run_name(method, 0.01, 0)}_alpha.csv'))
        for region in (0, 1):
            values = field.loc[field['region'] == region, 'alpha'].unique()
            assert len(values) == 1
            assert table.value(0.01, 0, region, method) == pytest.approx(values[0], rel=1e-12)


def test_noise_enters_measurements(small_run):
    _, out = small_run
    clean = pd.read_csv(out / f'{run_name("ccbm", 0.0, 0)}_measurement.csv')
    noisy = pd.read_csv(out / f'{run_name("ccbm", 0.01, 0)}_measurement.csv')
    assert np.array_equal(clean['g'], noisy['g'])
    assert not np.array_equal(clean['f'], noisy['f'])


def test_experiment_is_deterministic(small_run, tmp_path):
    _, out = small_run
    status = run_experiment(small_config(), str(tmp_path), jobs=2)
    assert status == 0
    for path in sorted(out.iterdir()):
        assert (tmp_path / path.name).read_bytes() == path.read_bytes()


def test_failing_run_is_isolated(tmp_path, monkeypatch):
    original = experiment.run_inversion

    def flaky(mesh, data, cauchy, alpha0, descent, alpha_star=None):
        if descent.method == 'td':
            raise RuntimeError('factorization blew up')
        return original(mesh, data, cauchy, alpha0, descent, alpha_star)

    monkeypatch.setattr(experiment, 'run_inversion', flaky)
    config = small_config(noise_levels=[0.0])
    runner = ExperimentRunner(config, str(tmp_path))
    results = runner.start()
    failures = {r.method: r.failure for r in results}
    assert failures['ccbm'] is None
    assert 'factorization blew up' in failures['td']
    assert (tmp_path / f'{run_name("ccbm", 0.0, 0)}_alpha.csv').exists()
    frame = pd.read_csv(tmp_path / 'two-subregions_table.csv', dtype={'region': str})
    assert frame['td_value'].isna().all()
    assert frame.loc[frame['region'] != 'avg', 'ccbm_value'].notna().all()
    assert run_experiment(config, str(tmp_path / 'again')) == 1


def test_cli_version(capsys):
    assert recon_cli.main(['version']) == 0
    assert capsys.readouterr().out.startswith('recon ')


def test_cli_mesh(tmp_path, capsys):
    path = tmp_path / 'mesh.txt'
    assert recon_cli.main(['mesh', '--preset', 'three-subregions', '--out', str(path)]) == 0
    mesh = mesh_io_read(str(path))
    assert mesh.n_triangles == 2 * 16 * 16
    assert mesh.n_regions == 3


def test_cli_run_reports_config_errors(tmp_path, capsys):
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps(dict(SMALL, methods=[])))
    assert recon_cli.main(['run', '--config', str(path)]) == 2
    assert 'methods' in capsys.readouterr().err


def test_cli_gradcheck(tmp_path, capsys):
    path = tmp_path / 'smooth.json'
    path.write_text(json.dumps({
        'scenario': 'smooth-disk',
        'overrides': {'domain': {'n': 3}},
        'methods': ['ccbm', 'tn'],
        'noise_levels': [0.0],
    }))
    assert recon_cli.main(['gradcheck', '--config', str(path)]) == 0
    out = capsys.readouterr().out
    assert 'ccbm: pass' in out and 'tn: pass' in out
