import numpy as np
import pytest

from recon.fem_core import ScalarData, coefficient_from_function
from recon.forward import synthesize_cauchy_data
from recon.mesh import build_disk_mesh, build_square_mesh, refine_uniform


def pringle(x, y):
    return 1.0 + 0.5 * x * y


@pytest.fixture
def square_mesh():
    return build_square_mesh(-1.0, 1.0, -1.0, 1.0, 4)


@pytest.fixture
def disk_mesh():
    return build_disk_mesh((0.0, 0.0), 1.0, 4)


@pytest.fixture
def smooth_problem(disk_mesh):
    """
    Unit-disk problem with alpha* = 1 + 0.5xy, Q = c = g = 1 and Cauchy
    data computed on the inversion mesh itself, so alpha* is an exact
    zero of every misfit.
    """
    mesh = disk_mesh
    data = ScalarData.from_functions(mesh, 1.0, 1.0)
    alpha_star = coefficient_from_function(mesh, pringle)
    cauchy = synthesize_cauchy_data(alpha_star, data, 1.0, mesh, mesh, allow_inverse_crime=True)
    return mesh, data, alpha_star, cauchy


@pytest.fixture
def synthetic_problem():
    """Coarse unit-disk problem with data from two refinement levels up."""
    mesh = build_disk_mesh((0.0, 0.0), 1.0, 3)
    fine = refine_uniform(refine_uniform(mesh))
    data = ScalarData.from_functions(mesh, 1.0, 1.0)
    fine_data = ScalarData.from_functions(fine, 1.0, 1.0)
    cauchy = synthesize_cauchy_data(coefficient_from_function(fine, pringle), fine_data, 1.0,
        fine, mesh)
    return mesh, data, cauchy


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))
