import numpy as np
import pytest
import scipy.sparse as sp

from recon.errors import ConfigurationError, SolverError
from recon.fem_core import (ScalarData, SparseSystem, apply_dirichlet, assemble_boundary_load,
    assemble_convection, assemble_load, assemble_mass, assemble_operator, assemble_stiffness,
    boundary_mass, coefficient_from_regions, gradients, interpolate, norms, solve_neumann_mean_zero,
    solve_sparse, unit_mass)
from recon.forward import solve_dirichlet_state
from recon.mesh import TriMesh, assign_regions, build_square_mesh, half_plane_split


def test_stiffness_annihilates_constants(square_mesh, rng):
    alpha = 0.5 + rng.random(square_mesh.n_triangles)
    k = assemble_stiffness(square_mesh, alpha)
    assert np.allclose(k @ np.ones(square_mesh.n_nodes), 0.0, atol=1e-12)
    assert abs(k - k.T).max() < 1e-14


def test_stiffness_energy_of_linear_field(square_mesh):
    u = interpolate(square_mesh, lambda x, y: 2.0 * x - y)
    k = assemble_stiffness(square_mesh, 3.0)
    # 3 |grad u|^2 |Omega|
    assert u @ (k @ u) == pytest.approx(3.0 * 5.0 * 4.0)


def test_mass_and_boundary_mass_totals(disk_mesh):
    ones = np.ones(disk_mesh.n_nodes)
    assert ones @ (unit_mass(disk_mesh) @ ones) == pytest.approx(disk_mesh.area)
    assert ones @ (boundary_mass(disk_mesh) @ ones) == pytest.approx(disk_mesh.perimeter)


def test_nodal_reaction_matches_constant(square_mesh):
    constant = assemble_mass(square_mesh, 2.0)
    nodal = assemble_mass(square_mesh, np.full(square_mesh.n_nodes, 2.0))
    assert abs(constant - nodal).max() < 1e-14


def test_nodal_reaction_integrates_exactly(square_mesh):
    c = interpolate(square_mesh, lambda x, y: 1.0 + x)
    ones = np.ones(square_mesh.n_nodes)
    # int (1 + x) dx over the square
    assert ones @ (assemble_mass(square_mesh, c) @ ones) == pytest.approx(4.0)


def test_gradients_of_linear_field(disk_mesh):
    u = interpolate(disk_mesh, lambda x, y: 3.0 * x + 0.5 * y)
    assert np.allclose(gradients(disk_mesh, u), [3.0, 0.5])


def test_coefficient_from_regions(square_mesh):
    mesh = assign_regions(square_mesh, half_plane_split())
    alpha = coefficient_from_regions(mesh, [0.75, 0.5])
    assert set(alpha.tolist()) == {0.75, 0.5}
    with pytest.raises(ValueError):
        coefficient_from_regions(mesh, [1.0])


def test_constant_solution_is_exact(square_mesh):
    data = ScalarData.from_functions(square_mesh, 1.0, 1.0)
    u = solve_dirichlet_state(square_mesh, np.ones(square_mesh.n_triangles), data,
        np.ones(square_mesh.boundary_nodes.size))
    assert np.allclose(u, 1.0, atol=1e-10)


def test_linear_solution_is_exact(disk_mesh):
    exact = interpolate(disk_mesh, lambda x, y: x + 2.0 * y)
    data = ScalarData.from_functions(disk_mesh, lambda x, y: x + 2.0 * y, 1.0)
    # harmonic only for constant alpha
    alpha = np.full(disk_mesh.n_triangles, 0.7)
    u = solve_dirichlet_state(disk_mesh, alpha, data, exact[disk_mesh.boundary_nodes])
    assert np.allclose(u, exact, atol=1e-10)


def midpoint_l2_error(mesh, u, exact):
    """L2 error against a function, with the edge-midpoint rule on every triangle."""
    tri = mesh.triangles
    total = 0.0
    for i, j in ((0, 1), (1, 2), (2, 0)):
        mid = 0.5 * (mesh.nodes[tri[:, i]] + mesh.nodes[tri[:, j]])
        diff = 0.5 * (u[tri[:, i]] + u[tri[:, j]]) - exact(mid[:, 0], mid[:, 1])
        total += np.sum(mesh.areas / 3.0 * diff ** 2)
    return np.sqrt(total)


def test_smooth_solution_converges_at_second_order():
    # -lap u + u = u for the harmonic u = e^x sin y
    exact = lambda x, y: np.exp(x) * np.sin(y)
    errors = []
    for n in (4, 8, 16, 32):
        mesh = build_square_mesh(-1.0, 1.0, -1.0, 1.0, n)
        data = ScalarData.from_functions(mesh, exact, 1.0)
        f = interpolate(mesh, exact)[mesh.boundary_nodes]
        u = solve_dirichlet_state(mesh, np.ones(mesh.n_triangles), data, f)
        errors.append(midpoint_l2_error(mesh, u, exact))
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert errors[-1] < 1e-2
    assert np.all(rates >= 1.8)


def test_apply_dirichlet_expands(square_mesh):
    system = SparseSystem(assemble_operator(square_mesh, 1.0, ScalarData.from_functions(
        square_mesh, 0.0, 1.0)), np.zeros(square_mesh.n_nodes))
    nodes = square_mesh.boundary_nodes
    reduced = apply_dirichlet(system, nodes, np.full(nodes.size, 3.0))
    assert reduced.dimension == square_mesh.n_nodes - nodes.size
    u = solve_sparse(reduced)
    assert np.allclose(u[nodes], 3.0)
    with pytest.raises(ValueError):
        apply_dirichlet(reduced, nodes, np.zeros(nodes.size))


def test_solve_sparse_complex_system():
    a = sp.csr_matrix(np.array([[2.0 + 1.0j, 0.0], [1.0, 1.0j]]))
    b = np.array([1.0, 2.0 + 0.0j])
    x = solve_sparse(SparseSystem(a, b), 'complex')
    assert np.allclose(a @ x, b)
    with pytest.raises(ValueError):
        solve_sparse(SparseSystem(a, b), 'real')


def test_singular_system_raises_solver_error():
    a = sp.csr_matrix(np.zeros((2, 2)))
    with pytest.raises(SolverError):
        solve_sparse(SparseSystem(a, np.ones(2)))


def test_boundary_load_rejects_interior_nodes(square_mesh):
    interior = square_mesh.interior_nodes[:1]
    with pytest.raises(ValueError):
        assemble_boundary_load(square_mesh, np.ones(1), interior)


def test_load_of_constant_source(disk_mesh):
    assert assemble_load(disk_mesh, 2.0).sum() == pytest.approx(2.0 * disk_mesh.area)


def test_norms_of_constant(square_mesh):
    result = norms(np.ones(square_mesh.n_nodes), square_mesh)
    assert result['L2'] == pytest.approx(2.0)
    assert result['H1_seminorm'] == pytest.approx(0.0, abs=1e-7)
    assert result['boundary_L2'] == pytest.approx(np.sqrt(8.0))


def test_check_assumptions(square_mesh):
    data = ScalarData.from_functions(square_mesh, 1.0, 0.5)
    data.check_assumptions(square_mesh, 0.1)
    with pytest.raises(ConfigurationError):
        data.check_assumptions(square_mesh, 1.0)
    inflow = ScalarData.from_functions(square_mesh, 1.0, 1.0, b=(1.0, 0.0))
    with pytest.raises(ConfigurationError):
        inflow.check_assumptions(square_mesh, 0.1)


def test_convection_on_unit_triangle():
    mesh = TriMesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]],
        [[0, 1], [1, 2], [2, 0]], [0, 0, 0], [0])
    c = assemble_convection(mesh, np.array([1.0, 0.0])).toarray()
    assert np.allclose(c, np.tile([-1.0, 1.0, 0.0], (3, 1)) / 6.0, atol=1e-15)


def test_convection_of_linear_field(disk_mesh):
    # b . grad x = 1 for b = (1, 0)
    c = assemble_convection(disk_mesh, np.array([1.0, 0.0]))
    x = interpolate(disk_mesh, lambda x, y: x)
    ones = np.ones(disk_mesh.n_nodes)
    assert np.allclose(c @ x, unit_mass(disk_mesh) @ ones, atol=1e-13)


def test_random_spd_system_matches_dense_solve(rng):
    r = rng.standard_normal((50, 50))
    a = r @ r.T + 50.0 * np.eye(50)
    b = rng.standard_normal(50)
    x = solve_sparse(SparseSystem(sp.csr_matrix(a), b))
    assert np.linalg.norm(a @ x - b) <= 1e-10 * np.linalg.norm(b)
    assert np.allclose(x, np.linalg.solve(a, b), rtol=0.0, atol=1e-8)


def test_thin_strip_neumann_matches_quadratic():
    # -u'' = 1 on [-1, 1] with outward flux -1 at both ends: u = -x^2/2 + const
    mesh = build_square_mesh(-1.0, 1.0, 0.0, 0.05, 32)
    rhs = assemble_load(mesh, 1.0)
    x = mesh.nodes[:, 0]
    for i, j in mesh.boundary_edges:
        if abs(abs(x[i]) - 1.0) < 1e-12 and abs(abs(x[j]) - 1.0) < 1e-12:
            length = np.hypot(*(mesh.nodes[j] - mesh.nodes[i]))
            rhs[[i, j]] -= 0.5 * length
    assert abs(rhs.sum()) < 1e-12
    u = solve_neumann_mean_zero(SparseSystem(assemble_stiffness(mesh, 1.0), rhs), mesh)
    assert abs(np.ones(mesh.n_nodes) @ (boundary_mass(mesh) @ u)) < 1e-10
    origin = np.flatnonzero((np.abs(x) < 1e-12) & (mesh.nodes[:, 1] == 0.0))[0]
    assert np.allclose(u - u[origin], -0.5 * x ** 2, atol=1e-2)
