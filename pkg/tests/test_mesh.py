import numpy as np
import pytest

from recon.errors import ConfigurationError, MeshError, MeshFormatError
from recon.mesh import (SIDE_LABELS, TriMesh, assign_regions, build_disk_mesh, build_square_mesh,
    circle_polygon_area, disk_plus_halves, half_plane_split, mesh_io_read, mesh_io_write,
    quadrants, refine_uniform, unique_edges, whole_domain)


def test_square_mesh_counts(square_mesh):
    assert square_mesh.n_nodes == 25
    assert square_mesh.n_triangles == 32
    assert len(square_mesh.boundary_edges) == 16
    assert square_mesh.area == pytest.approx(4.0)
    assert square_mesh.perimeter == pytest.approx(8.0)
    square_mesh.validate()


def test_square_mesh_labels(square_mesh):
    labels, counts = np.unique(square_mesh.boundary_labels, return_counts=True)
    assert labels.tolist() == sorted(SIDE_LABELS.values())
    assert counts.tolist() == [4, 4, 4, 4]
    bottom = square_mesh.boundary_edges[square_mesh.boundary_labels == SIDE_LABELS['bottom']]
    assert np.allclose(square_mesh.nodes[bottom.ravel(), 1], -1.0)


def test_square_mesh_rejects_bad_arguments():
    with pytest.raises(ValueError):
        build_square_mesh(1.0, -1.0, -1.0, 1.0, 4)
    with pytest.raises(ValueError):
        build_square_mesh(-1.0, 1.0, -1.0, 1.0, 0)


def test_disk_mesh_counts_and_area():
    mesh = build_disk_mesh((0.5, -0.5), 2.0, 3)
    assert mesh.n_nodes == 1 + 3 * 3 * 4
    assert mesh.n_triangles == 6 * 9
    assert mesh.area == pytest.approx(circle_polygon_area(18, 2.0), rel=1e-12)
    r = np.hypot(*(mesh.nodes[mesh.boundary_nodes] - (0.5, -0.5)).T)
    assert np.allclose(r, 2.0)
    mesh.validate()


def test_disk_mesh_rejects_bad_radius():
    with pytest.raises(ValueError):
        build_disk_mesh((0.0, 0.0), 0.0, 3)


def test_refine_square_preserves_area_and_parents(square_mesh):
    fine = refine_uniform(square_mesh)
    assert fine.n_triangles == 4 * square_mesh.n_triangles
    assert fine.area == pytest.approx(square_mesh.area)
    assert np.array_equal(fine.nodes[:square_mesh.n_nodes], square_mesh.nodes)
    assert len(fine.boundary_edges) == 2 * len(square_mesh.boundary_edges)
    fine.validate()


def test_refine_disk_projects_boundary(disk_mesh):
    fine = refine_uniform(refine_uniform(disk_mesh))
    r = np.hypot(*fine.nodes[fine.boundary_nodes].T)
    assert np.allclose(r, 1.0)
    assert fine.area > disk_mesh.area
    assert fine.area < np.pi
    fine.validate()


def test_unique_edges_euler(square_mesh):
    edges, inverse = unique_edges(square_mesh.triangles)
    # V - E + F = 1 for a disk-like triangulation
    assert square_mesh.n_nodes - len(edges) + square_mesh.n_triangles == 1
    assert inverse.shape == (square_mesh.n_triangles, 3)


def test_validate_catches_clockwise_triangle(square_mesh):
    triangles = square_mesh.triangles.copy()
    triangles[0] = triangles[0][[0, 2, 1]]
    mesh = TriMesh(square_mesh.nodes, triangles, square_mesh.boundary_edges,
        square_mesh.boundary_labels, square_mesh.regions)
    with pytest.raises(MeshError):
        mesh.validate()


def test_validate_catches_missing_boundary_edge(square_mesh):
    mesh = TriMesh(square_mesh.nodes, square_mesh.triangles, square_mesh.boundary_edges[1:],
        square_mesh.boundary_labels[1:], square_mesh.regions)
    with pytest.raises(MeshError):
        mesh.validate()


def test_locate(square_mesh):
    tri = square_mesh.locate((0.3, -0.6))
    assert tri >= 0
    corners = square_mesh.nodes[square_mesh.triangles[tri]]
    assert corners[:, 0].min() <= 0.3 <= corners[:, 0].max()
    assert square_mesh.locate((1.5, 0.0)) == -1


def test_partition_region_ids():
    spec = quadrants(0.9)
    points = np.array([[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]])
    assert spec.region_of(points).tolist() == [0, 1, 2, 3]
    halves = disk_plus_halves(0.5)
    assert halves.region_of(np.array([[-0.9, 0.1], [0.1, 0.1], [0.9, -0.1]])).tolist() == [0, 1, 2]


def test_partition_rejects_misplaced_sample_point():
    with pytest.raises(ConfigurationError):
        half_plane_split(sample_points=((0.95, 0.0), (-0.95, 0.0)))


def test_assign_regions(square_mesh):
    mesh = assign_regions(square_mesh, half_plane_split())
    assert mesh.n_regions == 2
    left = mesh.centroids[:, 0] < 0
    assert np.all(mesh.regions[left] == 0)
    assert np.all(mesh.regions[~left] == 1)


def test_assign_regions_rejects_empty_region(square_mesh):
    with pytest.raises(ConfigurationError):
        assign_regions(square_mesh, disk_plus_halves(0.01))


def test_whole_domain(square_mesh):
    assert assign_regions(square_mesh, whole_domain()).n_regions == 1


def test_mesh_file_round_trip(tmp_path, square_mesh):
    mesh = assign_regions(square_mesh, quadrants(0.5))
    path = str(tmp_path / 'square.mesh')
    mesh_io_write(mesh, path)
    loaded = mesh_io_read(path)
    assert np.array_equal(loaded.nodes, mesh.nodes)
    assert np.array_equal(loaded.triangles, mesh.triangles)
    assert np.array_equal(loaded.regions, mesh.regions)
    assert np.array_equal(loaded.boundary_labels, mesh.boundary_labels)


def test_mesh_file_reports_line_number(tmp_path, square_mesh):
    path = tmp_path / 'broken.mesh'
    mesh_io_write(square_mesh, str(path))
    lines = path.read_text().splitlines()
    lines[3] = '0.0 not-a-number'
    path.write_text('\n'.join(lines) + '\n')
    with pytest.raises(MeshFormatError) as err:
        mesh_io_read(str(path))
    assert err.value.lineno == 4


def test_mesh_file_rejects_bad_header(tmp_path):
    path = tmp_path / 'empty.mesh'
    path.write_text('tri-mesh v2\n')
    with pytest.raises(MeshFormatError):
        mesh_io_read(str(path))


@pytest.mark.parametrize('radius, n_rings, rel', [(1.0, 32, 0.005), (2.0, 16, 0.02)])
def test_disk_mesh_area_approaches_circle(radius, n_rings, rel):
    mesh = build_disk_mesh((0.0, 0.0), radius, n_rings)
    assert mesh.area == pytest.approx(np.pi * radius ** 2, rel=rel)


def test_refinement_halves_edge_length(square_mesh):
    fine = refine_uniform(square_mesh)
    assert fine.max_edge_length() == pytest.approx(0.5 * square_mesh.max_edge_length())
    assert square_mesh.max_edge_length() == pytest.approx(np.hypot(0.5, 0.5))


def test_assign_regions_is_idempotent(square_mesh):
    spec = disk_plus_halves(0.5)
    once = assign_regions(square_mesh, spec)
    assert np.array_equal(assign_regions(once, spec).regions, once.regions)


def test_disk_plus_halves_region_areas():
    h = 1.0 / 16.0
    mesh = assign_regions(build_square_mesh(-1.0, 1.0, -1.0, 1.0, 32), disk_plus_halves(0.5))
    areas = np.bincount(mesh.regions, weights=mesh.areas)
    disk = np.pi * 0.25
    assert np.allclose(areas, [(4.0 - disk) / 2.0, disk, (4.0 - disk) / 2.0], atol=2.0 * h)


def test_mesh_file_without_triangles(tmp_path):
    path = tmp_path / 'hollow.mesh'
    path.write_text('tri-mesh v1\nnodes 3\n0 0\n1 0\n0 1\ntriangles 0\n'
        'boundary 3\n0 1 0\n1 2 0\n2 0 0\n')
    with pytest.raises(MeshError):
        mesh_io_read(str(path))
