"""
Generation, refinement, labeling and plain-text serialization of 2D
conforming triangular meshes. Three domain shapes are supported: axis
aligned rectangles, disks built from concentric rings, and any mesh
obtained from those by uniform red refinement. Triangles carry a small
integer subregion id that the piecewise-constant inversions use.
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from recon.errors import ConfigurationError, MeshError, MeshFormatError

logger = logging.getLogger(__name__)

Point = Tuple[float, float]

# local edge k of a triangle joins local vertices _LOCAL_EDGES[k]
_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))

SIDE_LABELS = {'bottom': 0, 'right': 1, 'top': 2, 'left': 3}


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Immutable triangulation with boundary-edge labels and per-triangle
    subregion ids. Geometric quantities derived from the arrays are
    computed once and cached on the instance.

    Args:
        nodes (np.ndarray): (N, 2) node coordinates
        triangles (np.ndarray): (T, 3) counter-clockwise node indices
        boundary_edges (np.ndarray): (B, 2) node pairs, oriented along the
            boundary with the domain on the left
        boundary_labels (np.ndarray): (B,) integer label of each edge
        regions (np.ndarray): (T,) subregion id of each triangle
        circle (Tuple[float, float, float]): (cx, cy, r) of the exact
            boundary for disk meshes, None for polygonal domains
    """
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_labels: np.ndarray
    regions: np.ndarray
    circle: Optional[Tuple[float, float, float]] = field(default=None)

    def __post_init__(self):
        arrays = {
            'nodes': np.array(self.nodes, dtype=float).reshape(-1, 2),
            'triangles': np.array(self.triangles, dtype=np.int64).reshape(-1, 3),
            'boundary_edges': np.array(self.boundary_edges, dtype=np.int64).reshape(-1, 2),
            'boundary_labels': np.array(self.boundary_labels, dtype=np.int64).reshape(-1),
            'regions': np.array(self.regions, dtype=np.int64).reshape(-1),
        }
        for name, value in arrays.items():
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1])

    @cached_property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """
        Gradients of the three P1 hat functions on every triangle. They
        are constant per triangle.

        Returns:
            np.ndarray: (T, 3, 2) array, [t, i] is the gradient of the
                hat function of local vertex i on triangle t
        """
        p = self.nodes[self.triangles]
        x, y = p[:, :, 0], p[:, :, 1]
        two_area = 2.0 * self.signed_areas
        grads = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = (y[:, j] - y[:, k]) / two_area
            grads[:, i, 1] = (x[:, k] - x[:, j]) / two_area
        return grads

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Sorted indices of all nodes touched by a boundary edge."""
        return np.unique(self.boundary_edges)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def boundary_edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @property
    def perimeter(self) -> float:
        return float(self.boundary_edge_lengths.sum())

    @property
    def n_regions(self) -> int:
        return int(self.regions.max()) + 1 if self.n_triangles else 0

    def with_regions(self, regions: Sequence[int]) -> 'TriMesh':
        """Returns a copy of the mesh with new subregion ids."""
        return replace(self, regions=np.asarray(regions))

    def max_edge_length(self) -> float:
        edges, _ = unique_edges(self.triangles)
        d = self.nodes[edges[:, 1]] - self.nodes[edges[:, 0]]
        return float(np.hypot(d[:, 0], d[:, 1]).max())

    def locate(self, point: Point, tol: float = 1e-12) -> int:
        """
        Finds the triangle containing a point using barycentric
        coordinates. Points on a shared edge go to the lowest index.

        Args:
            point (Point): Query point
            tol (float): Slack on the barycentric coordinates

        Returns:
            int: Triangle index, or -1 if the point is outside the mesh
        """
        q = np.asarray(point, dtype=float)
        p = self.nodes[self.triangles]
        grads = self.basis_gradients
        # lambda_i(q) = lambda_i(v0) + grad_i . (q - v0)
        offset = q - p[:, 0]
        lam = np.einsum('tij,tj->ti', grads, offset)
        lam[:, 0] += 1.0
        inside = np.all(lam >= -tol, axis=1)
        hits = np.flatnonzero(inside)
        if hits.size == 0:
            return -1
        return int(hits[0])

    def validate(self):
        """
        Checks orientation, index ranges, the edge-manifold property and
        closure of the boundary loops.

        Raises:
            MeshError: On the first violated invariant
        """
        n, t = self.n_nodes, self.n_triangles
        if t == 0:
            raise MeshError('mesh has no triangles')
        if self.triangles.min() < 0 or self.triangles.max() >= n:
            raise MeshError('triangle references a node out of range')
        if self.boundary_edges.size and (self.boundary_edges.min() < 0 or self.boundary_edges.max() >= n):
            raise MeshError('boundary edge references a node out of range')
        tri = np.sort(self.triangles, axis=1)
        if np.any(tri[:, 0] == tri[:, 1]) or np.any(tri[:, 1] == tri[:, 2]):
            raise MeshError('triangle with duplicate nodes')
        if self.regions.shape[0] != t:
            raise MeshError(f'{self.regions.shape[0]} region ids for {t} triangles')
        if self.boundary_labels.shape[0] != self.boundary_edges.shape[0]:
            raise MeshError('one label per boundary edge required')
        bad = np.flatnonzero(self.signed_areas <= 0.0)
        if bad.size:
            raise MeshError(f'{bad.size} triangles with non-positive signed area, first {bad[0]}')

        edges, counts = _edge_counts(self.triangles)
        if np.any(counts > 2):
            raise MeshError('edge shared by more than two triangles')
        free = {tuple(e) for e in edges[counts == 1].tolist()}
        declared = {tuple(sorted(e)) for e in self.boundary_edges.tolist()}
        if free != declared:
            raise MeshError(
                f'boundary edges do not match free triangle edges '
                f'({len(declared - free)} extra, {len(free - declared)} missing)')

        degree = np.bincount(self.boundary_edges.ravel(), minlength=n)
        if np.any(degree[self.boundary_nodes] != 2):
            raise MeshError('boundary edges do not form closed loops')


def unique_edges(triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lists the distinct edges of a triangulation.

    Args:
        triangles (np.ndarray): (T, 3) node indices

    Returns:
        Tuple[np.ndarray, np.ndarray]: (E, 2) sorted node pairs and the
            (T, 3) edge id of each local edge (see _LOCAL_EDGES)
    """
    local = np.concatenate([triangles[:, [a, b]] for a, b in _LOCAL_EDGES], axis=0)
    local = np.sort(local, axis=1)
    edges, inverse = np.unique(local, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(3, -1).T
    return edges, inverse


def _edge_counts(triangles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    edges, inverse = unique_edges(triangles)
    counts = np.bincount(inverse.ravel(), minlength=edges.shape[0])
    return edges, counts


def _orient_ccw(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    flip = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1] < 0
    triangles = triangles.copy()
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    return triangles


def build_square_mesh(xmin: float, xmax: float, ymin: float, ymax: float,
    n_cells_per_side: int) -> TriMesh:
    """
    Builds a structured mesh of a rectangle. Every cell is split into two
    triangles along its lower-left to upper-right diagonal.

    Args:
        xmin (float): Left side
        xmax (float): Right side
        ymin (float): Bottom side
        ymax (float): Top side
        n_cells_per_side (int): Number of cells along each side

    Returns:
        TriMesh: Mesh with n^2 cells, boundary edges labeled by side
            (see SIDE_LABELS) and every triangle in region 0
    """
    if not xmax > xmin or not ymax > ymin:
        raise ValueError(f'Invalid extents x=[{xmin}, {xmax}], y=[{ymin}, {ymax}]')
    n = int(n_cells_per_side)
    if n < 1 or n != n_cells_per_side:
        raise ValueError(f'Cell count {n_cells_per_side} not recognized')

    xs = np.linspace(xmin, xmax, n + 1)
    ys = np.linspace(ymin, ymax, n + 1)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    def idx(i, j):
        return j * (n + 1) + i

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00, v10 = idx(i, j), idx(i + 1, j)
    v01, v11 = idx(i, j + 1), idx(i + 1, j + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    k = np.arange(n)
    sides = [
        (np.column_stack([idx(k, 0), idx(k + 1, 0)]), SIDE_LABELS['bottom']),
        (np.column_stack([idx(n, k), idx(n, k + 1)]), SIDE_LABELS['right']),
        (np.column_stack([idx(k + 1, n), idx(k, n)]), SIDE_LABELS['top']),
        (np.column_stack([idx(0, k + 1), idx(0, k)]), SIDE_LABELS['left']),
    ]
    boundary = np.concatenate([s for s, _ in sides])
    labels = np.concatenate([np.full(n, label) for _, label in sides])

    mesh = TriMesh(nodes, triangles, boundary, labels, np.zeros(len(triangles)))
    logger.debug('square mesh: %d nodes, %d triangles', mesh.n_nodes, mesh.n_triangles)
    return mesh


def build_disk_mesh(center: Point, radius: float, n_rings: int) -> TriMesh:
    """
    Builds a disk mesh from concentric rings. Ring k (k = 1..n_rings)
    carries 6k equally spaced nodes at radius k/n_rings * radius, and the
    band between two rings is triangulated by walking both rings in
    angular order.

    Args:
        center (Point): Disk center
        radius (float): Disk radius
        n_rings (int): Number of rings

    Returns:
        TriMesh: Mesh with 1 + 3n(n+1) nodes and 6n^2 triangles whose
            boundary nodes lie exactly on the circle
    """
    if not radius > 0:
        raise ValueError(f'Radius {radius} must be positive')
    n = int(n_rings)
    if n < 1 or n != n_rings:
        raise ValueError(f'Ring count {n_rings} not recognized')

    cx, cy = float(center[0]), float(center[1])
    coords: List[np.ndarray] = [np.array([[cx, cy]])]
    ring_start = [0]
    for k in range(1, n + 1):
        ring_start.append(sum(len(c) for c in coords))
        theta = 2.0 * np.pi * np.arange(6 * k) / (6 * k)
        r = radius * k / n
        coords.append(np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)]))
    nodes = np.concatenate(coords)

    triangles = []
    for j in range(6):
        triangles.append((0, 1 + j, 1 + (j + 1) % 6))
    for k in range(2, n + 1):
        inner = ring_start[k - 1]
        outer = ring_start[k]
        m, o = 6 * (k - 1), 6 * k
        i = j = 0
        while i < m or j < o:
            if j < o and (i == m or (j + 1) / o <= (i + 1) / m):
                triangles.append((inner + i % m, outer + j, outer + (j + 1) % o))
                j += 1
            else:
                triangles.append((inner + i % m, outer + j % o, inner + (i + 1) % m))
                i += 1
    triangles = _orient_ccw(nodes, np.array(triangles, dtype=np.int64))

    first = ring_start[n]
    count = 6 * n
    ring = first + np.arange(count)
    boundary = np.column_stack([ring, first + (np.arange(count) + 1) % count])

    mesh = TriMesh(nodes, triangles, boundary, np.zeros(count), np.zeros(len(triangles)),
        circle=(cx, cy, float(radius)))
    logger.debug('disk mesh: %d nodes, %d triangles', mesh.n_nodes, mesh.n_triangles)
    return mesh


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """
    Red refinement: every triangle is split into four children through
    its edge midpoints. Parent nodes keep their indices, so the coarse
    mesh nodes are the first n_nodes nodes of the refined mesh. Boundary
    midpoints of disk meshes are projected back onto the circle.

    Args:
        mesh (TriMesh): Mesh to refine

    Returns:
        TriMesh: Refined mesh with inherited region ids and labels
    """
    n = mesh.n_nodes
    edges, inverse = unique_edges(mesh.triangles)
    midpoints = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])

    a, b, c = mesh.triangles.T
    m01, m12, m20 = (n + inverse[:, 0], n + inverse[:, 1], n + inverse[:, 2])
    children = np.stack([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ], axis=1).reshape(-1, 3)

    keys = edges[:, 0] * n + edges[:, 1]
    bsorted = np.sort(mesh.boundary_edges, axis=1)
    edge_ids = np.searchsorted(keys, bsorted[:, 0] * n + bsorted[:, 1])
    mids = n + edge_ids
    i, j = mesh.boundary_edges.T
    boundary = np.stack([np.column_stack([i, mids]), np.column_stack([mids, j])],
        axis=1).reshape(-1, 2)
    labels = np.repeat(mesh.boundary_labels, 2)

    nodes = np.concatenate([mesh.nodes, midpoints])
    if mesh.circle is not None:
        cx, cy, r = mesh.circle
        d = nodes[mids] - (cx, cy)
        nodes[mids] = (cx, cy) + r * d / np.hypot(d[:, 0], d[:, 1])[:, None]

    return TriMesh(nodes, children, boundary, labels, np.repeat(mesh.regions, 4),
        circle=mesh.circle)


@dataclass(frozen=True)
class PartitionSpec:
    """
    Declares a partition of the domain into subregions and one sample
    point per subregion for the pick-a-point projection.

    kind is one of 'whole-domain', 'half-plane', 'quadrants' and
    'disk-plus-halves'. Region ids are:

    - half-plane: 0 where point[axis] < threshold, 1 elsewhere
    - quadrants: Q1, Q2, Q3, Q4 counter-clockwise from x >= 0, y >= 0
    - disk-plus-halves: left exterior, central disk, right exterior
    """
    kind: str
    sample_points: Tuple[Point, ...]
    axis: int = 0
    threshold: float = 0.0
    radius: float = 0.5
    center: Point = (0.0, 0.0)

    _COUNTS = {'whole-domain': 1, 'half-plane': 2, 'quadrants': 4, 'disk-plus-halves': 3}

    def __post_init__(self):
        if self.kind not in self._COUNTS:
            raise ConfigurationError(f'Partition kind {self.kind!r} not recognized')
        points = tuple((float(p[0]), float(p[1])) for p in self.sample_points)
        object.__setattr__(self, 'sample_points', points)
        if len(points) != self.n_regions:
            raise ConfigurationError(
                f'{self.kind} partition needs {self.n_regions} sample points, got {len(points)}')
        found = self.region_of(np.array(points))
        for i, region in enumerate(found):
            if region != i:
                raise ConfigurationError(
                    f'sample point {points[i]} lies in region {region}, not region {i}')

    @property
    def n_regions(self) -> int:
        return self._COUNTS[self.kind]

    def region_of(self, points: np.ndarray) -> np.ndarray:
        """
        Vectorized region membership test.

        Args:
            points (np.ndarray): (P, 2) query points

        Returns:
            np.ndarray: (P,) region ids
        """
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.kind == 'whole-domain':
            return np.zeros(len(p), dtype=np.int64)
        if self.kind == 'half-plane':
            return (p[:, self.axis] >= self.threshold).astype(np.int64)
        x = p[:, 0] - self.center[0]
        y = p[:, 1] - self.center[1]
        if self.kind == 'quadrants':
            right, top = x >= 0, y >= 0
            out = np.empty(len(p), dtype=np.int64)
            out[right & top] = 0
            out[~right & top] = 1
            out[~right & ~top] = 2
            out[right & ~top] = 3
            return out
        inside = x * x + y * y <= self.radius * self.radius
        return np.where(inside, 1, np.where(x < 0, 0, 2)).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'sample_points': [list(p) for p in self.sample_points],
            'axis': self.axis,
            'threshold': self.threshold,
            'radius': self.radius,
            'center': list(self.center),
        }


def whole_domain(sample_point: Point = (0.0, 0.0)) -> PartitionSpec:
    return PartitionSpec('whole-domain', (sample_point,))


def half_plane_split(axis: int = 0, threshold: float = 0.0,
    sample_points: Tuple[Point, Point] = ((-0.95, 0.0), (0.95, 0.0))) -> PartitionSpec:
    return PartitionSpec('half-plane', sample_points, axis=axis, threshold=threshold)


def quadrants(xi: float = 0.9, center: Point = (0.0, 0.0)) -> PartitionSpec:
    """Four quadrants sampled at (xi, xi), (-xi, xi), (-xi, -xi), (xi, -xi)."""
    cx, cy = center
    points = ((cx + xi, cy + xi), (cx - xi, cy + xi), (cx - xi, cy - xi), (cx + xi, cy - xi))
    return PartitionSpec('quadrants', points, center=center)


def disk_plus_halves(radius: float = 0.5, center: Point = (0.0, 0.0),
    sample_points: Tuple[Point, Point, Point] = ((-0.95, 0.0), (0.0, 0.0), (0.95, 0.0))
    ) -> PartitionSpec:
    return PartitionSpec('disk-plus-halves', sample_points, radius=radius, center=center)


def assign_regions(mesh: TriMesh, spec: PartitionSpec) -> TriMesh:
    """
    Assigns every triangle the region containing its centroid.

    Args:
        mesh (TriMesh): Mesh to label
        spec (PartitionSpec): Partition

    Returns:
        TriMesh: Copy of the mesh with new region ids

    Raises:
        ConfigurationError: If a declared region receives no triangle
    """
    regions = spec.region_of(mesh.centroids)
    counts = np.bincount(regions, minlength=spec.n_regions)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ConfigurationError(f'{spec.kind} partition leaves region {int(empty[0])} empty')
    return mesh.with_regions(regions)


def mesh_io_write(mesh: TriMesh, path: str):
    """
    Writes a mesh in the plain-text 'tri-mesh v1' format.

    Args:
        mesh (TriMesh): Mesh to write
        path (str): Output file
    """
    lines = ['tri-mesh v1', f'nodes {mesh.n_nodes}']
    lines += [f'{x!r} {y!r}' for x, y in mesh.nodes.tolist()]
    lines.append(f'triangles {mesh.n_triangles}')
    lines += [f'{i} {j} {k} {r}' for (i, j, k), r in
        zip(mesh.triangles.tolist(), mesh.regions.tolist())]
    lines.append(f'boundary {len(mesh.boundary_edges)}')
    lines += [f'{i} {j} {label}' for (i, j), label in
        zip(mesh.boundary_edges.tolist(), mesh.boundary_labels.tolist())]
    with open(path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')


def mesh_io_read(path: str) -> TriMesh:
    """
    Reads a mesh written by mesh_io_write and validates it.

    Args:
        path (str): Input file

    Returns:
        TriMesh: The mesh

    Raises:
        MeshFormatError: On a malformed line, with its line number
        MeshError: If the parsed mesh is structurally invalid
    """
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()

    cursor = 0

    def next_line() -> Tuple[int, List[str]]:
        nonlocal cursor
        if cursor >= len(lines):
            raise MeshFormatError('unexpected end of file', cursor + 1)
        cursor += 1
        return cursor, lines[cursor - 1].split()

    lineno, tokens = next_line()
    if tokens != ['tri-mesh', 'v1']:
        raise MeshFormatError('expected header "tri-mesh v1"', lineno)

    def section(name: str) -> int:
        lineno, tokens = next_line()
        if len(tokens) != 2 or tokens[0] != name or not tokens[1].isdigit():
            raise MeshFormatError(f'expected "{name} <count>"', lineno)
        return int(tokens[1])

    def rows(count: int, width: int, parse) -> List[list]:
        out = []
        for _ in range(count):
            lineno, tokens = next_line()
            if len(tokens) != width:
                raise MeshFormatError(f'expected {width} values, got {len(tokens)}', lineno)
            try:
                out.append([parse(t) for t in tokens])
            except ValueError as err:
                raise MeshFormatError(str(err), lineno) from err
        return out

    n = section('nodes')
    nodes = rows(n, 2, float)
    t = section('triangles')
    tris = rows(t, 4, int)
    for k, row in enumerate(tris):
        if any(not 0 <= v < n for v in row[:3]):
            raise MeshFormatError(f'node index out of range in {row[:3]}', cursor - t + k + 1)
    b = section('boundary')
    edges = rows(b, 3, int)
    for k, row in enumerate(edges):
        if any(not 0 <= v < n for v in row[:2]):
            raise MeshFormatError(f'node index out of range in {row[:2]}', cursor - b + k + 1)
    if cursor != len(lines):
        raise MeshFormatError('trailing content after boundary section', cursor + 1)

    tri_arr = np.array(tris, dtype=np.int64).reshape(-1, 4)
    edge_arr = np.array(edges, dtype=np.int64).reshape(-1, 3)
    mesh = TriMesh(np.array(nodes).reshape(-1, 2), tri_arr[:, :3], edge_arr[:, :2],
        edge_arr[:, 2], tri_arr[:, 3])
    mesh.validate()
    return mesh


def circle_polygon_area(n_sides: int, radius: float) -> float:
    """Area of the regular polygon with n_sides inscribed in a circle."""
    return 0.5 * n_sides * math.sin(2.0 * math.pi / n_sides) * radius ** 2
