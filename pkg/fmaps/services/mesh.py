"""Mesh loading, lumped areas, cotangent stiffness and graph geodesics."""

import logging
from pathlib import Path
from typing import Sequence, Union

import meshio
import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import ConvexHull

from fmaps.models.errors import DegenerateGeometry, DisconnectedMesh, EmptyMesh, ParseError
from fmaps.models.geometry import AreaVector, SparseOperator, TriangleMesh

logger = logging.getLogger(__name__)

COT_CLAMP = 1e4
SUPPORTED_SUFFIXES = {".off", ".obj", ".ply"}


def load_mesh(path: Union[str, Path]) -> TriangleMesh:
    """Read an OFF, OBJ or PLY triangle mesh. Only positions and faces are kept."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such mesh file: {path}")
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ParseError(f"unsupported mesh format {path.suffix!r} for {path}")

    try:
        raw = meshio.read(path)
    except Exception as e:
        raise ParseError(f"could not parse {path}: {e}") from e

    vertices = np.asarray(raw.points, dtype=np.float64)
    if vertices.ndim == 2 and vertices.shape[1] == 2:
        vertices = np.hstack([vertices, np.zeros((vertices.shape[0], 1))])

    blocks = [block for block in raw.cells if len(block.data)]
    others = sorted({block.type for block in blocks if block.type != "triangle"})
    if others:
        raise ParseError(f"{path} contains non-triangle cells: {', '.join(others)}")
    if not blocks:
        raise EmptyMesh(f"{path} has no faces")
    faces = np.concatenate([np.asarray(block.data, dtype=np.int64) for block in blocks])

    mesh = TriangleMesh(vertices=vertices, faces=faces, name=path.stem)
    logger.info("loaded %s: %d vertices, %d faces", path.name, mesh.n, mesh.n_faces)
    return mesh


def save_mesh(mesh: TriangleMesh, path: Union[str, Path]) -> None:
    meshio.write_points_cells(str(path), mesh.vertices, [("triangle", mesh.faces)])


# ============ Geometry ============

def face_areas(mesh: TriangleMesh) -> np.ndarray:
    v = mesh.vertices[mesh.faces]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def vertex_areas(mesh: TriangleMesh) -> AreaVector:
    """One third of each incident triangle's area goes to each of its corners."""
    per_face = face_areas(mesh)
    values = np.bincount(mesh.faces.ravel(), weights=np.repeat(per_face / 3.0, 3), minlength=mesh.n)
    total = float(values.sum())
    if not total > 0:
        raise DegenerateGeometry(f"mesh {mesh.name!r} has zero total area")
    isolated = int(np.count_nonzero(values == 0))
    if isolated:
        logger.warning("%d vertices of %r carry zero area", isolated, mesh.name)
    return AreaVector(values=values, total_area=total)


def cotangent_laplacian(mesh: TriangleMesh) -> SparseOperator:
    """Positive semi-definite cotangent stiffness matrix.

    Off-diagonal w_ij = -(cot a_ij + cot b_ij) / 2, diagonal = minus the row sum.
    """
    v = mesh.vertices[mesh.faces]
    double_area = np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
    if np.any(double_area == 0):
        bad = int(np.argmax(double_area == 0))
        raise DegenerateGeometry(f"triangle {bad} of {mesh.name!r} has zero area")

    rows, cols, weights = [], [], []
    for corner in range(3):
        j, k = (corner + 1) % 3, (corner + 2) % 3
        e1 = v[:, j] - v[:, corner]
        e2 = v[:, k] - v[:, corner]
        cot = np.clip(np.einsum("ij,ij->i", e1, e2) / double_area, -COT_CLAMP, COT_CLAMP)
        rows.append(mesh.faces[:, j])
        cols.append(mesh.faces[:, k])
        weights.append(0.5 * cot)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    weights = np.concatenate(weights)
    n = mesh.n
    # both orientations with identical values in identical order keeps W exactly symmetric
    W = sparse.coo_matrix(
        (np.concatenate([weights, weights]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    ).tocsr()
    W.sum_duplicates()
    L = sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W
    return L.tocsr()


# ============ Geodesics ============

def edge_graph(mesh: TriangleMesh) -> sparse.csr_matrix:
    """Symmetric sparse graph over mesh edges weighted by Euclidean length."""
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    lengths = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    graph = sparse.coo_matrix((lengths, (edges[:, 0], edges[:, 1])), shape=(mesh.n, mesh.n))
    return (graph + graph.T).tocsr()


def geodesic_distances(mesh: TriangleMesh, source: int) -> np.ndarray:
    """Dijkstra distances from one vertex over the edge graph (a graph approximation)."""
    if not 0 <= source < mesh.n:
        raise ParseError(f"source vertex {source} out of range [0, {mesh.n})")
    return geodesic_distances_from(mesh, [source])[0]


def geodesic_distances_from(mesh: TriangleMesh, sources: Sequence[int], graph=None) -> np.ndarray:
    """(len(sources), n) distance rows. Raises DisconnectedMesh with the rows attached."""
    graph = edge_graph(mesh) if graph is None else graph
    dist = np.atleast_2d(dijkstra(graph, directed=False, indices=np.asarray(sources, dtype=np.int64)))
    if not np.all(np.isfinite(dist)):
        unreachable = int(np.count_nonzero(~np.isfinite(dist)))
        raise DisconnectedMesh(f"{unreachable} vertex distances are unreachable on {mesh.name!r}", distances=dist)
    return dist


# ============ Synthetic meshes ============

_ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    """Subdivided icosahedron projected onto a sphere: 10 * 4**s + 2 vertices."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]
    vertices = [np.asarray(p, dtype=np.float64) / np.linalg.norm(p) for p in vertices]
    faces = _ICOSAHEDRON_FACES.tolist()

    for _ in range(subdivisions):
        midpoints = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                m = vertices[a] + vertices[b]
                vertices.append(m / np.linalg.norm(m))
                midpoints[key] = len(vertices) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = refined

    return TriangleMesh(vertices=radius * np.array(vertices), faces=np.array(faces), name=f"icosphere{subdivisions}")


def fibonacci_sphere(n_vertices: int, radius: float = 1.0) -> TriangleMesh:
    """Exactly n_vertices spread on a spiral over the sphere, triangulated by their convex hull."""
    if n_vertices < 4:
        raise EmptyMesh(f"a closed sphere needs at least 4 vertices, got {n_vertices}")
    i = np.arange(n_vertices, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / n_vertices
    r = np.sqrt(1.0 - z ** 2)
    theta = np.pi * (3.0 - np.sqrt(5.0)) * i
    vertices = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])

    faces = ConvexHull(vertices).simplices.astype(np.int64)
    # qhull does not orient its facets; make every normal point outwards
    a, b, c = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    inward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return TriangleMesh(vertices=radius * vertices, faces=faces, name=f"fibsphere{n_vertices}")


def bumpy_icosphere(subdivisions: int = 3, seed: int = 0, amplitude: float = 0.25) -> TriangleMesh:
    """Icosphere with smooth random radial bumps, leaving it without intrinsic symmetries."""
    sphere = icosphere(subdivisions)
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(6, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    heights = amplitude * rng.uniform(0.3, 1.0, size=6)
    widths = rng.uniform(0.3, 0.7, size=6)

    p = sphere.vertices
    cos_angle = p @ centers.T
    bumps = (heights * np.exp(-(1.0 - cos_angle) / widths ** 2)).sum(axis=1)
    return TriangleMesh(vertices=p * (1.0 + bumps)[:, None], faces=sphere.faces, name=f"bumpy{subdivisions}_{seed}")


def square_grid(nx: int = 21, ny: int = 21) -> TriangleMesh:
    """Flat unit square triangulated on an nx x ny vertex grid (has a boundary)."""
    xs, ys = np.meshgrid(np.linspace(0.0, 1.0, nx), np.linspace(0.0, 1.0, ny), indexing="ij")
    vertices = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)])
    idx = np.arange(nx * ny).reshape(nx, ny)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriangleMesh(vertices=vertices, faces=faces, name=f"grid{nx}x{ny}")


def permute_mesh(mesh: TriangleMesh, perm: np.ndarray) -> TriangleMesh:
    """Relabel vertices so that new vertex i is old vertex perm[i]."""
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.shape[0])
    return TriangleMesh(vertices=mesh.vertices[perm], faces=inverse[mesh.faces], name=f"{mesh.name}_perm")
