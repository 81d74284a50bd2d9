from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from fmaps.models.errors import BasisTooLarge, EmptyMesh, ParseError

# Symmetric stiffness matrix, L >= 0 and L @ 1 = 0
SparseOperator = sparse.csr_matrix


@dataclass(frozen=True)
class TriangleMesh:
    """A triangle mesh. Vertices are (n, 3) floats, faces (m, 3) 0-based indices."""

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        faces = np.ascontiguousarray(self.faces, dtype=np.int64)

        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ParseError(f"vertices must be (n, 3), got {vertices.shape}")
        if faces.size == 0 or vertices.shape[0] == 0:
            raise EmptyMesh(f"mesh {self.name!r} has {vertices.shape[0]} vertices and {faces.size // 3} faces")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ParseError(f"faces must be (m, 3) triangles, got {faces.shape}")
        if not np.all(np.isfinite(vertices)):
            raise ParseError("vertex coordinates must be finite")
        if faces.min() < 0 or faces.max() >= vertices.shape[0]:
            raise ParseError(
                f"face index out of range [0, {vertices.shape[0]}): "
                f"min {faces.min()}, max {faces.max()}"
            )
        repeated = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        if np.any(repeated):
            raise ParseError(f"face {int(np.argmax(repeated))} repeats a vertex")

        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]


@dataclass(frozen=True)
class AreaVector:
    """Lumped (diagonal) vertex-area mass matrix."""

    values: np.ndarray
    total_area: float

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class EigenBasis:
    """K Laplace-Beltrami eigenpairs, A-orthonormal columns, ascending eigenvalues."""

    phi: np.ndarray
    evals: np.ndarray
    areas: AreaVector
    name: str = field(default="")

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def K(self) -> int:
        return self.phi.shape[1]

    def truncate(self, k: int) -> "EigenBasis":
        """First k eigenpairs. The returned arrays are views sharing storage."""
        if k < 2 or k > self.K:
            raise BasisTooLarge(f"need 2 <= k <= {self.K}, got {k}")
        if k == self.K:
            return self
        return EigenBasis(phi=self.phi[:, :k], evals=self.evals[:k], areas=self.areas, name=self.name)
