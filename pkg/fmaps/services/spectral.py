import hashlib
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from config import get_settings
from fmaps.models.errors import BasisTooLarge, ConvergenceFailure, DimensionMismatch, NonFiniteInput, ParseError
from fmaps.models.geometry import AreaVector, EigenBasis, SparseOperator, TriangleMesh
from fmaps.services import formats
from fmaps.services.mesh import cotangent_laplacian, vertex_areas

settings = get_settings()
logger = logging.getLogger(__name__)

EIGEN_TOL = 1e-9
RESIDUAL_TOL = 1e-6


def compute_eigenbasis(L: SparseOperator, A: AreaVector, K: int, name: str = "") -> EigenBasis:
    """K smallest eigenpairs of L phi = lambda A phi by shift-invert Lanczos.

    Columns are A-orthonormal, eigenvalues ascending and clipped at zero, and
    each column's largest-magnitude entry is made positive.
    """
    n = L.shape[0]
    if L.shape != (n, n) or A.n != n:
        raise DimensionMismatch(f"stiffness {L.shape} and areas ({A.n},) disagree")
    if K < 2 or K > n - 1:
        raise BasisTooLarge(f"need 2 <= K <= n - 1 = {n - 1}, got K={K}")

    mass = sparse.diags(A.values).tocsc()
    shift = -1e-8 * float(np.mean(L.diagonal()))
    v0 = np.random.default_rng(0).standard_normal(n)
    try:
        evals, phi = eigsh(
            L.tocsc(), k=K, M=mass, sigma=shift, which="LM",
            v0=v0, tol=EIGEN_TOL, maxiter=50 * K,
        )
    except ArpackNoConvergence as e:
        raise ConvergenceFailure(f"eigensolver stopped after {50 * K} iterations: {e}") from e

    order = np.argsort(evals)
    evals = np.maximum(evals[order], 0.0)
    phi = phi[:, order]

    norms = np.sqrt(np.einsum("ij,i,ij->j", phi, A.values, phi))
    phi = phi / norms
    pivots = np.argmax(np.abs(phi), axis=0)
    phi = phi * np.sign(phi[pivots, np.arange(K)])

    residual = np.linalg.norm(L @ phi - (A.values[:, None] * phi) * evals, axis=0)
    scale = np.linalg.norm(A.values[:, None] * phi, axis=0) * np.maximum(1.0, evals)
    worst = float(np.max(residual / scale))
    if not worst <= RESIDUAL_TOL:
        raise ConvergenceFailure(f"eigenpair residual {worst:.2e} exceeds {RESIDUAL_TOL:.0e} on {name!r}")
    logger.debug("eigenbasis %r: K=%d, worst residual %.2e", name, K, worst)

    return EigenBasis(phi=phi, evals=evals, areas=A, name=name)


def mesh_eigenbasis(mesh: TriangleMesh, K: int) -> EigenBasis:
    return compute_eigenbasis(cotangent_laplacian(mesh), vertex_areas(mesh), K, name=mesh.name)


def project(basis: EigenBasis, funcs: np.ndarray, k: Optional[int] = None) -> np.ndarray:
    """Spectral coefficients Phi^T A F of functions given as columns of funcs.

    With k, only the first k basis functions are used.
    """
    funcs = np.asarray(funcs, dtype=np.float64)
    squeeze = funcs.ndim == 1
    if squeeze:
        funcs = funcs[:, None]
    if funcs.shape[0] != basis.n:
        raise DimensionMismatch(f"functions have {funcs.shape[0]} rows, basis has {basis.n}")
    if not np.all(np.isfinite(funcs)):
        raise NonFiniteInput("cannot project non-finite functions")
    phi = basis.phi if k is None else basis.phi[:, :k]
    coeffs = phi.T @ (basis.areas.values[:, None] * funcs)
    return coeffs[:, 0] if squeeze else coeffs


def reconstruct(basis: EigenBasis, coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[0] != basis.K:
        raise DimensionMismatch(f"{coeffs.shape[0]} coefficients for a basis of size {basis.K}")
    return basis.phi @ coeffs


def truncate(basis: EigenBasis, k: int) -> EigenBasis:
    return basis.truncate(k)


# ============ Eigen-cache ============

def eigen_cache_key(mesh: TriangleMesh, K: int) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    digest.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    digest.update(str(K).encode())
    return digest.hexdigest()


def cached_eigenbasis(mesh: TriangleMesh, K: int, cache_dir: Optional[Union[str, Path]] = None) -> EigenBasis:
    """Eigenbasis of a mesh, read from or written to the content-addressed cache."""
    cache_dir = Path(cache_dir or settings.CACHE_DIR)
    path = cache_dir / f"{eigen_cache_key(mesh, K)}.specb"

    if path.exists():
        try:
            basis = formats.read_eigenbasis(path, name=mesh.name)
            if basis.n == mesh.n and basis.K == K:
                logger.info("eigen-cache hit for %r (K=%d): %s", mesh.name, K, path)
                return basis
            logger.warning("eigen-cache entry %s has wrong dimensions, recomputing", path)
        except ParseError as e:
            logger.warning("ignoring unreadable eigen-cache entry: %s", e)

    logger.info("eigen-cache miss for %r (K=%d), solving", mesh.name, K)
    basis = mesh_eigenbasis(mesh, K)
    formats.write_eigenbasis(path, basis)
    return basis
