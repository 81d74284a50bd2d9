import logging
from typing import Optional, Union

import numpy as np
from scipy import linalg

from fmaps.models.errors import DimensionMismatch, SingularSystem
from fmaps.models.geometry import EigenBasis
from fmaps.models.maps import FunctionalMap, ScalableSoftMap, VertexMap
from fmaps.models.schemas import RefineMode
from fmaps.services import softmap
from fmaps.services.spectral import project

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
RIDGE_SCALE = 1e-9

PointwiseMap = Union[ScalableSoftMap, VertexMap]


def _check_sizes(basis1: EigenBasis, basis2: EigenBasis, k1: int, k2: int) -> None:
    if not (1 <= k1 <= basis1.K and 1 <= k2 <= basis2.K):
        raise DimensionMismatch(f"sizes k1={k1}, k2={k2} exceed bases of size {basis1.K}, {basis2.K}")


def pullback(
    basis1: EigenBasis,
    basis2: EigenBasis,
    pmap: PointwiseMap,
    k1: int,
    k2: int,
    **tiles,
) -> FunctionalMap:
    """Proper functional map C = Phi2^+ Pi Phi1 at size k2 x k1."""
    _check_sizes(basis1, basis2, k1, k2)
    phi1 = basis1.phi[:, :k1]
    if isinstance(pmap, ScalableSoftMap):
        if pmap.n1 != basis1.n or pmap.n2 != basis2.n:
            raise DimensionMismatch(f"soft map is {pmap.n2}x{pmap.n1}, bases have {basis2.n} and {basis1.n} vertices")
        transported = softmap.apply(pmap, phi1, **tiles)
    else:
        if pmap.n2 != basis2.n:
            raise DimensionMismatch(f"vertex map covers {pmap.n2} vertices, target basis has {basis2.n}")
        transported = softmap.pointwise_apply(pmap, phi1)
    C = project(basis2, transported, k=k2)
    return FunctionalMap(C, source_id=basis1.name, target_id=basis2.name)


def spectral_embeddings(C: np.ndarray, basis1: EigenBasis, basis2: EigenBasis) -> tuple[np.ndarray, np.ndarray]:
    """Rows of Phi1 C^T (S1) and Phi2 (S2), compared to convert C into a pointwise map."""
    k2, k1 = C.shape
    _check_sizes(basis1, basis2, k1, k2)
    return basis1.phi[:, :k1] @ C.T, basis2.phi[:, :k2]


def fmap_to_pointwise(
    fmap: FunctionalMap,
    basis1: EigenBasis,
    basis2: EigenBasis,
    mode: RefineMode = RefineMode.HARD,
    sigma: Optional[float] = None,
    **tiles,
) -> PointwiseMap:
    """Nearest-neighbor map (hard) or Gaussian soft map (soft) between spectral embeddings."""
    emb1, emb2 = spectral_embeddings(fmap.C, basis1, basis2)
    if RefineMode(mode) is RefineMode.SOFT:
        if sigma is None:
            raise ValueError("soft conversion needs a blur parameter sigma")
        return ScalableSoftMap(F1=emb1, F2=emb2, sigma=sigma)
    return VertexMap(softmap.nearest_neighbors(emb2, emb1, **tiles), n_source=basis1.n)


# ============ Least-squares baseline ============

def resolvent_mask(lambda1: np.ndarray, lambda2: np.ndarray) -> np.ndarray:
    """Squared resolvent mask Delta^2 (len(lambda2) x len(lambda1))."""
    lambda1 = np.asarray(lambda1, dtype=np.float64)
    lambda2 = np.asarray(lambda2, dtype=np.float64)
    if np.any(lambda1 < 0) or np.any(lambda2 < 0):
        raise ValueError("eigenvalues must be nonnegative")
    re1, im1 = np.sqrt(lambda1) / (1 + lambda1), 1 / (1 + lambda1)
    re2, im2 = np.sqrt(lambda2) / (1 + lambda2), 1 / (1 + lambda2)
    return (re2[:, None] - re1[None, :]) ** 2 + (im2[:, None] - im1[None, :]) ** 2


def least_squares_energy(C, A1, A2, lambda1, lambda2, reg_weight: float) -> float:
    """|C A1 - A2|^2 + reg_weight |Delta o C|^2."""
    C = C.C if isinstance(C, FunctionalMap) else np.asarray(C)
    mask = resolvent_mask(lambda1[:C.shape[1]], lambda2[:C.shape[0]])
    return float(np.sum((C @ A1 - A2) ** 2) + reg_weight * np.sum(mask * C ** 2))


def solve_least_squares_fmap(
    A1: np.ndarray,
    A2: np.ndarray,
    lambda1: np.ndarray,
    lambda2: np.ndarray,
    reg_weight: float = 0.0,
) -> FunctionalMap:
    """Row-wise minimizer of |C A1 - A2|^2 + reg_weight |Delta o C|^2.

    Row i solves (A1 A1^T + reg_weight diag(Delta^2_i)) c_i = A1 a2_i.
    With fewer descriptors than basis functions, a ridge of
    1e-9 trace(A1 A1^T) / K1 is added to every row system.
    """
    A1 = np.asarray(A1, dtype=np.float64)
    A2 = np.asarray(A2, dtype=np.float64)
    if A1.ndim != 2 or A2.ndim != 2 or A1.shape[1] != A2.shape[1]:
        raise DimensionMismatch(f"descriptor coefficients {A1.shape} and {A2.shape} disagree")
    if reg_weight < 0:
        raise ValueError(f"reg_weight must be nonnegative, got {reg_weight}")
    K1, p = A1.shape
    K2 = A2.shape[0]
    lambda1 = np.asarray(lambda1, dtype=np.float64)
    lambda2 = np.asarray(lambda2, dtype=np.float64)
    if lambda1.shape[0] < K1 or lambda2.shape[0] < K2:
        raise DimensionMismatch("eigenvalue lists are shorter than the coefficient matrices")

    gram = A1 @ A1.T
    rhs = A2 @ A1.T
    mask = resolvent_mask(lambda1[:K1], lambda2[:K2])
    if p < K1:
        ridge = RIDGE_SCALE * np.trace(gram) / K1
        logger.info("rank-deficient system (p=%d < K1=%d), adding ridge %.3e", p, K1, ridge)
        gram = gram + ridge * np.eye(K1)

    C = np.empty((K2, K1))
    for i in range(K2):
        system = gram + reg_weight * np.diag(mask[i])
        if reg_weight == 0 and np.linalg.cond(system) > CONDITION_LIMIT:
            raise SingularSystem(f"row {i} system is ill-conditioned (cond > {CONDITION_LIMIT:.0e})")
        C[i] = linalg.solve(system, rhs[i], assume_a="pos")
    return FunctionalMap(C)


def principal_submatrix(fmap: FunctionalMap, k2: int, k1: int) -> FunctionalMap:
    if not (1 <= k2 <= fmap.k2 and 1 <= k1 <= fmap.k1):
        raise DimensionMismatch(f"cannot take a {k2}x{k1} block of a {fmap.k2}x{fmap.k1} map")
    return FunctionalMap(fmap.C[:k2, :k1], source_id=fmap.source_id, target_id=fmap.target_id)
