"""ZoomOut refinement, its soft-map (differentiable) variant, and the training losses.

Gradients are computed by reverse accumulation through the refinement chain.
Only the small functional maps are kept from the forward pass; each soft map
is rebuilt from them during the backward pass and its adjoint streamed by
softmap.apply_adjoint, so memory stays linear in the vertex counts.
"""

import logging
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from fmaps.models.errors import ConfigError, DimensionMismatch
from fmaps.models.geometry import EigenBasis
from fmaps.models.maps import FunctionalMap, ScalableSoftMap, VertexMap
from fmaps.models.schemas import LossWeights, RefineMode, ZoomOutConfig
from fmaps.services import softmap
from fmaps.services.fmap import fmap_to_pointwise, pullback, resolvent_mask

logger = logging.getLogger(__name__)

PointwiseMap = Union[ScalableSoftMap, VertexMap]
FmapLike = Union[FunctionalMap, np.ndarray]


@dataclass
class RefinementTrace:
    snapshots: list[FunctionalMap]
    final_map: PointwiseMap
    final_fmap: FunctionalMap

    @property
    def sizes(self) -> list[int]:
        return [s.k1 for s in self.snapshots]


@dataclass
class LossResult:
    dF1: np.ndarray
    dF2: np.ndarray
    value: float
    breakdown: dict = field(default_factory=dict)


def _matrix(C: FmapLike) -> np.ndarray:
    return C.C if isinstance(C, FunctionalMap) else np.asarray(C, dtype=np.float64)


def check_config(cfg: ZoomOutConfig, basis1: EigenBasis, basis2: EigenBasis) -> None:
    limit = min(basis1.K, basis2.K)
    if cfg.k_final > limit:
        raise ConfigError(f"k_final={cfg.k_final} exceeds the available basis size {limit}")


def _check_init(init: PointwiseMap, basis1: EigenBasis, basis2: EigenBasis) -> None:
    if isinstance(init, ScalableSoftMap):
        n1, n2 = init.n1, init.n2
    else:
        n1, n2 = init.n_source or basis1.n, init.n2
    if n1 != basis1.n or n2 != basis2.n:
        raise DimensionMismatch(f"initial map is {n2}x{n1}, shapes have {basis2.n} and {basis1.n} vertices")


# ============ Refinement ============

def zoomout(
    init: PointwiseMap,
    basis1: EigenBasis,
    basis2: EigenBasis,
    cfg: ZoomOutConfig,
    **tiles,
) -> RefinementTrace:
    """Alternate C = Phi2^+ Pi Phi1 at growing sizes with Pi = NN(Phi1 C^T, Phi2).

    In soft mode the nearest-neighbor step is replaced by a Gaussian soft map
    with blur cfg.sigma, and pullbacks go through that soft map.
    """
    check_config(cfg, basis1, basis2)
    _check_init(init, basis1, basis2)

    pmap = init
    snapshots = []
    fmap = None
    for k in cfg.sizes:
        fmap = pullback(basis1, basis2, pmap, k, k, **tiles)
        pmap = fmap_to_pointwise(fmap, basis1, basis2, cfg.mode, cfg.sigma, **tiles)
        logger.debug("zoomout k=%d (%s)", k, cfg.mode.value)
        if cfg.keep_snapshots:
            snapshots.append(fmap)
    if not cfg.keep_snapshots:
        snapshots = [fmap]
    return RefinementTrace(snapshots=snapshots, final_map=pmap, final_fmap=fmap)


def _normalize_rows(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    norms = np.where(norms > 0, norms, 1.0)
    return F / norms, norms


def initial_soft_map(F1: np.ndarray, F2: np.ndarray, cfg: ZoomOutConfig) -> ScalableSoftMap:
    F1 = np.asarray(F1, dtype=np.float64)
    F2 = np.asarray(F2, dtype=np.float64)
    if cfg.normalize_features:
        F1, _ = _normalize_rows(F1)
        F2, _ = _normalize_rows(F2)
    return ScalableSoftMap(F1=F1, F2=F2, sigma=cfg.sigma)


def differentiable_zoomout(
    F1: np.ndarray,
    F2: np.ndarray,
    basis1: EigenBasis,
    basis2: EigenBasis,
    cfg: ZoomOutConfig,
    **tiles,
) -> tuple[FunctionalMap, FunctionalMap, RefinementTrace]:
    """Soft map from features, C_init at k_init, then soft ZoomOut up to k_final."""
    if cfg.mode is not RefineMode.SOFT:
        raise ConfigError("differentiable zoomout runs in soft mode")
    cfg = cfg.model_copy(update={"keep_snapshots": True})
    trace = zoomout(initial_soft_map(F1, F2, cfg), basis1, basis2, cfg, **tiles)
    return trace.snapshots[0], trace.snapshots[-1], trace


# ============ Losses ============

def orthogonality_loss(C: FmapLike) -> float:
    C = _matrix(C)
    gram = C.T @ C
    return float(np.sum((gram - np.eye(gram.shape[0])) ** 2))


def consistency_loss(C_init: FmapLike, C_refined: FmapLike) -> float:
    C_init, C_refined = _matrix(C_init), _matrix(C_refined)
    k2, k1 = C_init.shape
    if C_refined.shape[0] < k2 or C_refined.shape[1] < k1:
        raise DimensionMismatch(f"refined map {C_refined.shape} is smaller than the initial map {C_init.shape}")
    return float(np.sum((C_init - C_refined[:k2, :k1]) ** 2))


def laplacian_commutativity_loss(C: FmapLike, lambda1: np.ndarray, lambda2: np.ndarray) -> float:
    C = _matrix(C)
    k2, k1 = C.shape
    if len(lambda1) < k1 or len(lambda2) < k2:
        raise DimensionMismatch(f"eigenvalue lists ({len(lambda2)}, {len(lambda1)}) do not cover a {k2}x{k1} map")
    mask = resolvent_mask(lambda1[:k1], lambda2[:k2])
    return float(np.sum(mask * C ** 2))


def loss_gradients(
    F1: np.ndarray,
    F2: np.ndarray,
    basis1: EigenBasis,
    basis2: EigenBasis,
    cfg: ZoomOutConfig,
    weights: LossWeights,
    stop_gradient_refined: bool = False,
    **tiles,
) -> LossResult:
    """Value and feature gradients of

        w_orth L_orth(C_init) + w_consist L_consist(C_init, C_refined) + w_lap L_lap(C_init)

    chained through every soft-map iteration. With stop_gradient_refined the
    refined map is treated as a constant target.
    """
    F1 = np.asarray(F1, dtype=np.float64)
    F2 = np.asarray(F2, dtype=np.float64)
    C_init, C_refined, trace = differentiable_zoomout(F1, F2, basis1, basis2, cfg, **tiles)
    Cs = [s.C for s in trace.snapshots]
    sizes = cfg.sizes
    C0 = Cs[0]
    k0 = sizes[0]

    orth = orthogonality_loss(C0)
    consist = consistency_loss(C0, Cs[-1])
    lap = laplacian_commutativity_loss(C0, basis1.evals, basis2.evals)
    value = weights.w_orth * orth + weights.w_consist * consist + weights.w_lap * lap
    breakdown = {"orth": orth, "consist": consist, "lap": lap}

    dC = [np.zeros_like(C) for C in Cs]
    mask = resolvent_mask(basis1.evals[:k0], basis2.evals[:k0])
    residual = C0 - Cs[-1][:k0, :k0]
    dC[0] += weights.w_orth * 4.0 * C0 @ (C0.T @ C0 - np.eye(k0))
    dC[0] += weights.w_lap * 2.0 * mask * C0
    dC[0] += weights.w_consist * 2.0 * residual
    if not stop_gradient_refined:
        dC[-1][:k0, :k0] -= weights.w_consist * 2.0 * residual

    init_map = initial_soft_map(F1, F2, cfg)
    dE1 = dE2 = None
    for j in range(len(Cs) - 1, -1, -1):
        if not np.any(dC[j]):
            continue
        k = sizes[j]
        # C_j = Phi2^T A2 (Pi_j Phi1), so d(Pi_j Phi1) = A2 Phi2 dC_j
        G = basis2.areas.values[:, None] * (basis2.phi[:, :k] @ dC[j])
        if j == 0:
            dE1, dE2 = softmap.apply_adjoint(init_map, G, basis1.phi[:, :k], **tiles)
        else:
            prev = sizes[j - 1]
            pmap = ScalableSoftMap(F1=basis1.phi[:, :prev] @ Cs[j - 1].T, F2=basis2.phi[:, :prev], sigma=cfg.sigma)
            d_emb1, _ = softmap.apply_adjoint(pmap, G, basis1.phi[:, :k], **tiles)
            # emb1 = Phi1 C^T
            dC[j - 1] += d_emb1.T @ basis1.phi[:, :prev]

    if dE1 is None:
        dF1, dF2 = np.zeros_like(F1), np.zeros_like(F2)
    elif cfg.normalize_features:
        dF1 = _normalize_rows_adjoint(F1, dE1)
        dF2 = _normalize_rows_adjoint(F2, dE2)
    else:
        dF1, dF2 = dE1, dE2

    return LossResult(dF1=dF1, dF2=dF2, value=float(value), breakdown=breakdown)


def _normalize_rows_adjoint(F: np.ndarray, dY: np.ndarray) -> np.ndarray:
    Y, norms = _normalize_rows(F)
    return (dY - Y * np.einsum("ij,ij->i", Y, dY)[:, None]) / norms
