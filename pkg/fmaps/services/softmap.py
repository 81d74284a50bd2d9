"""Blockwise kernel reductions over implicit soft maps.

Target rows (F2) are split into tiles of `tile_rows`; each tile streams over
source blocks of `tile_cols` rows of F1, evaluating kernel entries on the fly.
No array ever holds more than tile_rows x tile_cols kernel values, and the
row normalizers are carried as a running log-sum-exp (max + rescaled sum).

Within an output row, source blocks are always visited in ascending order,
so results are bitwise reproducible regardless of the thread count.
"""

import logging
from functools import partial
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from config import get_settings
from fmaps.models.errors import DimensionMismatch, NonFiniteInput
from fmaps.models.maps import Kernel, ScalableSoftMap, VertexMap
from fmaps.services.parallel import block_slices, ordered_map

settings = get_settings()
logger = logging.getLogger(__name__)


TILE_BUFFERS = 3  # logits, shifted logits and weights of one task
RANK_SLACK = 4 * np.finfo(np.float64).eps


def _tiles(tile_rows: Optional[int], tile_cols: Optional[int]) -> tuple[int, int]:
    return tile_rows or settings.TILE_ROWS, tile_cols or settings.TILE_COLS


def tasks_in_flight(tile_rows: int, tile_cols: int) -> int:
    """How many tile tasks fit in TILE_MEMORY_MB at once."""
    per_task = TILE_BUFFERS * 8 * max(tile_rows, 1) * max(tile_cols, 1)
    return max(1, (settings.TILE_MEMORY_MB << 20) // per_task)


def kernel_logits(x: np.ndarray, y: np.ndarray, sigma: float) -> np.ndarray:
    """delta_ij = -|x_i - y_j|^2 / (2 sigma^2) for one block."""
    return cdist(x, y, "sqeuclidean") * (-0.5 / sigma ** 2)


def _check_operand(smap: ScalableSoftMap, B: np.ndarray, rows: int, what: str) -> np.ndarray:
    if smap.kernel is not Kernel.GAUSSIAN_ROW_SOFTMAX:
        raise NotImplementedError(f"unsupported kernel {smap.kernel}")
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != rows or B.shape[1] < 1:
        raise DimensionMismatch(f"{what} must have shape ({rows}, d>=1), got {B.shape}")
    if not np.all(np.isfinite(B)):
        raise NonFiniteInput(f"{what} contains non-finite entries")
    return B


def _reduce_tile(rows: slice, smap: ScalableSoftMap, B: np.ndarray, cols: list[slice]):
    """Pi[rows] @ B and the row log-normalizers, streamed over source blocks."""
    x = smap.F2[rows]
    t = x.shape[0]
    row_max = np.full(t, -np.inf)
    row_sum = np.zeros(t)
    acc = np.zeros((t, B.shape[1]))

    for block in cols:
        logits = kernel_logits(x, smap.F1[block], smap.sigma)
        new_max = np.maximum(row_max, logits.max(axis=1))
        rescale = np.exp(row_max - new_max)
        weights = np.exp(logits - new_max[:, None])
        row_sum = row_sum * rescale + weights.sum(axis=1)
        acc = acc * rescale[:, None] + weights @ B[block]
        row_max = new_max

    return acc / row_sum[:, None], row_max + np.log(row_sum)


def _apply_with_normalizers(smap, B, tile_rows, tile_cols):
    tile_rows, tile_cols = _tiles(tile_rows, tile_cols)
    cols = block_slices(smap.n1, tile_cols)
    tiles = block_slices(smap.n2, tile_rows)
    out = np.empty((smap.n2, B.shape[1]))
    lse = np.empty(smap.n2)
    task = partial(_reduce_tile, smap=smap, B=B, cols=cols)
    limit = tasks_in_flight(min(tile_rows, smap.n2), min(tile_cols, smap.n1))
    for rows, (values, norms) in zip(tiles, ordered_map(task, tiles, max_in_flight=limit)):
        out[rows] = values
        lse[rows] = norms
    return out, lse


def apply(smap: ScalableSoftMap, B: np.ndarray, tile_rows: Optional[int] = None, tile_cols: Optional[int] = None) -> np.ndarray:
    """Pi @ B (n2 x d) without forming Pi."""
    B = _check_operand(smap, B, smap.n1, "B")
    out, _ = _apply_with_normalizers(smap, B, tile_rows, tile_cols)
    return out


def _adjoint_block(block: slice, x, g, r, lse, smap: ScalableSoftMap, B: np.ndarray):
    y = smap.F1[block]
    weights = np.exp(kernel_logits(x, y, smap.sigma) - lse[:, None])
    w = weights * (g @ B[block].T - r[:, None])
    d_source = w.T @ x - y * w.sum(axis=0)[:, None]
    d_target = w @ y - x * w.sum(axis=1)[:, None]
    return d_source, d_target


def apply_adjoint(
    smap: ScalableSoftMap,
    G: np.ndarray,
    B: np.ndarray,
    tile_rows: Optional[int] = None,
    tile_cols: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of <G, Pi B> with respect to F1 and F2.

    With W_ij = Pi_ij (G_i . B_j - G_i . [Pi B]_i):
      dF2_i = (1/sigma^2) sum_j W_ij (F1_j - F2_i)
      dF1_j = (1/sigma^2) sum_i W_ij (F2_i - F1_j)
    The first pass recomputes the row normalizers, the second accumulates W.
    """
    B = _check_operand(smap, B, smap.n1, "B")
    G = _check_operand(smap, G, smap.n2, "G")
    if G.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"G has {G.shape[1]} columns, B has {B.shape[1]}")

    dF1 = np.zeros_like(smap.F1)
    dF2 = np.zeros_like(smap.F2)
    if not np.any(G):
        return dF1, dF2

    out, lse = _apply_with_normalizers(smap, B, tile_rows, tile_cols)
    r = np.einsum("ij,ij->i", G, out)

    tile_rows, tile_cols = _tiles(tile_rows, tile_cols)
    cols = block_slices(smap.n1, tile_cols)
    limit = tasks_in_flight(min(tile_rows, smap.n2), min(tile_cols, smap.n1))
    for rows in block_slices(smap.n2, tile_rows):
        task = partial(_adjoint_block, x=smap.F2[rows], g=G[rows], r=r[rows], lse=lse[rows], smap=smap, B=B)
        for block, (d_source, d_target) in zip(cols, ordered_map(task, cols, max_in_flight=limit)):
            dF1[block] += d_source
            dF2[rows] += d_target

    scale = 1.0 / smap.sigma ** 2
    return dF1 * scale, dF2 * scale


# ============ Hard maps ============

def _nearest_tile(rows: slice, queries: np.ndarray, database: np.ndarray, sq_norms: np.ndarray, cols: list[slice]) -> np.ndarray:
    # |x|^2 is constant along a row, so |y|^2 - 2 x.y ranks candidates like the distance.
    # That form loses the last few digits, so candidates within rounding of the row
    # minimum are compared again on exact squared distances.
    x = queries[rows]
    t = x.shape[0]
    x_sq = np.einsum("ij,ij->i", x, x)
    best = np.full(t, np.inf)
    index = np.zeros(t, dtype=np.int64)
    arange = np.arange(t)
    for block in cols:
        dist = x @ database[block].T
        dist *= -2.0
        dist += sq_norms[block]
        local = dist.argmin(axis=1)
        slack = RANK_SLACK * (x.shape[1] + 2) * (x_sq + sq_norms[block].max())
        near = dist <= (dist[arange, local] + slack)[:, None]
        crowded = np.flatnonzero(np.count_nonzero(near, axis=1) > 1)
        if crowded.size:
            exact = cdist(x[crowded], database[block], "sqeuclidean")
            exact[~near[crowded]] = np.inf
            local[crowded] = exact.argmin(axis=1)
        candidate = np.sum((database[block][local] - x) ** 2, axis=1)
        better = candidate < best  # strict: ties keep the lower source index
        best[better] = candidate[better]
        index[better] = local[better] + block.start
    return index


def nearest_neighbors(
    queries: np.ndarray,
    database: np.ndarray,
    tile_rows: Optional[int] = None,
    tile_cols: Optional[int] = None,
) -> np.ndarray:
    """For each query row, the index of the closest database row (Euclidean)."""
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    database = np.ascontiguousarray(database, dtype=np.float64)
    if queries.ndim != 2 or database.ndim != 2 or queries.shape[1] != database.shape[1]:
        raise DimensionMismatch(f"cannot match rows of {queries.shape} against {database.shape}")
    tile_rows, tile_cols = _tiles(tile_rows, tile_cols)
    cols = block_slices(database.shape[0], tile_cols)
    tiles = block_slices(queries.shape[0], tile_rows)
    sq_norms = np.einsum("ij,ij->i", database, database)
    task = partial(_nearest_tile, queries=queries, database=database, sq_norms=sq_norms, cols=cols)
    limit = tasks_in_flight(min(tile_rows, queries.shape[0]), min(tile_cols, database.shape[0]))
    if not tiles:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(list(ordered_map(task, tiles, max_in_flight=limit)))


def extract_pointwise(smap: ScalableSoftMap, tile_rows: Optional[int] = None, tile_cols: Optional[int] = None) -> VertexMap:
    """Per-row argmax of Pi, i.e. the nearest F1 row for every F2 row."""
    indices = nearest_neighbors(smap.F2, smap.F1, tile_rows, tile_cols)
    return VertexMap(indices, n_source=smap.n1)


def pointwise_apply(vmap: VertexMap, B: np.ndarray) -> np.ndarray:
    """Pi @ B for a hard map: row i of the result is row vmap[i] of B."""
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2:
        raise DimensionMismatch(f"B must be 2D, got {B.shape}")
    if vmap.n_source is not None and vmap.n_source != B.shape[0]:
        raise DimensionMismatch(f"map targets {vmap.n_source} vertices, B has {B.shape[0]} rows")
    if vmap.indices.size and vmap.indices.max() >= B.shape[0]:
        raise DimensionMismatch(f"map index {vmap.indices.max()} out of range for {B.shape[0]} rows")
    return B[vmap.indices]
