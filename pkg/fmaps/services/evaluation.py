"""Correspondence quality metrics and the refinement benchmark harness."""

import logging
import time
import tracemalloc
from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from config import get_settings
from fmaps.models.errors import DimensionMismatch, OutOfBudget
from fmaps.models.geometry import AreaVector, EigenBasis, TriangleMesh
from fmaps.models.maps import VertexMap
from fmaps.models.schemas import ZoomOutConfig
from fmaps.services.mesh import edge_graph, fibonacci_sphere, geodesic_distances_from, vertex_areas
from fmaps.services.parallel import block_slices, ordered_map
from fmaps.services.spectral import mesh_eigenbasis
from fmaps.services.zoomout import zoomout

settings = get_settings()
logger = logging.getLogger(__name__)

GEODESIC_CHUNK = 64  # Dijkstra sources per task
BENCH_COLUMNS = ["size", "wall_time", "peak_bytes"]


@dataclass
class ErrorReport:
    """Per-vertex geodesic errors normalized by sqrt(area of S1)."""

    errors: np.ndarray
    mean_x100: float
    pck: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.errors.shape[0]


# ============ Geodesic error ============

def _chunk_errors(chunk: slice, mesh1, graph, sources, source_pos, pred):
    rows = np.flatnonzero((source_pos >= chunk.start) & (source_pos < chunk.stop))
    dist = geodesic_distances_from(mesh1, sources[chunk], graph=graph)
    return rows, dist[source_pos[rows] - chunk.start, pred[rows]]


def mean_geodesic_error(
    pred: VertexMap,
    gt: VertexMap,
    mesh1: TriangleMesh,
    thresholds: Optional[Sequence[float]] = None,
) -> ErrorReport:
    """Distance on S1 between predicted and true images of every S2 vertex.

    Dijkstra runs once per distinct ground-truth vertex, in parallel chunks.
    """
    if pred.n2 != gt.n2:
        raise DimensionMismatch(f"predicted map covers {pred.n2} vertices, ground truth {gt.n2}")
    for name, vmap in (("predicted", pred), ("ground-truth", gt)):
        if vmap.indices.size and vmap.indices.max() >= mesh1.n:
            raise DimensionMismatch(f"{name} map points past the {mesh1.n} vertices of {mesh1.name!r}")

    errors = np.zeros(gt.n2)
    if gt.n2:
        sources, source_pos = np.unique(gt.indices, return_inverse=True)
        source_pos = source_pos.ravel()
        task = partial(
            _chunk_errors, mesh1=mesh1, graph=edge_graph(mesh1),
            sources=sources, source_pos=source_pos, pred=pred.indices,
        )
        chunks = block_slices(sources.shape[0], GEODESIC_CHUNK)
        for rows, values in ordered_map(task, chunks):
            errors[rows] = values
        errors /= np.sqrt(vertex_areas(mesh1).total_area)

    report = ErrorReport(errors=errors, mean_x100=float(100.0 * errors.mean()) if gt.n2 else 0.0)
    if thresholds is not None:
        report.pck = dict(zip(map(float, thresholds), pck_curve(report, thresholds).tolist()))
    return report


def pck_curve(report: ErrorReport, thresholds: Sequence[float]) -> np.ndarray:
    """Fraction of vertices with error <= t, for each threshold t."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(thresholds < 0) or np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be nonnegative and ascending")
    if report.n == 0:
        return np.ones_like(thresholds)
    ordered = np.sort(report.errors)
    return np.searchsorted(ordered, thresholds, side="right") / report.n


def report_to_frame(report: ErrorReport) -> pd.DataFrame:
    return pd.DataFrame({"vertex": np.arange(report.n), "error": report.errors})


def report_summary(report: ErrorReport) -> dict:
    return {
        "mean_x100": report.mean_x100,
        "n": report.n,
        "pck": {f"{t:g}": frac for t, frac in report.pck.items()},
    }


# ============ Benchmark ============

def permuted_pair(basis: EigenBasis, seed: int = 0, corruption: float = 0.3):
    """A relabeled copy of a basis and a partially corrupted ground-truth map into the original.

    Row i of the copy is row perm[i] of the original, so the true map sends
    vertex i of the copy to perm[i]. A `corruption` fraction of the map
    entries is replaced by random vertices.
    """
    rng = np.random.default_rng(seed)
    n = basis.n
    perm = rng.permutation(n)
    areas = AreaVector(values=basis.areas.values[perm], total_area=basis.areas.total_area)
    copy = EigenBasis(phi=basis.phi[perm], evals=basis.evals, areas=areas, name=f"{basis.name}_perm")

    init = perm.copy()
    corrupted = rng.choice(n, size=int(round(corruption * n)), replace=False)
    init[corrupted] = rng.integers(0, n, size=corrupted.shape[0])
    return copy, VertexMap(perm, n_source=n), VertexMap(init, n_source=n)


def _timed_refinement(init: VertexMap, basis1: EigenBasis, basis2: EigenBasis, cfg: ZoomOutConfig):
    tracemalloc.start()
    try:
        baseline, _ = tracemalloc.get_traced_memory()
        tracemalloc.reset_peak()
        start = time.perf_counter()
        zoomout(init, basis1, basis2, cfg)
        elapsed = time.perf_counter() - start
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return elapsed, peak - baseline


def bench_refinement(
    sizes: Sequence[int],
    cfg: Optional[ZoomOutConfig] = None,
    repetitions: int = 3,
    time_cap: Optional[float] = None,
    seed: int = 0,
) -> pd.DataFrame:
    """Wall time and peak traced allocation of a full ZoomOut run per mesh size.

    Each cell refines a spiral-point sphere with exactly `size` vertices
    against a relabeled copy of itself from a 30% corrupted map; spectra
    are computed before timing starts.
    """
    cfg = cfg or ZoomOutConfig()
    time_cap = settings.BENCH_TIME_CAP if time_cap is None else time_cap
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")

    rows = []
    for size in sizes:
        mesh = fibonacci_sphere(size)
        basis1 = mesh_eigenbasis(mesh, cfg.k_final)
        basis2, _, init = permuted_pair(basis1, seed=seed)

        times, peaks = [], []
        for _ in range(repetitions):
            elapsed, peak = _timed_refinement(init, basis1, basis2, cfg)
            times.append(elapsed)
            peaks.append(peak)
            if sum(times) > time_cap:
                raise OutOfBudget(f"size {mesh.n} exceeded the {time_cap:.0f}s budget after {len(times)} runs")

        rows.append({"size": mesh.n, "wall_time": float(np.mean(times)), "peak_bytes": int(max(peaks))})
        logger.info("bench n=%d: %.3fs, peak %.1f MiB", mesh.n, rows[-1]["wall_time"], rows[-1]["peak_bytes"] / 2 ** 20)

    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def memory_slope(frame: pd.DataFrame) -> float:
    """Log-log slope of peak memory against mesh size."""
    if len(frame) < 2:
        raise ValueError("need at least two sizes to fit a slope")
    slope, _ = np.polyfit(np.log(frame["size"].to_numpy(float)), np.log(frame["peak_bytes"].to_numpy(float)), 1)
    return float(slope)
