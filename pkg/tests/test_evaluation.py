import os

import numpy as np
import pandas as pd
import pytest
from scipy.sparse.csgraph import dijkstra

from fmaps.models.errors import DimensionMismatch, OutOfBudget
from fmaps.models.maps import VertexMap
from fmaps.models.schemas import ZoomOutConfig
from fmaps.services import softmap
from fmaps.services.evaluation import (
    BENCH_COLUMNS,
    ErrorReport,
    bench_refinement,
    mean_geodesic_error,
    memory_slope,
    pck_curve,
    permuted_pair,
    report_summary,
    report_to_frame,
)
from fmaps.services.mesh import edge_graph, icosphere, square_grid, vertex_areas


def test_perfect_map_has_zero_error(sphere):
    identity = VertexMap.identity(sphere.n)
    report = mean_geodesic_error(identity, identity, sphere)
    assert report.mean_x100 == 0.0
    assert not np.any(report.errors)


def test_single_vertex_off_by_one_edge():
    grid = square_grid(10, 10)
    pred = np.arange(grid.n)
    pred[0] = 10  # the next vertex along x, 1/9 away
    report = mean_geodesic_error(VertexMap(pred), VertexMap.identity(grid.n), grid)
    assert report.errors[0] == pytest.approx(1 / 9, rel=1e-12)
    assert report.mean_x100 == pytest.approx(100 * (1 / 9) / 100, rel=1e-12)


def test_matches_brute_force_all_pairs(rng):
    mesh = icosphere(2)
    pred = rng.integers(0, mesh.n, size=mesh.n)
    gt = rng.integers(0, mesh.n, size=mesh.n)
    report = mean_geodesic_error(VertexMap(pred), VertexMap(gt), mesh)

    all_pairs = dijkstra(edge_graph(mesh), directed=False)
    expected = all_pairs[gt, pred] / np.sqrt(vertex_areas(mesh).total_area)
    np.testing.assert_allclose(report.errors, expected, rtol=1e-12)
    assert report.mean_x100 == pytest.approx(100 * expected.mean(), rel=1e-12)


def test_error_checks(sphere):
    with pytest.raises(DimensionMismatch):
        mean_geodesic_error(VertexMap.identity(10), VertexMap.identity(11), sphere)
    with pytest.raises(DimensionMismatch):
        mean_geodesic_error(VertexMap([sphere.n]), VertexMap([0]), sphere)


def test_pck_curve():
    report = ErrorReport(errors=np.array([0.1, 0.5, 0.2]), mean_x100=80 / 3)
    np.testing.assert_allclose(pck_curve(report, [0.0, 0.2, 0.5]), [0.0, 2 / 3, 1.0])
    curve = pck_curve(report, np.linspace(0, 1, 11))
    assert np.all(np.diff(curve) >= 0)
    with pytest.raises(ValueError):
        pck_curve(report, [0.5, 0.2])
    with pytest.raises(ValueError):
        pck_curve(report, [-0.1])


def test_report_serialization(rng):
    mesh = icosphere(2)
    pred = VertexMap(rng.integers(0, mesh.n, size=mesh.n))
    report = mean_geodesic_error(pred, VertexMap.identity(mesh.n), mesh, thresholds=[0.05, 0.25])

    summary = report_summary(report)
    assert summary["n"] == mesh.n
    assert summary["mean_x100"] == report.mean_x100
    assert set(summary["pck"]) == {"0.05", "0.25"}
    assert summary["pck"]["0.05"] <= summary["pck"]["0.25"]

    frame = report_to_frame(report)
    assert list(frame.columns) == ["vertex", "error"]
    np.testing.assert_array_equal(frame["error"].to_numpy(), report.errors)


def test_permuted_pair(sphere_basis):
    other, gt, init = permuted_pair(sphere_basis, seed=4, corruption=0.3)
    np.testing.assert_array_equal(other.phi, sphere_basis.phi[gt.indices])
    np.testing.assert_array_equal(other.areas.values, sphere_basis.areas.values[gt.indices])
    np.testing.assert_array_equal(np.sort(gt.indices), np.arange(sphere_basis.n))
    wrong = np.count_nonzero(init.indices != gt.indices)
    assert wrong <= round(0.3 * sphere_basis.n)
    assert wrong >= 0.25 * sphere_basis.n


# ============ Benchmark ============

def test_small_benchmark():
    frame = bench_refinement([162], ZoomOutConfig(k_init=10, k_final=20, step=5), repetitions=1)
    assert list(frame.columns) == BENCH_COLUMNS
    assert frame["size"].tolist() == [162]
    assert frame["wall_time"].iloc[0] > 0
    assert frame["peak_bytes"].iloc[0] > 0


def test_benchmark_time_cap():
    with pytest.raises(OutOfBudget):
        bench_refinement([162], ZoomOutConfig(k_init=10, k_final=20, step=5), repetitions=2, time_cap=0.0)


def test_memory_slope():
    sizes = np.array([1e4, 3e4, 1e5])
    assert memory_slope(pd.DataFrame({"size": sizes, "peak_bytes": 5 * sizes})) == pytest.approx(1.0)
    assert memory_slope(pd.DataFrame({"size": sizes, "peak_bytes": sizes ** 2})) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        memory_slope(pd.DataFrame({"size": [1e4], "peak_bytes": [1.0]}))


@pytest.mark.slow
def test_refinement_never_holds_a_quarter_of_the_dense_map(monkeypatch, threads):
    n = 10000
    monkeypatch.setattr(softmap.settings, "TILE_ROWS", 1024)
    monkeypatch.setattr(softmap.settings, "TILE_COLS", 1024)
    threads(2)
    frame = bench_refinement([n], ZoomOutConfig(k_init=30, k_final=130, step=10), repetitions=1)
    assert frame["size"].tolist() == [n]
    assert frame["peak_bytes"].iloc[0] < n * n // 4 * 8


@pytest.mark.slow
def test_refinement_scales_to_100k_vertices(threads):
    threads(0)
    frame = bench_refinement(
        [10000, 30000, 100000], ZoomOutConfig(k_init=30, k_final=130, step=10), repetitions=1, time_cap=3600.0,
    )
    assert frame["size"].tolist() == [10000, 30000, 100000]
    largest = frame.iloc[-1]
    assert largest["peak_bytes"] < 4 * 2 ** 30
    assert memory_slope(frame) < 1.3
    if (os.cpu_count() or 1) >= 8:
        assert largest["wall_time"] <= 180.0
