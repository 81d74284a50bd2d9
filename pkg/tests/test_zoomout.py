import numpy as np
import pytest
from scipy.spatial.distance import cdist

from fmaps.models.errors import ConfigError, DimensionMismatch
from fmaps.models.geometry import TriangleMesh
from fmaps.models.maps import FunctionalMap, VertexMap
from fmaps.models.schemas import LossWeights, RefineMode, ZoomOutConfig
from fmaps.services.descriptors import normalize_l2, wks
from fmaps.services.evaluation import mean_geodesic_error, permuted_pair
from fmaps.services.fmap import fmap_to_pointwise, pullback
from fmaps.services.mesh import square_grid
from fmaps.services.softmap import extract_pointwise, nearest_neighbors
from fmaps.services.spectral import mesh_eigenbasis
from fmaps.services.zoomout import (
    consistency_loss,
    differentiable_zoomout,
    initial_soft_map,
    laplacian_commutativity_loss,
    loss_gradients,
    orthogonality_loss,
    zoomout,
)


def _soft(**kwargs):
    return ZoomOutConfig(mode=RefineMode.SOFT, **kwargs)


def test_snapshot_sizes(bumpy_basis):
    cfg = ZoomOutConfig(k_init=10, k_final=60, step=10)
    trace = zoomout(VertexMap.identity(bumpy_basis.n), bumpy_basis, bumpy_basis, cfg)
    assert trace.sizes == [10, 20, 30, 40, 50, 60]
    assert all(s.shape == (k, k) for s, k in zip(trace.snapshots, trace.sizes))
    assert trace.final_fmap is trace.snapshots[-1]


def test_uneven_step_stops_below_k_final(bumpy_basis):
    cfg = ZoomOutConfig(k_init=10, k_final=35, step=10)
    assert cfg.sizes == [10, 20, 30]
    trace = zoomout(VertexMap.identity(bumpy_basis.n), bumpy_basis, bumpy_basis, cfg)
    assert trace.final_fmap.shape == (30, 30)


def test_keep_snapshots_off(bumpy_basis):
    cfg = ZoomOutConfig(k_init=10, k_final=30, step=10, keep_snapshots=False)
    trace = zoomout(VertexMap.identity(bumpy_basis.n), bumpy_basis, bumpy_basis, cfg)
    assert len(trace.snapshots) == 1
    assert trace.final_fmap.shape == (30, 30)


def test_identity_is_a_fixed_point(bumpy_basis):
    cfg = ZoomOutConfig(k_init=10, k_final=50, step=10)
    trace = zoomout(VertexMap.identity(bumpy_basis.n), bumpy_basis, bumpy_basis, cfg)
    for snapshot in trace.snapshots:
        np.testing.assert_allclose(snapshot.C, np.eye(snapshot.k1), atol=1e-8)
    np.testing.assert_array_equal(trace.final_map.indices, np.arange(bumpy_basis.n))


def test_default_config_reaches_k_final(bumpy_basis):
    trace = zoomout(VertexMap.identity(bumpy_basis.n), bumpy_basis, bumpy_basis, ZoomOutConfig())
    assert trace.final_fmap.shape == (130, 130)


def test_recovers_from_corrupted_map(bumpy_basis):
    other, gt, init = permuted_pair(bumpy_basis, seed=0, corruption=0.3)
    assert np.mean(init.indices == gt.indices) <= 0.71

    trace = zoomout(init, bumpy_basis, other, ZoomOutConfig(k_init=10, k_final=60, step=10))
    assert np.mean(trace.final_map.indices == gt.indices) >= 0.95


@pytest.mark.slow
def test_recovers_permuted_sphere_from_wks(sphere):
    basis = mesh_eigenbasis(sphere, 40)
    other, gt, _ = permuted_pair(basis, seed=0)
    d1 = normalize_l2(wks(basis, q=32), basis.areas)
    d2 = normalize_l2(wks(other, q=32), other.areas)
    init = VertexMap(nearest_neighbors(d2.values, d1.values), n_source=basis.n)

    trace = zoomout(init, basis, other, ZoomOutConfig(k_init=10, k_final=40, step=10))
    assert sphere.n == 642
    assert np.mean(trace.final_map.indices == gt.indices) >= 0.99
    assert mean_geodesic_error(trace.final_map, gt, sphere).mean_x100 <= 0.5


def test_matches_dense_reference_loop(bumpy_basis):
    other, _, init = permuted_pair(bumpy_basis, seed=1)
    cfg = ZoomOutConfig(k_init=10, k_final=40, step=10)
    trace = zoomout(init, bumpy_basis, other, cfg)

    indices = init.indices
    for k, snapshot in zip(cfg.sizes, trace.snapshots):
        P = np.zeros((other.n, bumpy_basis.n))
        P[np.arange(other.n), indices] = 1.0
        C = other.phi[:, :k].T @ (other.areas.values[:, None] * (P @ bumpy_basis.phi[:, :k]))
        np.testing.assert_allclose(snapshot.C, C, atol=1e-10)
        indices = cdist(other.phi[:, :k], bumpy_basis.phi[:, :k] @ snapshot.C.T, "sqeuclidean").argmin(axis=1)
    np.testing.assert_array_equal(trace.final_map.indices, indices)


def test_every_snapshot_is_a_pullback(bumpy_basis):
    other, _, init = permuted_pair(bumpy_basis, seed=2)
    cfg = ZoomOutConfig(k_init=10, k_final=40, step=10)
    trace = zoomout(init, bumpy_basis, other, cfg)
    for prev, current in zip(trace.snapshots, trace.snapshots[1:]):
        pmap = fmap_to_pointwise(prev, bumpy_basis, other)
        expected = pullback(bumpy_basis, other, pmap, current.k1, current.k2)
        np.testing.assert_array_equal(current.C, expected.C)


def test_sharp_soft_mode_tracks_hard_mode(bumpy_basis):
    other, _, init = permuted_pair(bumpy_basis, seed=3)
    hard = zoomout(init, bumpy_basis, other, ZoomOutConfig(k_init=10, k_final=40, step=10))
    soft = zoomout(init, bumpy_basis, other, _soft(k_init=10, k_final=40, step=10, sigma=1e-4))
    agreement = np.mean(extract_pointwise(soft.final_map).indices == hard.final_map.indices)
    assert agreement >= 0.99


def test_config_and_init_checks(bumpy_basis):
    identity = VertexMap.identity(bumpy_basis.n)
    with pytest.raises(ConfigError):
        zoomout(identity, bumpy_basis, bumpy_basis, ZoomOutConfig(k_init=10, k_final=131, step=10))
    with pytest.raises(DimensionMismatch):
        zoomout(VertexMap.identity(100), bumpy_basis, bumpy_basis, ZoomOutConfig(k_init=10, k_final=20, step=10))
    with pytest.raises(ConfigError):
        differentiable_zoomout(bumpy_basis.phi[:, :3], bumpy_basis.phi[:, :3], bumpy_basis, bumpy_basis, ZoomOutConfig())
    with pytest.raises(ValueError):
        ZoomOutConfig(k_init=1)
    with pytest.raises(ValueError):
        ZoomOutConfig(k_init=20, k_final=10)


# ============ Differentiable ZoomOut ============

def test_identical_features_give_identity_maps(bumpy, bumpy_basis):
    cfg = _soft(k_init=10, k_final=20, step=5, sigma=1e-3)
    C_init, C_refined, trace = differentiable_zoomout(bumpy.vertices, bumpy.vertices, bumpy_basis, bumpy_basis, cfg)
    assert C_init.shape == (10, 10)
    assert C_refined.shape == (20, 20)
    assert len(trace.snapshots) == 3
    assert np.linalg.norm(C_init.C - np.eye(10)) <= 1e-6
    assert np.linalg.norm(C_refined.C - np.eye(20)) <= 1e-4


def test_differentiable_forward_equals_soft_zoomout(small_pair, rng):
    basis1, basis2 = small_pair
    F1, F2 = rng.normal(size=(basis1.n, 4)), rng.normal(size=(basis2.n, 4))
    cfg = _soft(k_init=6, k_final=12, step=3, sigma=0.5, normalize_features=True)
    _, _, trace = differentiable_zoomout(F1, F2, basis1, basis2, cfg)
    reference = zoomout(initial_soft_map(F1, F2, cfg), basis1, basis2, cfg)
    for a, b in zip(trace.snapshots, reference.snapshots):
        np.testing.assert_array_equal(a.C, b.C)


# ============ Losses ============

def test_orthogonality_loss_by_hand():
    assert orthogonality_loss(2 * np.eye(3)) == pytest.approx(27.0)
    theta = 0.3
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    assert orthogonality_loss(FunctionalMap(rotation)) == pytest.approx(0.0, abs=1e-15)


def test_consistency_loss_by_hand():
    assert consistency_loss(np.zeros((2, 2)), np.eye(3)) == pytest.approx(2.0)
    refined = np.eye(5)
    refined[3:, :] = 7.0
    refined[:, 3:] = -7.0
    assert consistency_loss(np.eye(3), refined) == 0.0
    with pytest.raises(DimensionMismatch):
        consistency_loss(np.eye(3), np.eye(2))


def test_laplacian_loss_by_hand():
    value = laplacian_commutativity_loss(np.ones((2, 2)), np.array([0.0, 1.0]), np.array([0.0, 2.0]))
    expected = 0.5 + 2 / 3 + (np.sqrt(2) / 3 - 0.5) ** 2 + (1 / 3 - 0.5) ** 2
    assert value == pytest.approx(expected, rel=1e-14)

    evals = np.array([0.0, 1.0, 4.0, 9.0])
    assert laplacian_commutativity_loss(np.diag([1.0, -2.0, 3.0, 0.5]), evals, evals) == 0.0
    assert laplacian_commutativity_loss(np.zeros((4, 4)), evals, evals + 1) == 0.0


# ============ Gradients ============

def _total(F1, F2, basis1, basis2, cfg, weights):
    return loss_gradients(F1, F2, basis1, basis2, cfg, weights).value


@pytest.mark.parametrize("normalize", [False, True])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(small_pair, normalize, seed):
    basis1, basis2 = small_pair
    rng = np.random.default_rng(seed)
    p, h = 8, 1e-5
    F1, F2 = 0.3 * rng.normal(size=(basis1.n, p)), 0.3 * rng.normal(size=(basis2.n, p))
    cfg = _soft(k_init=6, k_final=12, step=3, sigma=0.3, normalize_features=normalize)
    weights = LossWeights(w_orth=1.0, w_consist=1.0, w_lap=1.0)
    result = loss_gradients(F1, F2, basis1, basis2, cfg, weights)
    grad_norm = np.sqrt(np.sum(result.dF1 ** 2) + np.sum(result.dF2 ** 2))
    assert grad_norm > 0

    for _ in range(4):
        D1, D2 = rng.normal(size=F1.shape), rng.normal(size=F2.shape)
        scale = np.sqrt(np.sum(D1 ** 2) + np.sum(D2 ** 2))
        D1, D2 = D1 / scale, D2 / scale
        plus = _total(F1 + h * D1, F2 + h * D2, basis1, basis2, cfg, weights)
        minus = _total(F1 - h * D1, F2 - h * D2, basis1, basis2, cfg, weights)
        fd = (plus - minus) / (2 * h)
        analytic = np.sum(result.dF1 * D1) + np.sum(result.dF2 * D2)
        assert abs(fd - analytic) <= 1e-4 * (abs(analytic) + 1e-2 * grad_norm)


def _random_surface(rng, name):
    """Height field over a 4 x 4 square with one smooth bump; at most 144 vertices."""
    nx, ny = rng.integers(8, 13, size=2)
    grid = square_grid(int(nx), int(ny))
    xy = grid.vertices[:, :2]
    center = rng.uniform(0.2, 0.8, size=2)
    z = rng.uniform(0.1, 0.4) * np.exp(-np.sum((xy - center) ** 2, axis=1) / 0.05)
    return TriangleMesh(vertices=4.0 * np.column_stack([xy, z]), faces=grid.faces, name=name)


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences_on_random_pairs(seed):
    rng = np.random.default_rng(100 + seed)
    basis1 = mesh_eigenbasis(_random_surface(rng, f"a{seed}"), 16)
    basis2 = mesh_eigenbasis(_random_surface(rng, f"b{seed}"), 16)
    assert max(basis1.n, basis2.n) <= 150

    p, h = int(rng.integers(2, 9)), 1e-5
    F1, F2 = 0.3 * rng.normal(size=(basis1.n, p)), 0.3 * rng.normal(size=(basis2.n, p))
    cfg = _soft(
        k_init=4, k_final=13, step=3, sigma=float(rng.uniform(0.3, 0.6)),
        normalize_features=bool(rng.integers(2)),
    )
    assert len(cfg.sizes) == 4
    weights = LossWeights(w_orth=1.0, w_consist=1.0, w_lap=1.0)
    result = loss_gradients(F1, F2, basis1, basis2, cfg, weights)
    grad_norm = np.sqrt(np.sum(result.dF1 ** 2) + np.sum(result.dF2 ** 2))
    assert grad_norm > 0

    for _ in range(2):
        D1, D2 = rng.normal(size=F1.shape), rng.normal(size=F2.shape)
        scale = np.sqrt(np.sum(D1 ** 2) + np.sum(D2 ** 2))
        D1, D2 = D1 / scale, D2 / scale
        plus = _total(F1 + h * D1, F2 + h * D2, basis1, basis2, cfg, weights)
        minus = _total(F1 - h * D1, F2 - h * D2, basis1, basis2, cfg, weights)
        fd = (plus - minus) / (2 * h)
        analytic = np.sum(result.dF1 * D1) + np.sum(result.dF2 * D2)
        assert abs(fd - analytic) <= 1e-4 * (abs(analytic) + 1e-2 * grad_norm)


def test_zero_weights_give_zero_gradients(small_pair, rng):
    basis1, basis2 = small_pair
    F1, F2 = rng.normal(size=(basis1.n, 4)), rng.normal(size=(basis2.n, 4))
    result = loss_gradients(F1, F2, basis1, basis2, _soft(k_init=6, k_final=12, step=3, sigma=0.5), LossWeights(w_orth=0, w_consist=0, w_lap=0))
    assert result.value == 0.0
    assert not np.any(result.dF1) and not np.any(result.dF2)
    assert set(result.breakdown) == {"orth", "consist", "lap"}


def test_identity_is_stationary(bumpy, bumpy_basis):
    F = np.array(bumpy.vertices)
    cfg = _soft(k_init=10, k_final=20, step=5, sigma=1e-3)
    result = loss_gradients(F, F, bumpy_basis, bumpy_basis, cfg, LossWeights())
    assert result.value <= 1e-6
    feature_norm = np.linalg.norm(F)
    assert np.linalg.norm(result.dF1) <= 1e-6 * feature_norm
    assert np.linalg.norm(result.dF2) <= 1e-6 * feature_norm


def test_stop_gradient_on_refined_map(small_pair, rng):
    basis1, basis2 = small_pair
    F1, F2 = 0.3 * rng.normal(size=(basis1.n, 6)), 0.3 * rng.normal(size=(basis2.n, 6))
    cfg = _soft(k_init=6, k_final=12, step=3, sigma=0.3)

    weights = LossWeights(w_orth=1.0, w_consist=1.0, w_lap=1.0)
    full = loss_gradients(F1, F2, basis1, basis2, cfg, weights)
    stopped = loss_gradients(F1, F2, basis1, basis2, cfg, weights, stop_gradient_refined=True)
    assert stopped.value == full.value
    assert not np.allclose(stopped.dF1, full.dF1)

    no_consist = LossWeights(w_orth=1.0, w_consist=0.0, w_lap=1.0)
    a = loss_gradients(F1, F2, basis1, basis2, cfg, no_consist)
    b = loss_gradients(F1, F2, basis1, basis2, cfg, no_consist, stop_gradient_refined=True)
    np.testing.assert_array_equal(a.dF1, b.dF1)
    np.testing.assert_array_equal(a.dF2, b.dF2)
