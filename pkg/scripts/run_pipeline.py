"""Run the axiomatic matching pipeline on two meshes: WKS -> NN -> ZoomOut -> evaluation."""

import sys
sys.path.append(".")

import argparse
import logging

from config import get_settings
from fmaps.models.maps import VertexMap
from fmaps.models.schemas import ZoomOutConfig
from fmaps.services import formats
from fmaps.services.descriptors import normalize_l2, wks
from fmaps.services.evaluation import mean_geodesic_error, pck_curve
from fmaps.services.mesh import load_mesh
from fmaps.services.softmap import nearest_neighbors
from fmaps.services.spectral import cached_eigenbasis
from fmaps.services.zoomout import zoomout

settings = get_settings()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("src")
    parser.add_argument("tgt")
    parser.add_argument("--gt", help="ground-truth vertex map from tgt to src")
    parser.add_argument("--out", default="map.txt")
    args = parser.parse_args()
    logging.basicConfig(level=settings.LOG_LEVEL)

    print("=" * 50)
    print("FUNCTIONAL MAPS - MATCHING PIPELINE")
    print("=" * 50)

    # Step 1: Spectra
    print("\n[1/4] Loading meshes and eigenbases...")
    mesh1, mesh2 = load_mesh(args.src), load_mesh(args.tgt)
    basis1 = cached_eigenbasis(mesh1, settings.EIGEN_COUNT)
    basis2 = cached_eigenbasis(mesh2, settings.EIGEN_COUNT)
    print(f"  - {mesh1.name}: {mesh1.n} vertices")
    print(f"  - {mesh2.name}: {mesh2.n} vertices")

    # Step 2: Descriptors
    print("\n[2/4] Computing WKS descriptors...")
    d1 = normalize_l2(wks(basis1.truncate(min(128, basis1.K))), basis1.areas)
    d2 = normalize_l2(wks(basis2.truncate(min(128, basis2.K))), basis2.areas)
    init = VertexMap(nearest_neighbors(d2.values, d1.values), n_source=mesh1.n)
    print(f"  - Descriptors per vertex: {d1.q}")

    # Step 3: Refinement
    print("\n[3/4] Refining with ZoomOut...")
    cfg = ZoomOutConfig()
    trace = zoomout(init, basis1, basis2, cfg)
    formats.write_vertex_map(args.out, trace.final_map)
    print(f"  - Spectral sizes: {cfg.k_init} -> {cfg.k_final} (step {cfg.step})")
    print(f"  - Map written to: {args.out}")

    # Step 4: Evaluation
    print("\n[4/4] Evaluating...")
    if args.gt:
        gt = formats.read_vertex_map(args.gt, n_source=mesh1.n)
        before = mean_geodesic_error(init, gt, mesh1)
        after = mean_geodesic_error(trace.final_map, gt, mesh1)
        print(f"  - Mean geodesic error x100 (WKS init): {before.mean_x100:.3f}")
        print(f"  - Mean geodesic error x100 (ZoomOut):  {after.mean_x100:.3f}")
        print(f"  - PCK@0.05: {pck_curve(after, [0.05])[0]:.3f}")
    else:
        print("  - No ground truth given, skipped")

    print("\n" + "=" * 50)
    print("PIPELINE COMPLETE")
    print("=" * 50)


if __name__ == "__main__":
    main()
