"""Command-line front end: precompute, match, refine, optimize, eval, bench.

Data goes to stdout or files, logs to stderr. Failures print one line
"<CATEGORY>: <message>" and exit with status 1.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from config import get_settings
from fmaps.models.errors import ConfigError, DimensionMismatch, FmapsError
from fmaps.models.maps import DescriptorSet, ScalableSoftMap, VertexMap
from fmaps.models.schemas import ConsistSchedule, JobSpec, OptimConfig, RefineMode, ZoomOutConfig
from fmaps.services import formats
from fmaps.services.descriptors import normalize_l2, spread_energies, wks
from fmaps.services.evaluation import bench_refinement, mean_geodesic_error, report_summary, report_to_frame
from fmaps.services.mesh import load_mesh
from fmaps.services.optim import initial_features, optimize_features, write_history
from fmaps.services.parallel import configure_threads
from fmaps.services.softmap import extract_pointwise, nearest_neighbors
from fmaps.services.spectral import cached_eigenbasis, eigen_cache_key, truncate
from fmaps.services.zoomout import zoomout

settings = get_settings()
logger = logging.getLogger("fmaps")

WKS_EIGENFUNCTIONS = 128


def _parse_list(text: str, kind=float) -> list:
    try:
        return [kind(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from e


# ============ Parser ============

BENCH_SIZES = [5000, 20000, 100000]
BENCH_REPS = 3


def _from_settings(name: str) -> str:
    return f"(default: %(default)s, set by FMAPS_{name})"


def _add_zoomout_flags(parser: argparse.ArgumentParser, mode: Optional[str] = "hard", sigma_setting: str = "SIGMA") -> None:
    parser.add_argument("--k-init", type=int, default=settings.K_INIT,
                        help=f"initial spectral size {_from_settings('K_INIT')}")
    parser.add_argument("--k-final", type=int, default=settings.K_FINAL,
                        help=f"final spectral size {_from_settings('K_FINAL')}")
    parser.add_argument("--step", type=int, default=settings.STEP,
                        help=f"spectral size increment per iteration {_from_settings('STEP')}")
    parser.add_argument("--sigma", type=float, default=getattr(settings, sigma_setting),
                        help=f"soft map blur, used in soft mode {_from_settings(sigma_setting)}")
    if mode is not None:
        parser.add_argument("--mode", choices=[m.value for m in RefineMode], default=mode,
                            help="nearest-neighbor (hard) or soft-map refinement (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmaps", description=settings.APP_NAME,
        epilog="Defaults marked FMAPS_<NAME> come from config.Settings and can be overridden "
               "in the environment or in .env.",
    )
    parser.add_argument("--seed", type=int, default=settings.SEED,
                        help=f"seed for all randomness {_from_settings('SEED')}")
    parser.add_argument("--threads", type=int, default=settings.THREADS,
                        help=f"worker threads, 0 = one per core {_from_settings('THREADS')}")
    parser.add_argument("--cache-dir", default=settings.CACHE_DIR,
                        help=f"eigen-cache directory {_from_settings('CACHE_DIR')}")
    parser.add_argument("--eigen-count", type=int, default=settings.EIGEN_COUNT,
                        help=f"eigenpairs computed per shape {_from_settings('EIGEN_COUNT')}")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL,
                        help=f"logging level {_from_settings('LOG_LEVEL')}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", help="compute and cache a mesh eigenbasis")
    p.add_argument("--mesh", required=True, help="OFF, OBJ or PLY triangle mesh")
    p.add_argument("--k", type=int, default=None, help="eigenpairs to compute (default: --eigen-count)")
    p.add_argument("--out", required=True, help="cache directory to write into")

    p = sub.add_parser("match", help="WKS initialization followed by ZoomOut")
    p.add_argument("--src", required=True, help="shape S1, the codomain of the vertex map")
    p.add_argument("--tgt", required=True, help="shape S2, one output line per vertex")
    p.add_argument("--out", required=True, help="output vertex map")
    p.add_argument("--fmap-out", help="also write the final functional map")
    p.add_argument("--trace-dir", help="write every intermediate functional map here")
    p.add_argument("--wks-count", type=int, default=settings.WKS_COUNT,
                   help=f"WKS descriptors {_from_settings('WKS_COUNT')}")
    _add_zoomout_flags(p)

    p = sub.add_parser("refine", help="ZoomOut from an existing vertex map")
    p.add_argument("--src", required=True, help="shape S1, the codomain of the vertex map")
    p.add_argument("--tgt", required=True, help="shape S2, one output line per vertex")
    p.add_argument("--init-map", required=True, help="initial S2 -> S1 vertex map")
    p.add_argument("--out", required=True, help="output vertex map")
    p.add_argument("--fmap-out", help="also write the final functional map")
    p.add_argument("--trace-dir", help="write every intermediate functional map here")
    _add_zoomout_flags(p)

    p = sub.add_parser("optimize", help="optimize per-vertex features through Differentiable ZoomOut")
    p.add_argument("--src", required=True, help="shape S1")
    p.add_argument("--tgt", required=True, help="shape S2")
    p.add_argument("--out-prefix", required=True, help="prefix of the feature, map and loss files")
    p.add_argument("--steps", type=int, default=settings.OPTIM_STEPS,
                   help=f"Adam steps {_from_settings('OPTIM_STEPS')}")
    p.add_argument("--lr", type=float, default=settings.LEARNING_RATE,
                   help=f"Adam learning rate {_from_settings('LEARNING_RATE')}")
    p.add_argument("--p", type=int, default=settings.FEATURE_DIM,
                   help=f"feature dimension, WKS energies spread over the spectrum {_from_settings('FEATURE_DIM')}")
    p.add_argument("--raw-features", action="store_true",
                   help="feed features to the soft map without scaling rows to unit length")
    p.add_argument("--stop-gradient", action="store_true", help="treat the refined map as a constant target")
    p.add_argument("--no-consist", action="store_true", help="drop the consistency loss")
    p.add_argument("--gt", help="ground-truth vertex map; prints initial and final errors")
    _add_zoomout_flags(p, mode=None, sigma_setting="OPTIM_SIGMA")

    p = sub.add_parser("eval", help="mean geodesic error and PCK of a vertex map")
    p.add_argument("--pred", required=True, help="predicted S2 -> S1 vertex map")
    p.add_argument("--gt", required=True, help="ground-truth S2 -> S1 vertex map")
    p.add_argument("--mesh", required=True, help="shape S1 the maps point into")
    p.add_argument("--pck", type=_parse_list, default=[],
                   help="comma-separated thresholds, as fractions of sqrt(area) (default: none)")
    p.add_argument("--per-vertex", help="write per-vertex errors as CSV")

    p = sub.add_parser("bench", help="time and memory of ZoomOut on synthetic spheres")
    p.add_argument("--sizes", type=lambda s: _parse_list(s, int), default=BENCH_SIZES,
                   help="comma-separated vertex counts of the synthetic spheres "
                        f"(default: {','.join(map(str, BENCH_SIZES))}, the scaling benchmark)")
    p.add_argument("--reps", type=int, default=BENCH_REPS,
                   help="timed repetitions per size, the mean is reported (default: %(default)s)")
    p.add_argument("--time-cap", type=float, default=settings.BENCH_TIME_CAP,
                   help=f"seconds allowed per size {_from_settings('BENCH_TIME_CAP')}")
    _add_zoomout_flags(p)
    return parser


def _zoomout_config(args, mode: RefineMode, normalize_features: bool = False) -> ZoomOutConfig:
    return ZoomOutConfig(
        k_init=args.k_init, k_final=args.k_final, step=args.step, sigma=args.sigma, mode=mode,
        normalize_features=normalize_features,
    )


def _job(args) -> JobSpec:
    inputs = {k: v for k, v in vars(args).items() if k in ("mesh", "src", "tgt", "init_map", "pred", "gt", "out")}
    zoom = optim = None
    if args.command in ("match", "refine", "bench"):
        zoom = _zoomout_config(args, RefineMode(args.mode))
    elif args.command == "optimize":
        consist = ConsistSchedule(start=0.0, end=0.0, ramp_steps=0) if args.no_consist else None
        zoomout = _zoomout_config(args, RefineMode.SOFT, normalize_features=not args.raw_features)
        optim = OptimConfig(
            steps=args.steps, learning_rate=args.lr, feature_dim=args.p, consist=consist,
            stop_gradient_refined=args.stop_gradient, zoomout=zoomout,
        )
    eigen_count = args.k if args.command == "precompute" and args.k is not None else args.eigen_count
    return JobSpec(
        subcommand=args.command, inputs=inputs, zoomout=zoom, optim=optim,
        eigen_count=eigen_count, seed=args.seed, threads=args.threads,
    )


# ============ Subcommands ============

def _load_pair(args, job: JobSpec):
    mesh1, mesh2 = load_mesh(args.src), load_mesh(args.tgt)
    basis1 = cached_eigenbasis(mesh1, job.eigen_count, args.cache_dir)
    basis2 = cached_eigenbasis(mesh2, job.eigen_count, args.cache_dir)
    return mesh1, mesh2, basis1, basis2


def _descriptors(basis, q: int) -> DescriptorSet:
    desc = wks(truncate(basis, min(WKS_EIGENFUNCTIONS, basis.K)), q)
    return normalize_l2(desc, basis.areas)


def _write_refinement(args, trace) -> None:
    final = trace.final_map
    if isinstance(final, ScalableSoftMap):
        final = extract_pointwise(final)
    formats.write_vertex_map(args.out, final)
    if args.fmap_out:
        formats.write_functional_map(args.fmap_out, trace.final_fmap)
    if args.trace_dir:
        trace_dir = Path(args.trace_dir)
        trace_dir.mkdir(parents=True, exist_ok=True)
        for fmap in trace.snapshots:
            formats.write_functional_map(trace_dir / f"fmap_k{fmap.k1}.txt", fmap)
    logger.info("wrote %d-vertex map to %s", final.n2, args.out)


def cmd_precompute(args, job: JobSpec) -> int:
    mesh = load_mesh(args.mesh)
    basis = cached_eigenbasis(mesh, job.eigen_count, args.out)
    print(Path(args.out) / f"{eigen_cache_key(mesh, basis.K)}.specb")
    return 0


def cmd_match(args, job: JobSpec) -> int:
    _, _, basis1, basis2 = _load_pair(args, job)
    d1, d2 = _descriptors(basis1, args.wks_count), _descriptors(basis2, args.wks_count)
    init = VertexMap(nearest_neighbors(d2.values, d1.values), n_source=basis1.n)
    trace = zoomout(init, basis1, basis2, job.zoomout)
    _write_refinement(args, trace)
    return 0


def cmd_refine(args, job: JobSpec) -> int:
    mesh1, mesh2, basis1, basis2 = _load_pair(args, job)
    init = formats.read_vertex_map(args.init_map, n_source=mesh1.n)
    if init.n2 != mesh2.n:
        raise DimensionMismatch(f"initial map has {init.n2} lines, {mesh2.name!r} has {mesh2.n} vertices")
    trace = zoomout(init, basis1, basis2, job.zoomout)
    _write_refinement(args, trace)
    return 0


def cmd_optimize(args, job: JobSpec) -> int:
    config = job.optim
    mesh1, mesh2, basis1, basis2 = _load_pair(args, job)
    q = max(args.p, settings.WKS_COUNT)
    init = tuple(spread_energies(_descriptors(basis, q), args.p) for basis in (basis1, basis2))
    result = optimize_features(basis1, basis2, init, config)

    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    formats.write_matrix(f"{prefix}_F1.fmat", result.F1)
    formats.write_matrix(f"{prefix}_F2.fmat", result.F2)
    final = extract_pointwise(result.trace.final_map)
    formats.write_vertex_map(f"{prefix}_map.txt", final)
    write_history(f"{prefix}_loss.csv", result.history)

    if args.gt:
        gt = formats.read_vertex_map(args.gt, n_source=mesh1.n)
        F1, F2 = initial_features(init, basis1, basis2, config.feature_dim, unit_rows=config.zoomout.normalize_features)
        before = VertexMap(nearest_neighbors(F2, F1), n_source=mesh1.n)
        summary = {
            "initial_mean_x100": mean_geodesic_error(before, gt, mesh1).mean_x100,
            "final_mean_x100": mean_geodesic_error(final, gt, mesh1).mean_x100,
        }
        print(json.dumps(summary))
    return 0


def cmd_eval(args, job: JobSpec) -> int:
    mesh = load_mesh(args.mesh)
    pred = formats.read_vertex_map(args.pred, n_source=mesh.n)
    gt = formats.read_vertex_map(args.gt, n_source=mesh.n)
    report = mean_geodesic_error(pred, gt, mesh, thresholds=args.pck)
    if args.per_vertex:
        report_to_frame(report).to_csv(args.per_vertex, index=False)
    print(json.dumps(report_summary(report)))
    return 0


def cmd_bench(args, job: JobSpec) -> int:
    if not args.sizes:
        raise ConfigError("bench needs at least one size")
    frame = bench_refinement(args.sizes, job.zoomout, repetitions=args.reps, time_cap=args.time_cap, seed=job.seed)
    sys.stdout.write(frame.to_csv(index=False))
    return 0


COMMANDS = {
    "precompute": cmd_precompute,
    "match": cmd_match,
    "refine": cmd_refine,
    "optimize": cmd_optimize,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def _validation_message(e: ValidationError) -> str:
    return "; ".join(err["msg"] for err in e.errors())


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        job = _job(args)
        configure_threads(job.threads)
        return COMMANDS[args.command](args, job)
    except ValidationError as e:
        print(f"{ConfigError.category}: {_validation_message(e)}", file=sys.stderr)
    except FmapsError as e:
        print(f"{e.category}: {e}", file=sys.stderr)
    except OSError as e:
        print(f"E_IO: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(run())
