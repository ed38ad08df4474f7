"""Operator entry points: build stores, query scans, run benchmarks/sims.

Stdout carries machine-parseable JSON (one object per line for sweeps);
diagnostics go to stderr. Exit codes: 0 success, 1 runtime failure,
2 usage/validation. Commands are deterministic given flags and seeds,
except for wall-clock timing fields.
"""
from __future__ import annotations

import argparse
import itertools
import json
import sys
import time

import numpy as np

from ._kernels import default_backend
from .builder import Anchor, build_all, build_squash
from .errors import ConfigurationError, SquashError, ValidationError
from .featurizer import FeaturizerSpec, load_fcn_weights
from .geometry import load_poses_csv, transform_points
from .pointcloud import PointCloud, load_hpc, save_hpc
from .query import load_kernel, query, query_latency_probe, random_kernel
from .scan_model import BuildConfig, load_route
from .sim import NoiseModel, SceneSpec, generate_scene, run_ephemerality
from .store import SquashStore, load_store, save_store, serialize_record

_CFG_FLAGS = {
    "delta-m": ("delta_m", float),
    "kernel-size": ("kernel_size", int),
    "d-history": ("d_history", int),
    "t-max": ("t_max", int),
    "anchor-spacing-m": ("anchor_spacing_m", float),
    "h-start-m": ("h_start_m", float),
    "h-end-m": ("h_end_m", float),
    "frame-stride-m": ("frame_stride_m", float),
}

_SWEEPABLE = dict(_CFG_FLAGS)
_SWEEPABLE.update(
    {
        "loc-sigma-m": ("loc_sigma_m", float),
        "bearing-sigma-deg": ("bearing_sigma_deg", float),
        "sensor-noise-m": ("sensor_noise_m", float),
        "anchor-offset-m": ("anchor_offset_m", float),
        "seed": ("seed", int),
        "n-points": ("n_points", int),
    }
)


def _add_cfg_flags(parser: argparse.ArgumentParser) -> None:
    defaults = BuildConfig()
    for flag, (field, typ) in _CFG_FLAGS.items():
        parser.add_argument(
            f"--{flag}", type=typ, default=getattr(defaults, field), dest=field
        )


def _cfg_from_args(args) -> BuildConfig:
    return BuildConfig(**{field: getattr(args, field) for field, _ in _CFG_FLAGS.values()})


def _featurizer_from_args(args) -> FeaturizerSpec:
    if args.featurizer == "identity":
        return FeaturizerSpec.identity()
    if args.featurizer == "stats":
        return FeaturizerSpec.stats()
    if not args.fcn_weights:
        raise ValidationError("--featurizer fcn requires --fcn-weights PATH")
    return FeaturizerSpec.fcn(load_fcn_weights(args.fcn_weights))


def _sweep_combos(specs: list[str] | None):
    """Cartesian product of --sweep assignments; one empty assignment when
    no sweeps were requested."""
    sweeps = []
    for spec in specs or []:
        key, _, values = spec.partition("=")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ValidationError(f"--sweep expects KEY=V1,V2,..., got {spec!r}")
        sweeps.append((key.strip(), vals))
    if not sweeps:
        yield {}
        return
    keys = [k for k, _ in sweeps]
    for combo in itertools.product(*[vals for _, vals in sweeps]):
        yield dict(zip(keys, combo))


def _apply_sweep(args, assignment: dict) -> None:
    for key, raw in assignment.items():
        if key not in _SWEEPABLE or not hasattr(args, _SWEEPABLE[key][0]):
            raise ValidationError(f"--sweep key {key!r} is not sweepable here")
        field, typ = _SWEEPABLE[key]
        setattr(args, field, typ(raw))


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _bench_record(args, cfg: BuildConfig):
    """Identity-featurized record of the benchmark scene at this config."""
    scene = generate_scene(SceneSpec(seed=args.seed))
    reference = scene.traversals[-1]
    arc = float(scene.current_pose.translation[0] - reference.positions()[0, 0])
    anchor = Anchor(arclength_m=arc, position=reference.position_at(arc))
    return build_squash(scene.traversals, anchor, cfg, FeaturizerSpec.identity())


def cmd_build(args) -> int:
    t0 = time.perf_counter()
    route_id, traversals = load_route(args.manifest_dir)
    cfg = _cfg_from_args(args)
    spec = _featurizer_from_args(args)
    records = build_all(traversals, cfg, spec, backend=args.backend)
    store = SquashStore(records, route_id=route_id)
    save_store(store, args.out_store)
    report = store.storage_report()
    _emit(
        {
            "command": "build",
            "route_id": route_id,
            "anchors": len(records),
            "traversals": len(traversals),
            "n_voxels": int(sum(r.grid.n for r in records)),
            "bytes": report["total_bytes"],
            "wall_time_s": time.perf_counter() - t0,
            "out_store": str(args.out_store),
        }
    )
    return 0


def cmd_query(args) -> int:
    store = load_store(args.store_dir)
    scan = load_hpc(args.scan_file)
    poses = load_poses_csv(args.pose_file)
    if len(poses) != 1:
        raise ValidationError(f"{args.pose_file}: expected exactly one pose row")
    _, pose = poses[0]
    kernel = load_kernel(args.kernel_file)
    record, distance = store.retrieve(pose.translation)
    if distance > args.max_anchor_distance_m:
        print(
            f"warning: nearest anchor is {distance:.2f} m away "
            f"(threshold {args.max_anchor_distance_m} m); history may be stale",
            file=sys.stderr,
        )
    global_scan = transform_points(scan, pose)
    t0 = time.perf_counter()
    endowed = query(global_scan, record, kernel, backend=args.backend)
    query_s = time.perf_counter() - t0
    # The output keeps the sensor-frame input coordinates; history channels
    # are appended after the base channels.
    out_cloud = PointCloud(
        scan.points, np.concatenate([scan.channels, endowed.history], axis=1)
    )
    save_hpc(out_cloud, args.out_file)
    _emit(
        {
            "command": "query",
            "n_points": scan.n,
            "base_channels": scan.c,
            "d_history": endowed.d_history,
            "anchor_arclength_m": record.anchor_arclength,
            "retrieval_distance_m": distance,
            "query_ms": query_s * 1e3,
            "out_file": str(args.out_file),
        }
    )
    return 0


def cmd_bench(args) -> int:
    for assignment in _sweep_combos(args.sweep):
        _apply_sweep(args, assignment)
        cfg = _cfg_from_args(args)
        record = _bench_record(args, cfg)
        if args.kernel:
            kernel = load_kernel(args.kernel)
        else:
            kernel = random_kernel(
                cfg.kernel_size, record.grid.d, cfg.d_history, seed=args.seed
            )
        backends = ["numba", "numpy"] if args.backend == "both" else [args.backend]
        for backend in backends:
            stats = query_latency_probe(
                [args.n_points], record, kernel,
                repetitions=args.repetitions, seed=args.seed, backend=backend,
            )[0]
            stats.update(
                {
                    "command": "bench",
                    "seed": args.seed,
                    "d_history": cfg.d_history,
                    "kernel_size": cfg.kernel_size,
                    "store_bytes": len(serialize_record(record)),
                }
            )
            _emit(stats)
    return 0


def cmd_sim(args) -> int:
    for assignment in _sweep_combos(args.sweep):
        _apply_sweep(args, assignment)
        cfg = _cfg_from_args(args)
        spec = _featurizer_from_args(args)
        for seed in range(args.seed, args.seed + args.n_seeds):
            scene = generate_scene(
                SceneSpec(seed=seed, sensor_noise_m=args.sensor_noise_m)
            )
            noise = NoiseModel(
                loc_sigma_m=args.loc_sigma_m,
                bearing_sigma_deg=args.bearing_sigma_deg,
                seed=seed,
            )
            report = run_ephemerality(
                scene, cfg, spec, noise,
                anchor_offset_m=args.anchor_offset_m, backend=args.backend,
                kernel=load_kernel(args.kernel) if args.kernel else None,
                perturb_past=args.perturb_past,
            )
            report["command"] = "sim"
            _emit(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="squash",
        description="Geo-indexed sparse history-feature store: build, query, benchmark.",
    )
    parser.add_argument(
        "--backend",
        choices=["auto", "numba", "numpy", "both"],
        default="auto",
        help="kernel backend; 'both' is valid for bench only",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="precompute one record per anchor")
    p_build.add_argument("manifest_dir")
    p_build.add_argument("out_store")
    _add_cfg_flags(p_build)
    p_build.add_argument("--featurizer", choices=["identity", "stats", "fcn"],
                         default="identity")
    p_build.add_argument("--fcn-weights", default=None)
    p_build.set_defaults(fn=cmd_build)

    p_query = sub.add_parser("query", help="endow a scan with history features")
    p_query.add_argument("store_dir")
    p_query.add_argument("scan_file")
    p_query.add_argument("pose_file")
    p_query.add_argument("kernel_file", metavar="kernel")
    p_query.add_argument("out_file")
    p_query.add_argument("--max-anchor-distance-m", type=float, default=5.0)
    p_query.set_defaults(fn=cmd_query)

    p_bench = sub.add_parser("bench", help="query latency / storage benchmark")
    _add_cfg_flags(p_bench)
    p_bench.add_argument("--n-points", type=int, default=100_000)
    p_bench.add_argument("--repetitions", type=int, default=10)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--kernel", default=None, metavar="PATH",
                         help=".hqk query kernel (default: seeded random)")
    p_bench.add_argument("--sweep", action="append", metavar="KEY=V1,V2,...")
    p_bench.set_defaults(fn=cmd_bench)

    p_sim = sub.add_parser("sim", help="ephemerality proxy benchmark")
    _add_cfg_flags(p_sim)
    p_sim.add_argument("--featurizer", choices=["identity", "stats", "fcn"],
                       default="identity")
    p_sim.add_argument("--fcn-weights", default=None)
    p_sim.add_argument("--loc-sigma-m", type=float, default=0.0)
    p_sim.add_argument("--bearing-sigma-deg", type=float, default=0.0)
    p_sim.add_argument("--sensor-noise-m", type=float, default=0.0)
    p_sim.add_argument("--anchor-offset-m", type=float, default=0.0)
    p_sim.add_argument("--perturb-past", action="store_true",
                       help="apply localization noise to past traversals too")
    p_sim.add_argument("--kernel", default=None, metavar="PATH",
                       help=".hqk query kernel (default: averaging kernel)")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--n-seeds", type=int, default=1)
    p_sim.add_argument("--sweep", action="append", metavar="KEY=V1,V2,...")
    p_sim.set_defaults(fn=cmd_sim)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.backend == "auto":
        args.backend = default_backend()
    if args.backend == "both" and args.command != "bench":
        parser.error("--backend both is only valid for bench")
    try:
        return args.fn(args)
    except (ValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SquashError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
