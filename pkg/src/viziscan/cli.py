"""Command-line surface: scan, augment, reconstruct, eval, pipeline.

Every command writes one JSON run manifest next to its primary output with
the resolved parameters, input digests, and the (recorded, replayable)
seed. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import secrets
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from . import __version__
from .augment import (AugMode, ApPlacement, AugmentConfig, assemble_channels,
                      characteristic_distance, local_knn_distance, save_augmented)
from .mesh import load_mesh, normalize_unit_cube, save_mesh
from .metrics import EvalConfig, evaluate
from .reconstruct import MIN_RESOLUTION, reconstruct_pipeline
from .scanner import ScanConfig, decimate_voxel, load_cloud, save_cloud, scan
from .util import derive_seed, sha256_file

_MODE_FLAGS = {
    "raw": AugMode.RAW,
    "sv": AugMode.SV,
    "ap": AugMode.AP,
    "svap": AugMode.SVAP,
    "sensor-pos": AugMode.SENSOR_POS,
    "unnorm-sv": AugMode.UNNORM_SV,
}


def _resolve_seed(seed: int | None) -> int:
    # drawn seeds are recorded in the manifest so every run is replayable
    return secrets.randbits(32) if seed is None else int(seed)


def _write_manifest(primary_out: str, command: str, params: dict,
                    inputs: list, outputs: list, seconds: float) -> str:
    path = os.path.splitext(primary_out)[0] + ".manifest.json"
    doc = {
        "command": command,
        "parameters": params,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "timing": {"seconds": seconds, "written_unix": time.time()},
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    return path


def _parse_factors(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated factors, got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_auto(text: str) -> float | None:
    if text.upper() == "AUTO":
        return None
    return float(text)


# -- commands -----------------------------------------------------------------


def cmd_scan(args) -> int:
    t0 = time.perf_counter()
    seed = _resolve_seed(args.seed)
    mesh = load_mesh(args.mesh)
    frame = None
    if args.normalize:
        mesh, frame = normalize_unit_cube(mesh)
    config = ScanConfig(n_points=args.n_points, n_sensors=args.n_scanners,
                        noise_sigma=args.noise, sphere_radius_factors=args.radius_factors,
                        hemisphere_mode=args.hemisphere, seed=seed)
    cloud = scan(mesh, config, frame=frame)
    if args.decimate is not None:
        cloud = decimate_voxel(cloud, args.decimate)
    save_cloud(args.out, cloud)
    params = {"mesh": str(args.mesh), "n_points": args.n_points, "n_scanners": args.n_scanners,
              "noise": args.noise, "radius_factors": list(args.radius_factors),
              "hemisphere": args.hemisphere, "decimate": args.decimate,
              "normalize": args.normalize, "seed": seed,
              "frame": frame.as_dict() if frame else None,
              "n_points_written": len(cloud)}
    _write_manifest(args.out, "scan", params, [args.mesh], [args.out],
                    time.perf_counter() - t0)
    return 0


def cmd_augment(args) -> int:
    t0 = time.perf_counter()
    cloud = load_cloud(args.input)
    mode = _MODE_FLAGS[args.mode]
    config = AugmentConfig(mode=mode, ap_distance_multiplier=args.ap_dist_mult,
                           ap_placement=ApPlacement(args.ap_placement.upper()),
                           grazing_radius=args.grazing_radius, local_knn=args.ap_local_knn)
    d = None
    if mode in (AugMode.AP, AugMode.SVAP):
        d = (local_knn_distance(cloud, config.local_knn) if config.local_knn
             else characteristic_distance(cloud))
    apc = assemble_channels(cloud, config, d=d)

    lineage = None
    source_manifest = os.path.splitext(str(args.input))[0] + ".manifest.json"
    if os.path.isfile(source_manifest):
        with open(source_manifest) as f:
            lineage = json.load(f).get("parameters")
    save_augmented(args.out, apc, sidecar_extra={
        "ap_distance_multiplier": args.ap_dist_mult,
        "ap_placement": config.ap_placement.value,
        "grazing_radius": args.grazing_radius,
        "local_knn": args.ap_local_knn,
        "source": str(args.input),
        "source_sha256": sha256_file(args.input),
        "seed_lineage": lineage,
    })
    params = {"input": str(args.input), "mode": args.mode, "ap_dist_mult": args.ap_dist_mult,
              "ap_placement": args.ap_placement, "grazing_radius": args.grazing_radius,
              "ap_local_knn": args.ap_local_knn,
              "rows": int(len(apc.rows)), "width": int(apc.width)}
    _write_manifest(args.out, "augment", params, [args.input], [args.out],
                    time.perf_counter() - t0)
    return 0


def cmd_reconstruct(args) -> int:
    t0 = time.perf_counter()
    cloud = load_cloud(args.input)
    mesh, report = reconstruct_pipeline(cloud, args.method, resolution=args.res,
                                        truncation=args.truncation, bandwidth=args.bandwidth)
    save_mesh(args.out, mesh)
    report_path = os.path.splitext(str(args.out))[0] + ".report.json"
    with open(report_path, "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    params = {"input": str(args.input), "method": args.method, "res": args.res,
              "truncation": args.truncation, "bandwidth": args.bandwidth,
              "n_triangles": mesh.n_triangles}
    _write_manifest(args.out, "reconstruct", params, [args.input], [args.out, report_path],
                    time.perf_counter() - t0)
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    seed = _resolve_seed(args.seed)
    gt = load_mesh(args.gt)
    pred = load_mesh(args.pred)
    report = evaluate(gt, pred, EvalConfig(n_volume_samples=args.samples,
                                           n_surface_samples=args.samples, seed=seed))
    with open(args.out, "w") as f:
        f.write(report.to_json())
    params = {"gt": str(args.gt), "pred": str(args.pred),
              "samples": args.samples, "seed": seed}
    _write_manifest(args.out, "eval", params, [args.gt, args.pred], [args.out],
                    time.perf_counter() - t0)
    return 0


def _pipeline_one(task: tuple) -> list:
    mesh_path, outdir, options = task
    os.makedirs(outdir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(mesh_path))[0]
    seed = options["mesh_seed"]

    mesh, frame = normalize_unit_cube(load_mesh(mesh_path))
    gt_path = os.path.join(outdir, "gt.ply")
    save_mesh(gt_path, mesh)
    gt = load_mesh(gt_path)  # evaluate against the file a standalone run would see

    config = ScanConfig(n_points=options["n_points"], n_sensors=options["n_scanners"],
                        noise_sigma=options["noise"], hemisphere_mode=options["hemisphere"],
                        seed=seed)
    cloud = scan(mesh, config, frame=frame)
    save_cloud(os.path.join(outdir, "scan.ply"), cloud)

    mode = _MODE_FLAGS[options["mode"]]
    d = None
    if mode in (AugMode.AP, AugMode.SVAP):
        d = characteristic_distance(cloud)
    apc = assemble_channels(cloud, AugmentConfig(mode=mode), d=d)
    save_augmented(os.path.join(outdir, "augmented.ply"), apc,
                   sidecar_extra={"source": "scan.ply", "seed_lineage": {"seed": seed}})

    rows = []
    for method in ("carve", "density"):
        recon, report = reconstruct_pipeline(cloud, method, resolution=options["res"])
        save_mesh(os.path.join(outdir, f"{method}.ply"), recon)
        with open(os.path.join(outdir, f"{method}.report.json"), "w") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
        mreport = evaluate(gt, recon, EvalConfig(n_volume_samples=options["samples"],
                                                 n_surface_samples=options["samples"],
                                                 seed=seed))
        with open(os.path.join(outdir, f"eval_{method}.json"), "w") as f:
            f.write(mreport.to_json())
        rows.append([stem, method,
                     "" if mreport.iou is None else repr(mreport.iou),
                     repr(mreport.chamfer_x100), repr(mreport.normal_consistency)])
    return rows


def cmd_pipeline(args) -> int:
    t0 = time.perf_counter()
    seed = _resolve_seed(args.seed)
    mesh_files = sorted(
        os.path.join(args.meshes, f) for f in os.listdir(args.meshes)
        if f.lower().endswith((".ply", ".obj")))
    if not mesh_files:
        print(f"no .ply/.obj meshes found in {args.meshes}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)

    tasks = []
    for i, path in enumerate(mesh_files):
        stem = os.path.splitext(os.path.basename(path))[0]
        options = {"n_points": args.n_points, "n_scanners": args.n_scanners,
                   "noise": args.noise, "hemisphere": args.hemisphere,
                   "mode": args.mode, "res": args.res, "samples": args.samples,
                   "mesh_seed": derive_seed(seed, i)}
        tasks.append((path, os.path.join(args.out, stem), options))

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            all_rows = list(pool.map(_pipeline_one, tasks))
    else:
        all_rows = [_pipeline_one(t) for t in tasks]

    summary = os.path.join(args.out, "summary.csv")
    with open(summary, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mesh", "method", "iou", "chamfer_x100", "normal_consistency"])
        for rows in all_rows:
            writer.writerows(rows)
    params = {"meshes": str(args.meshes), "n_points": args.n_points,
              "n_scanners": args.n_scanners, "noise": args.noise,
              "hemisphere": args.hemisphere, "mode": args.mode, "res": args.res,
              "samples": args.samples, "seed": seed, "jobs": args.jobs}
    _write_manifest(summary, "pipeline", params, mesh_files, [summary],
                    time.perf_counter() - t0)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viziscan",
                                     description="Virtual scanning, visibility augmentation, "
                                                 "carving reconstruction, and mesh evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="virtually scan a mesh into a sensor-aware point cloud")
    p.add_argument("--mesh", required=True)
    p.add_argument("--n-points", type=int, default=3000)
    p.add_argument("--n-scanners", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.005)
    p.add_argument("--radius-factors", type=_parse_factors, default=(1.5, 2.5))
    p.add_argument("--hemisphere", action="store_true")
    p.add_argument("--decimate", type=float, default=None, metavar="VOXEL")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("augment", help="add visibility channels to a sensor cloud")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mode", choices=sorted(_MODE_FLAGS), required=True)
    p.add_argument("--ap-dist-mult", type=float, default=1.0)
    p.add_argument("--ap-placement", choices=["symmetric", "midpoint", "grazing"],
                   default="symmetric")
    p.add_argument("--grazing-radius", type=float, default=None)
    p.add_argument("--ap-local-knn", type=int, default=0, metavar="K",
                   help="per-point characteristic distance from K nearest neighbors (0 = global)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("reconstruct", help="carve or density-reconstruct a sensor cloud")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--method", choices=["carve", "density"], default="carve")
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--truncation", type=_parse_auto, default=None, metavar="AUTO|LEN")
    p.add_argument("--bandwidth", type=_parse_auto, default=None, metavar="AUTO|LEN")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="IoU / Chamfer x100 / normal consistency")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="scan -> augment -> reconstruct -> eval over a mesh directory")
    p.add_argument("--meshes", required=True, help="directory of .ply/.obj meshes")
    p.add_argument("--out", required=True)
    p.add_argument("--n-points", type=int, default=3000)
    p.add_argument("--n-scanners", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.005)
    p.add_argument("--hemisphere", action="store_true")
    p.add_argument("--mode", choices=sorted(_MODE_FLAGS), default="svap")
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "res", None) is not None and args.res < MIN_RESOLUTION:
        parser.error(f"--res must be >= {MIN_RESOLUTION}")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"viziscan {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
