"""Command-line front end.

Subcommands cover the stages (tablet, simulate, estimate, evaluate)
and the orchestrated runs (pipeline, sweep). Lengths on flags are
millimetres unless the flag name says otherwise; files store metres.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from .mesh import add_spherical_defect, generate_tablet, mesh_fingerprint, mesh_report
from .pipeline import (
    MM,
    RunConfig,
    run_pipeline,
    run_sweep,
    stage_estimate,
    stage_evaluate,
    stage_simulate,
)
from .raycast import build_bvh
from .sensor import CameraModel, CameraPose, apply_noise, cast_scene, write_cloud
from .stl import read_stl_file, write_stl_file


def _add_model_flags(p):
    p.add_argument("--res", nargs=2, type=int, default=(1280, 720), metavar=("W", "H"))
    p.add_argument("--fov-deg", nargs=2, type=float, default=(65.0, 40.0), metavar=("H", "V"))
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--noise-a", type=float, default=0.0184, help="noise scale, metres")
    p.add_argument("--noise-b", type=float, default=0.2106, help="noise growth, 1/metre")


def _model_from(args):
    return CameraModel(
        fov_h=np.deg2rad(args.fov_deg[0]), fov_v=np.deg2rad(args.fov_deg[1]),
        width=args.res[0], height=args.res[1],
        a=args.noise_a, b=args.noise_b, stride=args.stride,
    )


def cmd_tablet(args):
    mesh = generate_tablet(args.width_mm * MM, args.height_mm * MM, args.mesh_size_mm * MM)
    if args.defect_radius_mm > 0:
        mesh = add_spherical_defect(
            mesh,
            (args.defect_center_mm[0] * MM, args.defect_center_mm[1] * MM),
            args.defect_radius_mm * MM,
            protrusion=args.protrusion,
        )
    write_stl_file(mesh, args.out, format=args.format)
    print(json.dumps(mesh_report(mesh)))
    return 0


def cmd_simulate(args):
    mesh = read_stl_file(args.mesh)
    if args.pose:
        with open(args.pose) as fh:
            d = json.load(fh)
        pose = CameraPose(d["position"], d["quaternion"])
    else:
        h = np.deg2rad(args.heading_deg)
        position = args.distance_mm * MM * np.array([np.sin(h), 0.0, np.cos(h)])
        pose = CameraPose.look_at(position, (0.0, 0.0, 0.0))
    model = _model_from(args)

    params = {
        "mesh": mesh_fingerprint(mesh),
        "pose": pose.position.tolist() + pose.orientation.tolist(),
        "model": model.to_dict(),
        "seed": args.seed,
        "n_clouds": args.n_clouds,
    }
    chash = hashlib.sha256(
        json.dumps(params, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:12]

    os.makedirs(args.out, exist_ok=True)
    cast = cast_scene(build_bvh(mesh), pose, model)
    for k in range(1, args.n_clouds + 1):
        cloud = apply_noise(cast, [args.seed, k], seq=k)
        path = os.path.join(args.out, f"cloud_{k:04d}.ply")
        write_cloud(cloud, path, model=model, extra={"config_hash": chash})
        print(f"{path}: {len(cloud)} points")
    return 0


def cmd_estimate(args):
    final = stage_estimate(
        args.mesh, args.clouds, args.out,
        sigma0_mm=args.sigma0_mm, border_mm=args.border_mm,
        mode=args.mode, correspondence=args.correspondence,
        icp=args.icp == "on",
    )
    print(final)
    return 0


def cmd_evaluate(args):
    report = stage_evaluate(
        args.state, args.truth_mesh, args.nominal_mesh,
        border_mm=args.border_mm, out_path=args.out,
    )
    print(f"selected faces: {report.n_selected}")
    print(f"final RMSE: {report.final_rmse / MM:.4f} mm")
    print(f"abs error: {report.abs_error_mean / MM:.4f} +- {report.abs_error_std / MM:.4f} mm")
    print(f"mean posterior std: {report.posterior_std_mean / MM:.4f} mm")
    print(f"flagged faces: {int(np.sum(report.flags))}")
    return 0


def _config_from(args):
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for flag, field in [
        ("seed", "master_seed"), ("n_clouds", "n_clouds"),
        ("distance_mm", None), ("heading_deg", "heading_deg"),
        ("mesh_size_mm", "mesh_size_mm"), ("stride", "stride"),
        ("mode", "mode"), ("correspondence", "correspondence"), ("icp", None),
    ]:
        v = getattr(args, flag, None)
        if v is None:
            continue
        if flag == "distance_mm":
            overrides["distance_m"] = v * MM
        elif flag == "icp":
            overrides["icp"] = v == "on"
        else:
            overrides[field] = v
    return dataclasses.replace(config, **overrides)


def cmd_pipeline(args):
    config = _config_from(args)
    report = run_pipeline(config, out_dir=args.out, keep_clouds=args.keep_clouds)
    print(f"config hash: {report.config['config_hash']}")
    print(f"selected faces: {report.n_selected}")
    if report.rmse_trace:
        print(f"RMSE: {report.rmse_trace[0] / MM:.4f} -> {report.final_rmse / MM:.4f} mm "
              f"over {len(report.rmse_trace)} clouds")
    else:
        print(f"prior-only RMSE: {report.final_rmse / MM:.4f} mm")
    print(f"abs error: {report.abs_error_mean / MM:.4f} +- {report.abs_error_std / MM:.4f} mm")
    print(f"mean posterior std: {report.posterior_std_mean / MM:.4f} mm")
    print(f"flagged faces: {int(np.sum(report.flags))}")
    return 0


def cmd_sweep(args):
    config = _config_from(args)
    values = [v * MM for v in args.values] if args.axis == "distance" else (
        [int(v) for v in args.values] if args.axis == "seed" else list(args.values)
    )
    result = run_sweep(config, args.axis, values, out_dir=args.out)
    for row in result["rows"]:
        print(f"{args.axis}={row[args.axis]}: final RMSE {row['final_rmse'] / MM:.4f} mm")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="meshfusion",
                                description="surface-deviation estimation pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tablet", help="generate a tablet STL, optionally with a defect")
    t.add_argument("--width-mm", type=float, default=160.0)
    t.add_argument("--height-mm", type=float, default=100.0)
    t.add_argument("--mesh-size-mm", type=float, default=5.0)
    t.add_argument("--defect-radius-mm", type=float, default=0.0)
    t.add_argument("--defect-center-mm", nargs=2, type=float, default=(0.0, 0.0))
    t.add_argument("--protrusion", choices=("outward", "inward"), default="outward")
    t.add_argument("--format", choices=("binary", "ascii"), default="binary")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tablet)

    s = sub.add_parser("simulate", help="synthesize point clouds from a truth mesh")
    s.add_argument("--mesh", required=True)
    s.add_argument("--pose", help="JSON file {position, quaternion}; overrides distance/heading")
    s.add_argument("--distance-mm", type=float, default=500.0)
    s.add_argument("--heading-deg", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-clouds", type=int, default=1)
    _add_model_flags(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="fuse stored clouds against a nominal mesh")
    e.add_argument("--mesh", required=True)
    e.add_argument("--clouds", required=True)
    e.add_argument("--sigma0-mm", type=float, default=50.0)
    e.add_argument("--border-mm", type=float, default=6.0)
    e.add_argument("--mode", choices=("info", "covariance"), default="info")
    e.add_argument("--correspondence", choices=("ray", "closest-point"),
                   default="closest-point")
    e.add_argument("--icp", choices=("on", "off"), default="off")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", help="score a checkpoint against ground truth")
    v.add_argument("--state", required=True)
    v.add_argument("--truth-mesh", required=True)
    v.add_argument("--nominal-mesh", required=True)
    v.add_argument("--border-mm", type=float, default=6.0)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_evaluate)

    def add_run_flags(q):
        q.add_argument("--config", help="TOML or JSON RunConfig file")
        q.add_argument("--seed", type=int)
        q.add_argument("--n-clouds", type=int)
        q.add_argument("--distance-mm", type=float)
        q.add_argument("--heading-deg", type=float)
        q.add_argument("--mesh-size-mm", type=float)
        q.add_argument("--stride", type=int)
        q.add_argument("--mode", choices=("info", "covariance"))
        q.add_argument("--correspondence", choices=("ray", "closest-point"))
        q.add_argument("--icp", choices=("on", "off"))

    r = sub.add_parser("pipeline", help="full run: meshes, clouds, estimate, evaluate")
    add_run_flags(r)
    r.add_argument("--keep-clouds", action="store_true")
    r.add_argument("--out")
    r.set_defaults(func=cmd_pipeline)

    w = sub.add_parser("sweep", help="repeat the pipeline along one axis")
    add_run_flags(w)
    w.add_argument("--axis", choices=("distance", "heading", "seed"), required=True)
    w.add_argument("--values", nargs="+", type=float, required=True,
                   help="distance in mm, heading in degrees, or integer seeds")
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
