"""Full inspection run: fuse clouds into per-face deviations, judge them.

Two runs of the same scene tell the whole story. With the reference
noise model (about 20 mm per point at 0.5 m) the filter drives the
plate-wide RMSE from the 50 mm prior to about a millimetre, but the
5 mm dome is invisible: closest-point correspondences smear each
point over a noise-sized neighborhood, so a defect far below the
per-point noise is averaged away, and no face is flagged. With a
ten-times-better camera the same pipeline nails the dome and flags
the defect faces. Detectability is set by the sensor, not by the
number of clouds. The chi-square consistency alarm trips in both
defective runs (the dome breaks the flat-plate model) and stays
quiet on a defect-free control plate.
"""

import dataclasses
import os

import numpy as np

from meshfusion.evaluation import reference_state
from meshfusion.pipeline import RunConfig, run_pipeline
from meshfusion.raycast import build_bvh

MM = 1e-3
OUT = os.path.join(os.path.dirname(__file__), "out", "03_estimate_and_evaluate")

GLYPHS = " .:-=+*#%@"


def ascii_map(mesh, values, keep, n_cols=26, n_rows=10, scale=None):
    c = mesh.face_centroids[keep]
    values = values[keep]
    lo, hi = c[:, :2].min(axis=0), c[:, :2].max(axis=0)
    cols = np.clip(((c[:, 0] - lo[0]) / (hi[0] - lo[0]) * n_cols).astype(int), 0, n_cols - 1)
    rows = np.clip(((hi[1] - c[:, 1]) / (hi[1] - lo[1]) * n_rows).astype(int), 0, n_rows - 1)
    acc = np.zeros((n_rows, n_cols))
    cnt = np.zeros((n_rows, n_cols))
    np.add.at(acc, (rows, cols), values)
    np.add.at(cnt, (rows, cols), 1)
    img = acc / np.maximum(cnt, 1)
    scale = scale or (np.abs(img).max() or 1.0)
    out = []
    for r in range(n_rows):
        idx = np.clip(np.abs(img[r]) / scale * (len(GLYPHS) - 1), 0, len(GLYPHS) - 1)
        out.append("".join(GLYPHS[int(i)] for i in idx))
    return out


def describe(tag, cfg, report, x_ref):
    x_hat = x_ref + report.per_face_error
    lo, hi = report.diagnostics["chi2_band"]
    on_dome = report.flags & (x_ref > 1 * MM)
    print(f"\n[{tag}] sigma per point ~ {cfg.a * np.exp(cfg.b * 0.5) * 1e3:.1f} mm")
    print(f"  final rmse        {report.final_rmse * 1e3:7.3f} mm "
          f"(prior was {cfg.sigma0_mm:.0f} mm)")
    print(f"  mean posterior sd {report.posterior_std_mean * 1e3:7.3f} mm")
    print(f"  consistency       {report.normalized_error_sq:8.1f} in "
          f"[{lo:.1f}, {hi:.1f}] -> {report.diagnostics['consistent']}")
    print(f"  flags             {int(report.flags.sum())} total, "
          f"{int(on_dome.sum())} on the defect")
    return x_hat


def main():
    cfg = RunConfig(resolution=(640, 360), n_clouds=30, master_seed=1)
    print(f"config hash {cfg.config_hash()}, mode {cfg.mode}, "
          f"{cfg.n_clouds} clouds at {cfg.resolution[0]}x{cfg.resolution[1]}")

    report = run_pipeline(cfg, out_dir=OUT)

    print("\niteration  rmse over selected faces")
    for k, v in enumerate(report.rmse_trace, start=1):
        if k % 3:
            continue
        bar = "#" * int(v / report.rmse_trace[0] * 40)
        print(f"  {k:3d}  {v * 1e3:7.3f} mm  {bar}")
    print(f"selected {report.n_selected} of {len(report.per_face_error)} faces "
          f"({report.diagnostics['mask_excluded_faces']} border-excluded)")

    nominal, truth = cfg.build_meshes()
    x_ref, _ = reference_state(nominal, truth, build_bvh(truth))

    x_hat = describe("reference camera", cfg, report, x_ref)

    sharp_cfg = dataclasses.replace(cfg, a=cfg.a / 10)
    sharp = run_pipeline(sharp_cfg)
    x_sharp = describe("10x better camera", sharp_cfg, sharp, x_ref)

    # the consistency alarm is doing its job above: the dome violates
    # the flat-plate model, so the normalized error leaves the band in
    # both runs. On a defect-free plate it stays quiet.
    clean_cfg = dataclasses.replace(cfg, defect_radius_mm=0.0)
    clean = run_pipeline(clean_cfg)
    lo, hi = clean.diagnostics["chi2_band"]
    print(f"\n[defect-free control] consistency "
          f"{clean.normalized_error_sq:8.1f} in [{lo:.1f}, {hi:.1f}] -> "
          f"{clean.diagnostics['consistent']}, flags {int(clean.flags.sum())}")

    near = np.all(np.abs(nominal.face_centroids[:, :2]) < 15 * MM, axis=1)
    scale = np.abs(x_ref[near]).max()
    print(f"\ncentral 15 mm (shared scale {scale * 1e3:.2f} mm): "
          "truth | reference camera | 10x camera")
    panels = [ascii_map(nominal, v, near, scale=scale) for v in (x_ref, x_hat, x_sharp)]
    for rows in zip(*panels):
        print("  " + "   ".join(rows))

    # info and covariance modes are the same estimator; a small config
    # keeps the dense-form run cheap
    tiny = RunConfig(resolution=(192, 108), n_clouds=4, master_seed=1)
    a = run_pipeline(tiny)
    b = run_pipeline(dataclasses.replace(tiny, mode="covariance"))
    gap = np.abs(a.per_face_error - b.per_face_error).max()
    print(f"\ncovariance-mode run agrees with info mode to {gap:.2e} m")

    print(f"artifacts under {OUT}")
    for name in sorted(os.listdir(OUT)):
        print(f"  {name}")


if __name__ == "__main__":
    main()
