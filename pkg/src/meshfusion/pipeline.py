"""End-to-end runs: tablet, clouds, estimation, evaluation, sweeps.

A RunConfig pins every knob of a run; its canonical-JSON hash is
embedded in every artifact (mesh header, cloud sidecar, checkpoint,
report) so artifacts from different configurations cannot be mixed
silently. Runs are deterministic: cloud k draws its noise from the
seed sequence (master_seed, k).

Units at this layer follow the reporting convention: millimetres in
config fields suffixed _mm, metres elsewhere. Everything is converted
to metres before touching the library.
"""

import dataclasses
import glob
import hashlib
import json
import os

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .estimator import (
    EstimatorState,
    assemble_batch,
    compress_batch,
    info_update,
    load_state,
    recover,
    rwls_update,
    save_state,
)
from .evaluation import (
    EvalReport,
    chi2_band,
    error_stats,
    export_error_map,
    flag_defects,
    normalized_error_sq,
    reference_state,
    rmse,
    selection_mask,
)
from .mesh import add_spherical_defect, apply_state, generate_tablet, mesh_fingerprint
from .raycast import build_bvh
from .registration import icp_align
from .sensor import CameraModel, CameraPose, apply_noise, cast_scene, read_cloud, write_cloud
from .stl import read_stl_file, write_stl_file

__all__ = [
    "RunConfig",
    "run_pipeline",
    "run_sweep",
    "stage_simulate",
    "stage_estimate",
    "stage_evaluate",
]

MM = 1e-3


@dataclasses.dataclass
class RunConfig:
    """All knobs of one synthetic run. Defaults mirror the reference
    tablet experiment: 160x100 mm tablet, 5 mm mesh, one 5 mm
    hemispherical defect, camera at 0.5 m, 50 clouds, 50 mm prior,
    6 mm border exclusion."""

    tablet_width_mm: float = 160.0
    tablet_height_mm: float = 100.0
    mesh_size_mm: float = 5.0
    truth_mesh_size_mm: float = 1.0
    defect_radius_mm: float = 5.0
    defect_center_mm: tuple = (0.0, 0.0)
    protrusion: str = "outward"
    truth_lift_mm: float = 0.0
    distance_m: float = 0.5
    heading_deg: float = 0.0
    a: float = 0.0184
    b: float = 0.2106
    resolution: tuple = (1280, 720)
    fov_deg: tuple = (65.0, 40.0)
    stride: int = 1
    min_range_m: float = 0.2
    max_range_m: float = 10.0
    n_clouds: int = 50
    sigma0_mm: float = 50.0
    border_mm: float = 6.0
    master_seed: int = 0
    mode: str = "info"
    correspondence: str = "closest-point"
    icp: bool = False
    flag_threshold_mm: float = 1.0
    flag_z: float = 3.0

    def __post_init__(self):
        if self.mode not in ("info", "covariance"):
            raise ValueError(f"mode must be 'info' or 'covariance', got {self.mode!r}")
        if self.correspondence not in ("ray", "closest-point"):
            raise ValueError(f"unknown correspondence {self.correspondence!r}")
        self.defect_center_mm = tuple(float(v) for v in self.defect_center_mm)
        self.resolution = tuple(int(v) for v in self.resolution)
        self.fov_deg = tuple(float(v) for v in self.fov_deg)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["defect_center_mm"] = list(d["defect_center_mm"])
        d["resolution"] = list(d["resolution"])
        d["fov_deg"] = list(d["fov_deg"])
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        path = os.fspath(path)
        if path.endswith(".toml"):
            with open(path, "rb") as fh:
                return cls.from_dict(tomllib.load(fh))
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def camera_model(self):
        return CameraModel(
            fov_h=np.deg2rad(self.fov_deg[0]),
            fov_v=np.deg2rad(self.fov_deg[1]),
            width=self.resolution[0],
            height=self.resolution[1],
            a=self.a,
            b=self.b,
            min_range=self.min_range_m,
            max_range=self.max_range_m,
            stride=self.stride,
        )

    def camera_pose(self):
        h = np.deg2rad(self.heading_deg)
        position = self.distance_m * np.array([np.sin(h), 0.0, np.cos(h)])
        return CameraPose.look_at(position, (0.0, 0.0, 0.0))

    def build_meshes(self):
        """(nominal, truth): the CAD reference and the defective truth."""
        nominal = generate_tablet(
            self.tablet_width_mm * MM, self.tablet_height_mm * MM, self.mesh_size_mm * MM
        )
        truth = generate_tablet(
            self.tablet_width_mm * MM, self.tablet_height_mm * MM, self.truth_mesh_size_mm * MM
        )
        if self.defect_radius_mm > 0:
            truth = add_spherical_defect(
                truth,
                (self.defect_center_mm[0] * MM, self.defect_center_mm[1] * MM),
                self.defect_radius_mm * MM,
                protrusion=self.protrusion,
            )
        if self.truth_lift_mm != 0.0:
            # uniform offset: an exactly linear truth, used by the
            # filter-consistency diagnostics
            lift = np.full(truth.n_v, self.truth_lift_mm * MM)
            truth = apply_state(truth, lift, np.tile([0.0, 0.0, 1.0], (truth.n_v, 1)))
        return nominal, truth


def _update(state, batch, mode):
    compressed = compress_batch(batch)
    if mode == "info":
        return info_update(state, compressed)
    return rwls_update(state, compressed)


def _mesh_header(chash):
    return f"cfg:{chash}".encode()


def run_pipeline(config, out_dir=None, keep_clouds=False):
    """Run the full synthetic experiment, returning an EvalReport.

    With ``out_dir``, artifacts land in meshes/, clouds/ (when
    ``keep_clouds``), checkpoints/, report.json, rmse.csv and
    error_map.csv/.ply. With n_clouds = 0 the report carries the
    prior-only RMSE over the border-cleared faces.
    """
    nominal, truth = config.build_meshes()
    bvh_nominal = build_bvh(nominal)
    bvh_truth = build_bvh(truth)
    model = config.camera_model()
    pose = config.camera_pose()
    chash = config.config_hash()
    fingerprint = mesh_fingerprint(nominal)
    border_m = config.border_mm * MM

    x_ref, ref_hit = reference_state(nominal, truth, bvh_truth)

    rep = "information" if config.mode == "info" else "covariance"
    state = EstimatorState.prior(
        nominal.n_f, config.sigma0_mm * MM, representation=rep, mesh_fingerprint=fingerprint
    )

    dirs = {}
    if out_dir is not None:
        for sub in ("meshes", "checkpoints") + (("clouds",) if keep_clouds else ()):
            dirs[sub] = os.path.join(out_dir, sub)
            os.makedirs(dirs[sub], exist_ok=True)
        write_stl_file(nominal, os.path.join(dirs["meshes"], "nominal.stl"),
                       format="ascii", name=f"nominal cfg:{chash}")
        write_stl_file(truth, os.path.join(dirs["meshes"], "truth.stl"),
                       format="ascii", name=f"truth cfg:{chash}")

    cast = cast_scene(bvh_truth, pose, model)
    hit_counts = np.zeros(nominal.n_f, dtype=np.int64)
    means = []
    totals = {"n_points": 0, "n_no_correspondence": 0, "n_border_dropped": 0, "n_ray_fallback": 0}

    for k in range(1, config.n_clouds + 1):
        cloud = apply_noise(cast, [config.master_seed, k], seq=k)
        if keep_clouds and out_dir is not None:
            write_cloud(cloud, os.path.join(dirs["clouds"], f"cloud_{k:04d}.ply"),
                        model=model, extra={"config_hash": chash})
        correction = icp_align(cloud, nominal, bvh_nominal)[0] if config.icp else None
        batch = assemble_batch(cloud, model, nominal, bvh_nominal, border_m,
                               mode=config.correspondence, correction=correction)
        hit_counts += np.bincount(batch.face_of, minlength=nominal.n_f)
        for key in totals:
            totals[key] += batch.diagnostics.get(key, 0)
        state = _update(state, batch, config.mode)
        means.append(state.mean())
        if out_dir is not None:
            save_state(state, os.path.join(dirs["checkpoints"], f"state_{k:04d}.json"),
                       extra={"config_hash": chash, "hit_counts": hit_counts.tolist()})

    report = _evaluate(config, nominal, state, hit_counts, x_ref, ref_hit, means,
                       extra_diag={"n_rays": cast.n_rays, "n_cast_miss": cast.n_miss, **totals})

    if out_dir is not None:
        report.save(os.path.join(out_dir, "report.json"))
        with open(os.path.join(out_dir, "rmse.csv"), "w") as fh:
            fh.write("iteration,rmse_m\n")
            for k, v in enumerate(report.rmse_trace, start=1):
                fh.write(f"{k},{v:.17g}\n")
        export_error_map(nominal, report.per_face_error,
                         os.path.join(out_dir, "error_map.csv"),
                         os.path.join(out_dir, "error_map.ply"))
    return report


def _evaluate(config, nominal, state, hit_counts, x_ref, ref_hit, means, extra_diag=None):
    """Shared between the pipeline and the evaluate stage."""
    border_m = config.border_mm * MM
    n_processed = state.k
    if n_processed > 0:
        mask = selection_mask(nominal, hit_counts, border_m)
        x_hat = state.mean()
    else:
        # prior-only report: no hits yet, judge border-cleared faces
        mask = selection_mask(nominal, np.ones(nominal.n_f), border_m)
        x_hat = np.zeros(nominal.n_f)
    p_diag = state.variance_diag()

    trace = [rmse(m, x_ref, mask) for m in means]
    final = trace[-1] if trace else rmse(x_hat, x_ref, mask)
    mean_abs, std_abs, post_std = error_stats(x_hat, x_ref, mask, p_diag)
    flags = flag_defects(x_hat, p_diag, config.flag_threshold_mm * MM, config.flag_z)
    nee = normalized_error_sq(x_hat, x_ref, p_diag, mask)
    lo, hi = chi2_band(mask.n_selected)

    diagnostics = {
        "chi2_band": [lo, hi],
        "consistent": bool(lo <= nee <= hi),
        "ref_unhit_faces": int((~ref_hit).sum()),
        "mask_excluded_faces": int(nominal.n_f - mask.n_selected),
    }
    if extra_diag:
        diagnostics.update(extra_diag)

    cfg = config.to_dict()
    cfg["config_hash"] = config.config_hash()
    return EvalReport(
        rmse_trace=trace,
        final_rmse=final,
        abs_error_mean=mean_abs,
        abs_error_std=std_abs,
        posterior_std_mean=post_std,
        per_face_error=x_hat - x_ref,
        flags=flags,
        included=mask.included,
        n_selected=mask.n_selected,
        normalized_error_sq=nee,
        config=cfg,
        diagnostics=diagnostics,
    )


def stage_simulate(config, out_dir):
    """Write meshes and the n_clouds synthetic clouds; return cloud paths."""
    nominal, truth = config.build_meshes()
    chash = config.config_hash()
    mesh_dir = os.path.join(out_dir, "meshes")
    cloud_dir = os.path.join(out_dir, "clouds")
    os.makedirs(mesh_dir, exist_ok=True)
    os.makedirs(cloud_dir, exist_ok=True)
    write_stl_file(nominal, os.path.join(mesh_dir, "nominal.stl"),
                   format="ascii", name=f"nominal cfg:{chash}")
    write_stl_file(truth, os.path.join(mesh_dir, "truth.stl"),
                   format="ascii", name=f"truth cfg:{chash}")

    model = config.camera_model()
    cast = cast_scene(build_bvh(truth), config.camera_pose(), model)
    paths = []
    for k in range(1, config.n_clouds + 1):
        cloud = apply_noise(cast, [config.master_seed, k], seq=k)
        path = os.path.join(cloud_dir, f"cloud_{k:04d}.ply")
        write_cloud(cloud, path, model=model, extra={"config_hash": chash})
        paths.append(path)
    return paths


def stage_estimate(nominal_path, clouds_dir, out_dir, sigma0_mm=50.0, border_mm=6.0,
                   mode="info", correspondence="closest-point", icp=False):
    """Fuse persisted clouds against a nominal STL; write checkpoints.

    Clouds are processed in filename order. All sidecars must carry
    the same config hash; a mismatch aborts to prevent mixing runs.
    Returns the path of the final checkpoint.
    """
    nominal = read_stl_file(nominal_path)
    bvh = build_bvh(nominal)
    fingerprint = mesh_fingerprint(nominal)
    border_m = border_mm * MM
    paths = sorted(glob.glob(os.path.join(clouds_dir, "*.ply")))
    if not paths:
        raise FileNotFoundError(f"no .ply clouds under {clouds_dir}")

    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    rep = "information" if mode == "info" else "covariance"
    state = EstimatorState.prior(nominal.n_f, sigma0_mm * MM,
                                 representation=rep, mesh_fingerprint=fingerprint)
    hit_counts = np.zeros(nominal.n_f, dtype=np.int64)
    chash = None
    final_path = None
    for k, path in enumerate(paths, start=1):
        cloud = read_cloud(path)
        this_hash = cloud.meta.get("config_hash")
        if chash is None:
            chash = this_hash
        elif this_hash != chash:
            raise ValueError(f"{path}: config hash {this_hash} does not match {chash}")
        model = CameraModel.from_dict(cloud.meta["model"])
        correction = icp_align(cloud, nominal, bvh)[0] if icp else None
        batch = assemble_batch(cloud, model, nominal, bvh, border_m,
                               mode=correspondence, correction=correction)
        hit_counts += np.bincount(batch.face_of, minlength=nominal.n_f)
        state = _update(state, batch, mode)
        final_path = os.path.join(ckpt_dir, f"state_{k:04d}.json")
        save_state(state, final_path,
                   extra={"config_hash": chash, "hit_counts": hit_counts.tolist()})
    return final_path


def stage_evaluate(state_path, truth_path, nominal_path, border_mm=6.0, out_path=None,
                   config=None):
    """Evaluate a persisted state against truth and nominal meshes.

    The checkpoint's mesh fingerprint must match the nominal STL and
    its config hash (when present) must match the mesh headers.
    """
    state, extras = load_state(state_path)
    nominal = read_stl_file(nominal_path)
    truth = read_stl_file(truth_path)
    if state.mesh_fingerprint and state.mesh_fingerprint != mesh_fingerprint(nominal):
        raise ValueError("checkpoint was produced against a different nominal mesh")
    chash = extras.get("config_hash")
    for path in (nominal_path, truth_path):
        tag = _embedded_hash(path)
        if chash and tag and tag != chash:
            raise ValueError(f"{path}: mesh config hash {tag} does not match state {chash}")

    if config is None:
        config = RunConfig(border_mm=border_mm)
    hit_counts = np.array(extras.get("hit_counts", np.ones(nominal.n_f)), dtype=np.int64)
    x_ref, ref_hit = reference_state(nominal, truth, build_bvh(truth))
    means = [state.mean()] if state.k > 0 else []
    report = _evaluate(config, nominal, state, hit_counts, x_ref, ref_hit, means)
    if out_path is not None:
        report.save(out_path)
    return report


def _embedded_hash(stl_path):
    """cfg:<hash> tag from an STL header or solid name, if any."""
    with open(stl_path, "rb") as fh:
        head = fh.read(160)
    marker = b"cfg:"
    i = head.find(marker)
    if i < 0:
        return None
    return head[i + len(marker): i + len(marker) + 12].decode("ascii", "replace")


_SWEEP_FIELDS = {"distance": "distance_m", "heading": "heading_deg", "seed": "master_seed"}


def run_sweep(config, axis, values, out_dir=None):
    """Run the pipeline per value of one axis; tabulate final stats.

    For the seed axis the per-iteration RMSE quartiles across seeds
    are also computed (rows iteration/quantile/value). Returns
    {"rows": [...], "quartiles": [...] or None} and writes sweep.csv
    (plus quartiles.csv) under out_dir when given.
    """
    if axis not in _SWEEP_FIELDS:
        raise ValueError(f"sweep axis must be one of {sorted(_SWEEP_FIELDS)}")
    field = _SWEEP_FIELDS[axis]
    rows = []
    traces = []
    for v in values:
        cfg = dataclasses.replace(config, **{field: v})
        rep = run_pipeline(cfg)
        rows.append({
            axis: v,
            "final_rmse": rep.final_rmse,
            "abs_error_mean": rep.abs_error_mean,
            "abs_error_std": rep.abs_error_std,
            "posterior_std_mean": rep.posterior_std_mean,
            "n_selected": rep.n_selected,
        })
        traces.append(rep.rmse_trace)

    quartiles = None
    if axis == "seed" and traces and traces[0]:
        mat = np.array(traces)
        qs = np.percentile(mat, [25, 50, 75], axis=0)
        quartiles = []
        for k in range(mat.shape[1]):
            for name, q in zip(("q1", "median", "q3"), qs[:, k]):
                quartiles.append({"iteration": k + 1, "quantile": name, "rmse_m": float(q)})

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        cols = [axis, "final_rmse", "abs_error_mean", "abs_error_std",
                "posterior_std_mean", "n_selected"]
        with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in rows:
                fh.write(",".join(str(r[c]) for c in cols) + "\n")
        if quartiles:
            with open(os.path.join(out_dir, "quartiles.csv"), "w") as fh:
                fh.write("iteration,quantile,rmse_m\n")
                for q in quartiles:
                    fh.write(f"{q['iteration']},{q['quantile']},{q['rmse_m']:.17g}\n")
    return {"rows": rows, "quartiles": quartiles}
