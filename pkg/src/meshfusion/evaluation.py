"""Ground-truth comparison and detection metrics.

The reference state is measured from geometry: for every nominal face
a probe along the face normal through the centroid finds the signed
offset of the defective surface, exactly the quantity the filter
estimates. Metrics are restricted by a selection mask to faces that
were actually observed and sit away from the mesh border, where
correspondence is unreliable.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .raycast import border_distances, ray_cast_batch

__all__ = [
    "SelectionMask",
    "EvalReport",
    "reference_state",
    "selection_mask",
    "rmse",
    "error_stats",
    "flag_defects",
    "normalized_error_sq",
    "chi2_band",
    "export_error_map",
]


@dataclass
class SelectionMask:
    """Boolean face filter used by all error statistics."""

    included: np.ndarray
    n_selected: int

    def __post_init__(self):
        self.included = np.asarray(self.included, dtype=bool).reshape(-1)
        if self.n_selected != int(self.included.sum()):
            raise ValueError("n_selected disagrees with the mask")


def reference_state(nominal, defective, bvh_defective, eps=1e-6):
    """Per-face ground-truth deviation of the defective surface.

    Probes each nominal face centroid along +-n with a small back-off
    eps (so a surface exactly through the centroid is still hit) and
    keeps the hit nearer to the centroid. Positive values lie along
    +n. Returns (x, hit): faces missed by both probes get x = 0 and
    hit = False.
    """
    if nominal.n_f == 0 or defective.n_f == 0:
        raise ValueError("reference_state needs non-empty meshes")
    c = nominal.face_centroids
    n = nominal.face_normals
    f_up, t_up, _ = ray_cast_batch(bvh_defective, c - eps * n, n)
    f_dn, t_dn, _ = ray_cast_batch(bvh_defective, c + eps * n, -n)
    up_ok = f_up >= 0
    dn_ok = f_dn >= 0
    x_up = np.where(up_ok, t_up - eps, np.inf)
    x_dn = np.where(dn_ok, -(t_dn - eps), -np.inf)

    take_up = np.abs(x_up) <= np.abs(x_dn)
    x = np.where(take_up, x_up, x_dn)
    hit = up_ok | dn_ok
    x[~hit] = 0.0
    return x, hit


def selection_mask(mesh, hit_counts, border_m):
    """Faces hit at least once whose vertices all clear the border.

    ``hit_counts`` is a per-face count (or boolean) accumulated over
    all processed clouds. The border criterion is on vertices: every
    vertex of the face must lie at least border_m from the mesh
    boundary, which excludes exactly the faces touching the outer
    band.
    """
    hits = np.asarray(hit_counts).reshape(-1)
    if len(hits) != mesh.n_f:
        raise ValueError("hit_counts must have one entry per face")
    vd = border_distances(mesh, mesh.vertices)
    face_clear = vd[mesh.faces].min(axis=1) >= border_m
    included = (hits > 0) & face_clear
    return SelectionMask(included, int(included.sum()))


def _selected(values, mask):
    values = np.asarray(values, dtype=float).reshape(-1)
    if mask.n_selected == 0:
        raise ValueError("empty selection: no faces to evaluate")
    return values[mask.included]


def rmse(x_hat, x_ref, mask):
    """Root-mean-square estimation error over the selected faces."""
    e = _selected(x_hat, mask) - _selected(x_ref, mask)
    return float(np.sqrt(e @ e / mask.n_selected))


def error_stats(x_hat, x_ref, mask, p_diag):
    """(mean |e|, std |e|, mean posterior std) over selected faces."""
    e = np.abs(_selected(x_hat, mask) - _selected(x_ref, mask))
    post = np.sqrt(_selected(p_diag, mask))
    return float(e.mean()), float(e.std()), float(post.mean())


def flag_defects(x_hat, p_diag, threshold_m, z_score):
    """Magnitude-and-significance defect flags, one bool per face."""
    x_hat = np.asarray(x_hat, dtype=float)
    std = np.sqrt(np.asarray(p_diag, dtype=float))
    mag = np.abs(x_hat)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, mag / std, np.inf)
    return (mag > threshold_m) & (z > z_score)


def normalized_error_sq(x_hat, x_ref, p_diag, mask):
    """(x-hat - x)^T P^-1 (x-hat - x) over selected faces (diagonal P)."""
    e = _selected(x_hat, mask) - _selected(x_ref, mask)
    p = _selected(p_diag, mask)
    return float(np.sum(e * e / p))


def chi2_band(dof, lo=0.01, hi=0.99):
    """Central chi-square acceptance interval for the consistency check."""
    return float(chi2.ppf(lo, dof)), float(chi2.ppf(hi, dof))


def export_error_map(mesh, values, csv_path, ply_path=None):
    """Per-face values as CSV and, optionally, a color-coded ASCII PLY."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if len(values) != mesh.n_f:
        raise ValueError("need one value per face")
    cen = mesh.face_centroids
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face_index", "cx", "cy", "cz", "value"])
        for i in range(mesh.n_f):
            w.writerow([i, f"{cen[i, 0]:.17g}", f"{cen[i, 1]:.17g}",
                        f"{cen[i, 2]:.17g}", f"{values[i]:.17g}"])
    if ply_path is None:
        return

    # diverging map: blue below zero, red above, white at zero
    vmax = np.abs(values).max()
    s = values / vmax if vmax > 0 else np.zeros_like(values)
    r = np.where(s >= 0, 255, (255 * (1 + s)).astype(int))
    g = (255 * (1 - np.abs(s))).astype(int)
    b = np.where(s <= 0, 255, (255 * (1 - s)).astype(int))
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {mesh.n_v}",
        "property double x", "property double y", "property double z",
        f"element face {mesh.n_f}",
        "property list uchar int vertex_indices",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    lines.extend(f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices)
    lines.extend(
        f"3 {i} {j} {k} {int(r[f])} {int(g[f])} {int(b[f])}"
        for f, (i, j, k) in enumerate(mesh.faces)
    )
    with open(ply_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class EvalReport:
    """End-of-run summary: trace, statistics, flags, configuration echo."""

    rmse_trace: list
    final_rmse: float
    abs_error_mean: float
    abs_error_std: float
    posterior_std_mean: float
    per_face_error: np.ndarray
    flags: np.ndarray
    included: np.ndarray
    n_selected: int
    normalized_error_sq: float
    config: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "rmse_trace": [float(v) for v in self.rmse_trace],
            "final_rmse": self.final_rmse,
            "abs_error_mean": self.abs_error_mean,
            "abs_error_std": self.abs_error_std,
            "posterior_std_mean": self.posterior_std_mean,
            "per_face_error": np.asarray(self.per_face_error, dtype=float).tolist(),
            "flags": np.asarray(self.flags, dtype=bool).tolist(),
            "included": np.asarray(self.included, dtype=bool).tolist(),
            "n_selected": self.n_selected,
            "normalized_error_sq": self.normalized_error_sq,
            "config": self.config,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            rmse_trace=d["rmse_trace"],
            final_rmse=d["final_rmse"],
            abs_error_mean=d["abs_error_mean"],
            abs_error_std=d["abs_error_std"],
            posterior_std_mean=d["posterior_std_mean"],
            per_face_error=np.array(d["per_face_error"], dtype=float),
            flags=np.array(d["flags"], dtype=bool),
            included=np.array(d["included"], dtype=bool),
            n_selected=d["n_selected"],
            normalized_error_sq=d["normalized_error_sq"],
            config=d.get("config", {}),
            diagnostics=d.get("diagnostics", {}),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
