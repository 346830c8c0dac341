"""Synthetic depth-camera measurements and point-cloud files.

A camera is a pose (position + unit quaternion, camera z = optical
axis) and an intrinsic model (field of view, pixel grid, range limits,
noise coefficients). Clouds are simulated by casting one ray per
pixel center into the ground-truth mesh and perturbing each hit with
zero-mean isotropic Gaussian noise whose standard deviation grows
exponentially with range:

    sigma(rho) = a * exp(b * rho)        [metres]

The casting step is separated from the noise step so a fixed scene
can be re-noised cheaply for repeated acquisitions.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .raycast import ray_cast_batch
from .transforms import RigidTransform, matrix_to_quat, quat_normalize, quat_to_matrix

__all__ = [
    "CameraModel",
    "CameraPose",
    "PointCloud",
    "noise_sigma",
    "camera_rays",
    "cast_scene",
    "apply_noise",
    "simulate_cloud",
    "write_cloud",
    "read_cloud",
]


@dataclass
class CameraModel:
    """Intrinsics and noise coefficients of the simulated camera."""

    fov_h: float = np.deg2rad(65.0)
    fov_v: float = np.deg2rad(40.0)
    width: int = 1280
    height: int = 720
    a: float = 0.0184  # noise scale, metres
    b: float = 0.2106  # noise range growth, 1/metre
    min_range: float = 0.2
    max_range: float = 10.0
    stride: int = 1

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("noise coefficient a must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("resolution must be positive")
        if not (0 < self.fov_h < np.pi and 0 < self.fov_v < np.pi):
            raise ValueError("field of view must lie in (0, pi)")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def to_dict(self):
        return {
            "a": self.a,
            "b": self.b,
            "fov": [self.fov_h, self.fov_v],
            "res": [self.width, self.height],
            "range": [self.min_range, self.max_range],
            "stride": self.stride,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            fov_h=d["fov"][0], fov_v=d["fov"][1],
            width=d["res"][0], height=d["res"][1],
            a=d["a"], b=d["b"],
            min_range=d["range"][0], max_range=d["range"][1],
            stride=d.get("stride", 1),
        )


@dataclass
class CameraPose:
    """Camera position and orientation; camera z-axis looks forward."""

    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.orientation = quat_normalize(self.orientation)

    @property
    def rotation(self):
        return quat_to_matrix(self.orientation)

    def as_transform(self):
        """Camera-to-world rigid transform."""
        return RigidTransform(self.orientation, self.position)

    @classmethod
    def look_at(cls, position, target, up=(0.0, 1.0, 0.0)):
        """Pose at ``position`` with the optical axis through ``target``."""
        position = np.asarray(position, dtype=float)
        forward = np.asarray(target, dtype=float) - position
        nf = np.linalg.norm(forward)
        if nf == 0:
            raise ValueError("target coincides with camera position")
        forward = forward / nf
        up = np.asarray(up, dtype=float)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-12:
            # optical axis parallel to up; fall back to another up
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.column_stack([right, down, forward])
        return cls(position, matrix_to_quat(R))


@dataclass
class PointCloud:
    """Points in the camera frame plus the pose that acquired them."""

    points: np.ndarray
    pose: CameraPose
    seq: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.points.size and not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite point coordinates")

    def __len__(self):
        return len(self.points)

    def points_world(self):
        return self.pose.as_transform().apply(self.points)


def noise_sigma(model, range_m):
    """Per-point noise standard deviation a*exp(b*rho), in metres."""
    rho = np.asarray(range_m, dtype=float)
    if np.any(rho < 0):
        raise ValueError("range must be non-negative")
    return model.a * np.exp(model.b * rho)


def camera_rays(model):
    """Unit ray directions through pixel centers, camera frame, (n, 3).

    Rows scan the image left-to-right, top row first, honoring the
    model's stride. The grid spans the full field of view with the
    pinhole at the origin and z forward.
    """
    tan_h = np.tan(0.5 * model.fov_h)
    tan_v = np.tan(0.5 * model.fov_v)
    us = np.arange(0, model.width, model.stride)
    vs = np.arange(0, model.height, model.stride)
    x = tan_h * (2.0 * (us + 0.5) / model.width - 1.0)
    y = tan_v * (2.0 * (vs + 0.5) / model.height - 1.0)
    gx, gy = np.meshgrid(x, y)
    dirs = np.column_stack([gx.ravel(), gy.ravel(), np.ones(gx.size)])
    return dirs / np.linalg.norm(dirs, axis=1)[:, None]


@dataclass
class CastResult:
    """Noise-free scene sample: where each surviving ray hit the truth."""

    hits_cam: np.ndarray   # (n, 3) hit points, camera frame
    ranges: np.ndarray     # (n,) distance camera to hit, metres
    faces: np.ndarray      # (n,) truth-mesh face per hit
    pose: CameraPose
    model: CameraModel
    n_rays: int
    n_miss: int


def cast_scene(truth_bvh, pose, model):
    """Cast the pixel grid into the truth mesh once.

    Hits outside [min_range, max_range] are discarded like misses.
    """
    dirs_cam = camera_rays(model)
    R = pose.rotation
    dirs_world = dirs_cam @ R.T
    origins = np.broadcast_to(pose.position, dirs_world.shape)
    faces, t, _ = ray_cast_batch(truth_bvh, origins, dirs_world)
    ok = (faces >= 0) & (t >= model.min_range) & (t <= model.max_range)
    hits_cam = dirs_cam[ok] * t[ok, None]
    return CastResult(
        hits_cam=hits_cam,
        ranges=t[ok],
        faces=faces[ok],
        pose=pose,
        model=model,
        n_rays=len(dirs_cam),
        n_miss=int(len(dirs_cam) - ok.sum()),
    )


def apply_noise(cast, rng_seed, seq=0):
    """Perturb a cast scene into one acquired cloud.

    Each hit gets isotropic Gaussian noise with sigma = a*exp(b*rho)
    at its true range. Noisy points that leave the model's range
    window are dropped so the cloud honors the range invariant.
    """
    rng = np.random.default_rng(rng_seed)
    sig = noise_sigma(cast.model, cast.ranges)
    pts = cast.hits_cam + sig[:, None] * rng.standard_normal(cast.hits_cam.shape)
    rho = np.linalg.norm(pts, axis=1)
    keep = (rho >= cast.model.min_range) & (rho <= cast.model.max_range)
    return PointCloud(points=pts[keep], pose=cast.pose, seq=seq)


def simulate_cloud(truth_mesh, bvh, pose, model, rng_seed, seq=0):
    """One synthetic acquisition of the truth mesh. Deterministic per seed."""
    del truth_mesh  # geometry lives in the BVH; kept for signature clarity
    return apply_noise(cast_scene(bvh, pose, model), rng_seed, seq=seq)


def _sidecar_path(path):
    return os.fspath(path) + ".json"


def write_cloud(cloud, path, model=None, extra=None):
    """ASCII PLY (double x/y/z) plus a JSON sidecar with pose and seq."""
    pts = cloud.points
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    lines.extend(f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in pts)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    side = {
        "position": cloud.pose.position.tolist(),
        "quaternion": cloud.pose.orientation.tolist(),
        "seq": cloud.seq,
    }
    if model is not None:
        side["model"] = model.to_dict()
    if extra:
        side.update(extra)
    with open(_sidecar_path(path), "w") as fh:
        json.dump(side, fh, indent=1)


def read_cloud(path):
    """Read a PLY cloud and its sidecar back into a PointCloud."""
    with open(path) as fh:
        magic = fh.readline().strip()
        if magic != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n = None
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: missing end_header")
            token = line.strip()
            if token.startswith("element vertex"):
                n = int(token.split()[-1])
            elif token == "end_header":
                break
        if n is None:
            raise ValueError(f"{path}: no vertex element")
        pts = np.loadtxt(fh, dtype=np.float64, max_rows=n) if n else np.zeros((0, 3))
    pts = pts.reshape(-1, 3)
    if len(pts) != n:
        raise ValueError(f"{path}: header says {n} points, file holds {len(pts)}")

    sidecar = _sidecar_path(path)
    if not os.path.exists(sidecar):
        raise FileNotFoundError(f"missing cloud sidecar {sidecar}")
    with open(sidecar) as fh:
        side = json.load(fh)
    pose = CameraPose(side["position"], side["quaternion"])
    meta = {k: v for k, v in side.items() if k not in ("position", "quaternion", "seq")}
    return PointCloud(points=pts, pose=pose, seq=side.get("seq", 0), meta=meta)
