"""BVH construction and measurement-to-mesh correspondence.

The BVH is a median-split tree over face centroids (longest axis of
the centroid bounds, stable sort, halves), flattened to arrays in
preorder so the compiled kernels can walk it without objects. Queries
are exact: results match a brute-force scan over all faces, with ties
broken toward the lowest face index.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = [
    "Bvh",
    "Correspondence",
    "build_bvh",
    "ray_cast",
    "ray_cast_batch",
    "closest_point_batch",
    "border_distances",
    "correspond",
    "correspond_batch",
]


class Bvh:
    """Flattened bounding-volume hierarchy over a mesh's faces.

    Nodes are stored in preorder; ``left[i] < 0`` marks a leaf whose
    faces are ``face_order[leaf_start[i] : leaf_start[i]+leaf_count[i]]``.
    Corner coordinates are copied in so traversal needs no mesh access.
    """

    __slots__ = (
        "bounds_min", "bounds_max", "left", "right",
        "leaf_start", "leaf_count", "face_order",
        "va", "vb", "vc", "n_faces",
    )

    def __init__(self, bounds_min, bounds_max, left, right, leaf_start, leaf_count,
                 face_order, va, vb, vc):
        self.bounds_min = bounds_min
        self.bounds_max = bounds_max
        self.left = left
        self.right = right
        self.leaf_start = leaf_start
        self.leaf_count = leaf_count
        self.face_order = face_order
        self.va = va
        self.vb = vb
        self.vc = vc
        self.n_faces = len(face_order)

    @property
    def n_nodes(self):
        return len(self.left)

    def node_depths(self):
        """Depth per node, root = 1 (children always follow parents)."""
        d = np.ones(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.left[i] >= 0:
                d[self.left[i]] = d[i] + 1
                d[self.right[i]] = d[i] + 1
        return d


def build_bvh(mesh, leaf_size=4):
    """Deterministic median-split BVH; leaves hold <= leaf_size faces."""
    if mesh.n_f == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    v = mesh.vertices
    f = mesh.faces
    va = np.ascontiguousarray(v[f[:, 0]])
    vb = np.ascontiguousarray(v[f[:, 1]])
    vc = np.ascontiguousarray(v[f[:, 2]])
    tri_min = np.minimum(np.minimum(va, vb), vc)
    tri_max = np.maximum(np.maximum(va, vb), vc)
    centroids = mesh.face_centroids

    bmin, bmax, left, right, start, count = [], [], [], [], [], []
    face_order = []

    def build(subset):
        node = len(left)
        bmin.append(tri_min[subset].min(axis=0))
        bmax.append(tri_max[subset].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        if len(subset) <= leaf_size:
            start[node] = len(face_order)
            count[node] = len(subset)
            face_order.extend(subset.tolist())
            return node
        cen = centroids[subset]
        axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
        # stable sort so equal centroids keep face order (deterministic)
        ordering = np.argsort(cen[:, axis], kind="stable")
        half = len(subset) // 2
        left[node] = build(subset[ordering[:half]])
        right[node] = build(subset[ordering[half:]])
        return node

    build(np.arange(mesh.n_f, dtype=np.int64))
    return Bvh(
        np.ascontiguousarray(bmin, dtype=np.float64),
        np.ascontiguousarray(bmax, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(start, dtype=np.int64),
        np.array(count, dtype=np.int64),
        np.array(face_order, dtype=np.int64),
        va, vb, vc,
    )


@dataclass
class Correspondence:
    """Pairing of a measured point with a point on the nominal mesh."""

    face_index: int
    footpoint: np.ndarray
    signed_offset: float
    border_distance: float
    mode: str
    ray_t: float = 0.0


def _footpoints(bvh, faces, u, v):
    a = bvh.va[faces]
    fp = a + u[:, None] * (bvh.vb[faces] - a) + v[:, None] * (bvh.vc[faces] - a)
    return fp


def ray_cast_batch(bvh, origins, dirs):
    """Nearest hits for unit-direction rays.

    Returns (faces, t, footpoints): face -1 and t -1 mark misses, with
    footpoint rows zeroed.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    faces = np.empty(n, dtype=np.int64)
    t = np.empty(n)
    u = np.empty(n)
    v = np.empty(n)
    _kernels.ray_cast_kernel(
        origins, dirs, bvh.bounds_min, bvh.bounds_max, bvh.left, bvh.right,
        bvh.leaf_start, bvh.leaf_count, bvh.face_order, bvh.va, bvh.vb, bvh.vc,
        faces, t, u, v,
    )
    fp = np.zeros((n, 3))
    hit = faces >= 0
    if np.any(hit):
        fp[hit] = _footpoints(bvh, faces[hit], u[hit], v[hit])
    return faces, t, fp


def closest_point_batch(bvh, points):
    """Globally closest mesh point per query point: (faces, footpoints, d)."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    faces = np.empty(n, dtype=np.int64)
    q = np.empty((n, 3))
    d2 = np.empty(n)
    _kernels.closest_point_kernel(
        points, bvh.bounds_min, bvh.bounds_max, bvh.left, bvh.right,
        bvh.leaf_start, bvh.leaf_count, bvh.face_order, bvh.va, bvh.vb, bvh.vc,
        faces, q, d2,
    )
    return faces, q, np.sqrt(d2)


def border_distances(mesh, points):
    """Distance from each point to the mesh boundary (inf if closed)."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    be = mesh.boundary_edges
    if len(be) == 0:
        return np.full(len(points), np.inf)
    seg_a = np.ascontiguousarray(mesh.vertices[be[:, 0]])
    seg_b = np.ascontiguousarray(mesh.vertices[be[:, 1]])
    out = np.empty(len(points))
    _kernels.segment_distance_kernel(points, seg_a, seg_b, out)
    return out


def ray_cast(bvh, mesh, origin, direction):
    """Single-ray query; None on miss."""
    faces, t, fp = ray_cast_batch(bvh, np.atleast_2d(origin), np.atleast_2d(direction))
    if faces[0] < 0:
        return None
    border = border_distances(mesh, fp[:1])[0]
    return Correspondence(
        face_index=int(faces[0]),
        footpoint=fp[0],
        signed_offset=0.0,
        border_distance=float(border),
        mode="ray",
        ray_t=float(t[0]),
    )


def correspond_batch(bvh, mesh, points_world, camera_origin, mode="ray"):
    """Correspond many measured points at once.

    In "ray" mode each point is projected along the camera-to-point
    ray onto the mesh; rays that miss fall back to the global closest
    point so grazing measurements are not lost. In "closest-point"
    mode every point takes the closest-point route directly.

    Returns a dict of arrays: face, footpoint, signed_offset,
    border_distance, is_ray (bool), n_fallback.
    """
    points = np.ascontiguousarray(points_world, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    faces = np.full(n, -1, dtype=np.int64)
    fp = np.zeros((n, 3))
    is_ray = np.zeros(n, dtype=bool)

    if mode == "ray":
        cam = np.asarray(camera_origin, dtype=float).reshape(3)
        dirs = points - cam
        norms = np.linalg.norm(dirs, axis=1)
        ok = norms > 0
        dirs[ok] /= norms[ok, None]
        origins = np.broadcast_to(cam, (n, 3))
        rf, _, rfp = ray_cast_batch(bvh, origins[ok], dirs[ok])
        idx = np.flatnonzero(ok)
        faces[idx] = rf
        fp[idx] = rfp
        is_ray[idx] = rf >= 0
        missed = faces < 0
        if np.any(missed):
            cf, cfp, _ = closest_point_batch(bvh, points[missed])
            faces[missed] = cf
            fp[missed] = cfp
    elif mode == "closest-point":
        faces, fp, _ = closest_point_batch(bvh, points)
    else:
        raise ValueError(f"unknown correspondence mode {mode!r}")

    normals = mesh.face_normals[faces]
    offsets = np.einsum("ij,ij->i", points - fp, normals)
    border = border_distances(mesh, fp)
    return {
        "face": faces,
        "footpoint": fp,
        "signed_offset": offsets,
        "border_distance": border,
        "is_ray": is_ray,
        "n_fallback": int(n - is_ray.sum()) if mode == "ray" else 0,
    }


def correspond(bvh, mesh, point_world, camera_origin, mode="ray"):
    """Single-point counterpart of correspond_batch; None if no mesh."""
    res = correspond_batch(bvh, mesh, np.atleast_2d(point_world), camera_origin, mode=mode)
    if res["face"][0] < 0:
        return None
    return Correspondence(
        face_index=int(res["face"][0]),
        footpoint=res["footpoint"][0],
        signed_offset=float(res["signed_offset"][0]),
        border_distance=float(res["border_distance"][0]),
        mode="ray" if res["is_ray"][0] else "closest-point",
    )
