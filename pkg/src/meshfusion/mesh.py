"""Triangle-mesh data model and synthetic test geometry.

A mesh is an (n_v, 3) float64 array of vertices in metres plus an
(n_f, 3) int64 array of 0-based vertex indices. Faces are oriented:
the face normal is the normalized cross product (V2-V1) x (V3-V1) of
the stored vertex order. Derived quantities (normals, areas,
adjacency, boundary) are computed lazily and cached; the arrays
themselves are frozen after construction so a mesh can be shared
freely across threads.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TriMesh",
    "VertexNormal",
    "face_normal",
    "vertex_normal_newton",
    "apply_state",
    "generate_tablet",
    "add_spherical_defect",
    "mesh_report",
    "mesh_fingerprint",
]


class TriMesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (n_v, 3)
        Vertex coordinates in metres.
    faces : array_like, shape (n_f, 3)
        Vertex index triples, 0-based, counter-clockwise for an
        outward normal.
    validate : bool
        Check index bounds, finiteness and distinctness of the three
        indices of every face. Disable only for internally generated
        meshes that are correct by construction.
    """

    def __init__(self, vertices, faces, validate=True):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        if validate:
            if not np.all(np.isfinite(vertices)):
                raise ValueError("non-finite vertex coordinates")
            if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
                raise ValueError("face index out of range")
            same = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 2] == faces[:, 0])
            )
            if np.any(same):
                raise ValueError(f"face {int(np.argmax(same))} repeats a vertex index")
        vertices.setflags(write=False)
        faces.setflags(write=False)
        self.vertices = vertices
        self.faces = faces
        self._cache = {}

    @property
    def n_v(self):
        return len(self.vertices)

    @property
    def n_f(self):
        return len(self.faces)

    def _corners(self):
        v = self.vertices
        f = self.faces
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    @property
    def face_normals(self):
        """Unit normals, one row per face. Raises on zero-area faces."""
        if "face_normals" not in self._cache:
            a, b, c = self._corners()
            cr = np.cross(b - a, c - a)
            norms = np.linalg.norm(cr, axis=1)
            bad = norms <= 0.0
            if np.any(bad):
                raise ValueError(f"degenerate face {int(np.argmax(bad))} has zero area")
            n = cr / norms[:, None]
            n.setflags(write=False)
            self._cache["face_normals"] = n
        return self._cache["face_normals"]

    @property
    def face_areas(self):
        if "face_areas" not in self._cache:
            a, b, c = self._corners()
            ar = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
            ar.setflags(write=False)
            self._cache["face_areas"] = ar
        return self._cache["face_areas"]

    @property
    def face_centroids(self):
        if "face_centroids" not in self._cache:
            a, b, c = self._corners()
            cen = (a + b + c) / 3.0
            cen.setflags(write=False)
            self._cache["face_centroids"] = cen
        return self._cache["face_centroids"]

    @property
    def edges_unique(self):
        """Sorted vertex pairs (n_e, 2) with per-edge face multiplicity."""
        if "edges_unique" not in self._cache:
            e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
            uniq, counts = np.unique(e, axis=0, return_counts=True)
            uniq.setflags(write=False)
            counts.setflags(write=False)
            self._cache["edges_unique"] = (uniq, counts)
        return self._cache["edges_unique"]

    @property
    def boundary_edges(self):
        """Edges used by exactly one face, (n_b, 2) vertex index pairs."""
        if "boundary_edges" not in self._cache:
            uniq, counts = self.edges_unique
            b = uniq[counts == 1]
            b.setflags(write=False)
            self._cache["boundary_edges"] = b
        return self._cache["boundary_edges"]

    @property
    def vertex_adjacency(self):
        """List of neighbor-index arrays, one per vertex."""
        if "vertex_adjacency" not in self._cache:
            uniq, _ = self.edges_unique
            nbrs = [[] for _ in range(self.n_v)]
            for i, j in uniq:
                nbrs[i].append(j)
                nbrs[j].append(i)
            self._cache["vertex_adjacency"] = [
                np.array(sorted(n), dtype=np.int64) for n in nbrs
            ]
        return self._cache["vertex_adjacency"]

    @property
    def vertex_faces(self):
        """List of incident-face-index arrays, one per vertex."""
        if "vertex_faces" not in self._cache:
            inc = [[] for _ in range(self.n_v)]
            for fi, (i, j, k) in enumerate(self.faces):
                inc[i].append(fi)
                inc[j].append(fi)
                inc[k].append(fi)
            self._cache["vertex_faces"] = [np.array(f, dtype=np.int64) for f in inc]
        return self._cache["vertex_faces"]

    @property
    def bbox(self):
        if self.n_v == 0:
            return np.zeros((2, 3))
        return np.vstack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def area(self):
        return float(self.face_areas.sum()) if self.n_f else 0.0

    def __repr__(self):
        return f"TriMesh(n_v={self.n_v}, n_f={self.n_f})"


def face_normal(mesh, face_index):
    """Unit normal of one face, following the stored winding."""
    i, j, k = mesh.faces[face_index]
    v = mesh.vertices
    cr = np.cross(v[j] - v[i], v[k] - v[i])
    n = np.linalg.norm(cr)
    if n <= 0.0:
        raise ValueError(f"degenerate face {face_index} has zero area")
    return cr / n


@dataclass
class VertexNormal:
    """Result of the constrained vertex-normal optimization."""

    direction: np.ndarray
    lagrange_multiplier: float
    converged: bool
    iterations: int
    is_minimum: bool
    residual: float


def _incident_normal_seed(mesh, vertex_index):
    fidx = mesh.vertex_faces[vertex_index]
    if len(fidx) == 0:
        raise ValueError(f"vertex {vertex_index} is isolated")
    seed = mesh.face_normals[fidx].mean(axis=0)
    if np.linalg.norm(seed) < 1e-12:
        # incident normals cancel out; fall back to the first one
        seed = mesh.face_normals[fidx[0]]
    return seed


def _constrained_curvature(D, n, lam):
    """Second-order check at a critical point of the vertex-normal problem.

    Projects the Lagrangian Hessian D + lam*I on the plane orthogonal
    to n. Returns (is_minimum, escape) where escape is the unit
    tangent direction of most negative curvature, or None at a
    minimum.
    """
    _, _, vt = np.linalg.svd(n.reshape(1, 3))
    T = vt[1:].T  # orthonormal basis of the plane orthogonal to n
    evals, evecs = np.linalg.eigh(T.T @ (D + lam * np.eye(3)) @ T)
    scale = max(1.0, float(np.abs(D).max()))
    if evals[0] >= -1e-8 * scale:
        return True, None
    return False, T @ evecs[:, 0]


def vertex_normal_newton(mesh, vertex_index, initial_guess=None, tol=1e-10, max_iter=50):
    """Vertex normal as the direction most orthogonal to the edge star.

    Minimizes sum_j (d_j^T n)^2 over unit vectors n, where d_j are the
    edge vectors from the vertex to its neighbors. The stationarity
    system

        2 (D + lam I) n = 0,   n^T n = 1,      D = sum_j d_j d_j^T

    is solved with Newton's method on (n, lam). The seed is the mean
    of the incident face normals unless ``initial_guess`` is given.
    After each solve the Hessian projected on the constraint tangent
    plane is checked; landing on a saddle or maximum re-seeds along
    the most negative curvature direction, and a singular Jacobian
    re-seeds with a deterministic perturbation, up to 3 extra
    attempts in total.

    Returns
    -------
    VertexNormal
        ``converged`` is False when max_iter was exhausted;
        ``residual`` is the final stationarity-system norm.
    """
    nbrs = mesh.vertex_adjacency[vertex_index]
    if len(nbrs) < 2:
        raise ValueError(f"vertex {vertex_index} has fewer than 2 neighbors")
    d = mesh.vertices[nbrs] - mesh.vertices[vertex_index]
    D = d.T @ d

    if initial_guess is None:
        seed = _incident_normal_seed(mesh, vertex_index)
    else:
        seed = np.asarray(initial_guess, dtype=float)
        if np.linalg.norm(seed) < 1e-12:
            raise ValueError("initial_guess must be nonzero")

    eye = np.eye(3)
    rng = np.random.default_rng(17)
    n = seed / np.linalg.norm(seed)
    lam = 0.0
    converged = False
    iterations = 0
    residual = np.inf
    is_minimum = False
    escape = None

    for restart in range(4):
        if restart > 0:
            if converged and escape is not None:
                # converged to a saddle or maximum: the most negative
                # curvature direction points at the constrained minimizer
                n = escape
            else:
                bumped = seed + 0.2 * rng.standard_normal(3)
                n = bumped / np.linalg.norm(bumped)
        converged = False
        lam = -n @ D @ n
        for iterations in range(1, max_iter + 1):
            A = 2.0 * (D + lam * eye)
            F = np.concatenate([A @ n, [n @ n - 1.0]])
            residual = float(np.linalg.norm(F))
            if residual <= tol:
                converged = True
                break
            J = np.zeros((4, 4))
            J[:3, :3] = A
            J[:3, 3] = 2.0 * n
            J[3, :3] = 2.0 * n
            try:
                step = np.linalg.solve(J, -F)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)):
                break
            n = n + step[:3]
            lam = lam + step[3]
        n = n / np.linalg.norm(n)
        is_minimum, escape = _constrained_curvature(D, n, lam)
        if converged and is_minimum:
            break

    return VertexNormal(
        direction=n,
        lagrange_multiplier=float(lam),
        converged=converged,
        iterations=iterations,
        is_minimum=is_minimum,
        residual=residual,
    )


def apply_state(mesh, per_vertex_state, normals):
    """Displace each vertex i by state[i] * normals[i]; faces unchanged."""
    state = np.asarray(per_vertex_state, dtype=float).reshape(-1)
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(state) != mesh.n_v or len(normals) != mesh.n_v:
        raise ValueError("state and normals must have one entry per vertex")
    return TriMesh(mesh.vertices + state[:, None] * normals, mesh.faces, validate=False)


def generate_tablet(width_m, height_m, mesh_size_m):
    """Planar z=0 tablet meshed with right isoceles triangles.

    The rectangle is centered at the origin and split into square
    cells of side >= mesh_size_m (the largest count of equal cells
    that keeps the legs at least mesh_size long). Each cell becomes
    two triangles wound counter-clockwise seen from +z.
    """
    if width_m <= 0 or height_m <= 0 or mesh_size_m <= 0:
        raise ValueError("tablet dimensions and mesh size must be positive")
    nx = max(1, int(np.floor(width_m / mesh_size_m + 1e-9)))
    ny = max(1, int(np.floor(height_m / mesh_size_m + 1e-9)))
    xs = np.linspace(-0.5 * width_m, 0.5 * width_m, nx + 1)
    ys = np.linspace(-0.5 * height_m, 0.5 * height_m, ny + 1)
    gx, gy = np.meshgrid(xs, ys)  # row index = y, column index = x
    vertices = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (iy * (nx + 1) + ix).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    faces = np.empty((2 * nx * ny, 3), dtype=np.int64)
    faces[0::2] = np.column_stack([v00, v10, v11])
    faces[1::2] = np.column_stack([v00, v11, v01])
    return TriMesh(vertices, faces, validate=False)


def add_spherical_defect(mesh, center_xy, sphere_radius_m, protrusion="outward"):
    """Press a spherical cap into a planar tablet.

    The sphere center sits on the z=0 plane, so the cap height equals
    the radius. Vertices inside the intersection circle move to the
    sphere surface along z (+z for "outward", -z for "inward"); the
    displacement is continuous, reaching zero at the circle.
    """
    if sphere_radius_m <= 0:
        raise ValueError("sphere radius must be positive")
    if protrusion not in ("outward", "inward"):
        raise ValueError("protrusion must be 'outward' or 'inward'")
    cx, cy = float(center_xy[0]), float(center_xy[1])
    lo, hi = mesh.bbox[0], mesh.bbox[1]
    if not (lo[0] <= cx <= hi[0] and lo[1] <= cy <= hi[1]):
        raise ValueError("defect center lies outside the tablet")

    v = mesh.vertices.copy()
    rho2 = (v[:, 0] - cx) ** 2 + (v[:, 1] - cy) ** 2
    inside = rho2 < sphere_radius_m**2
    z = np.sqrt(sphere_radius_m**2 - rho2[inside])
    v[inside, 2] = z if protrusion == "outward" else -z
    return TriMesh(v, mesh.faces, validate=False)


def mesh_report(mesh):
    """Summary dict for the mesh JSON report."""
    return {
        "n_v": mesh.n_v,
        "n_f": mesh.n_f,
        "bbox": mesh.bbox.tolist(),
        "area": mesh.area,
    }


def mesh_fingerprint(mesh):
    """Short content hash used to pair checkpoints with their mesh.

    Hashes the face-expanded corner soup so the value survives vertex
    merging and renumbering (e.g. an STL round trip), which preserve
    face geometry and order but not vertex indices.
    """
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices[mesh.faces]).tobytes())
    return h.hexdigest()[:12]
