"""Per-face deviation estimation from point-cloud residuals.

The state is one scalar per nominal face: the signed offset of the
measured surface along the face normal. Each cloud contributes
residuals delta = z - footpoint with isotropic per-point covariance
sigma^2 I3; the observation matrix stacks one 3-row block per point
whose only nonzero column (the point's face) holds the face normal.
There is no process model: the surface is static, so the filter is a
pure sequence of measurement updates.

Two equivalent forms are provided. The covariance form implements the
textbook gain update

    S = H P H^T + R,  W = P H^T S^-1,
    x+ = x + W (delta - H x),  P+ = (I - W H) P

and serves as the readable reference. The information form

    Omega+ = H^T R^-1 H + Omega,  xi+ = H^T R^-1 delta + xi

is the production path: because every measurement touches a single
face, H^T R^-1 H is diagonal, so with a diagonal prior the whole
information matrix stays diagonal and one update is two bincounts.
"""

import json

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .raycast import correspond_batch
from .sensor import noise_sigma

__all__ = [
    "MeasurementBatch",
    "EstimatorState",
    "assemble_batch",
    "project_batch",
    "compress_batch",
    "rwls_update",
    "info_update",
    "recover",
    "batch_wls_oracle",
    "save_state",
    "load_state",
]


class MeasurementBatch:
    """Residual observations of one cloud against the nominal mesh.

    Parameters
    ----------
    residuals : (n, 3) array
        delta = measured point - footpoint, metres, world frame.
    face_of : (n,) int array
        Nominal face index of each residual.
    sigma_of : (n,) array
        Per-point noise standard deviation, metres.
    normals : (n, 3) array
        Unit normal of the face of each residual.
    """

    __slots__ = ("residuals", "face_of", "sigma_of", "normals", "diagnostics")

    def __init__(self, residuals, face_of, sigma_of, normals, diagnostics=None):
        self.residuals = np.asarray(residuals, dtype=float).reshape(-1, 3)
        self.face_of = np.asarray(face_of, dtype=np.int64).reshape(-1)
        self.sigma_of = np.asarray(sigma_of, dtype=float).reshape(-1)
        self.normals = np.asarray(normals, dtype=float).reshape(-1, 3)
        n = len(self.residuals)
        if not (len(self.face_of) == len(self.sigma_of) == len(self.normals) == n):
            raise ValueError("batch fields must have equal length")
        if np.any(self.sigma_of <= 0):
            raise ValueError("sigma must be positive")
        self.diagnostics = diagnostics or {}

    def __len__(self):
        return len(self.residuals)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=int), np.zeros(0), np.zeros((0, 3)))

    def projections(self):
        """Scalar components n^T delta, one per residual."""
        return np.einsum("ij,ij->i", self.normals, self.residuals)


class EstimatorState:
    """Estimate of the per-face deviation vector with its uncertainty.

    Covariance form stores (x, P) with P dense. Information form
    stores (xi, omega); a 1-D omega is the diagonal fast path, a 2-D
    omega is a full information matrix. k counts processed batches.
    """

    __slots__ = ("representation", "n_f", "k", "mesh_fingerprint", "x", "P", "xi", "omega")

    def __init__(self, representation, n_f, k=0, mesh_fingerprint="",
                 x=None, P=None, xi=None, omega=None):
        if representation not in ("covariance", "information"):
            raise ValueError(f"unknown representation {representation!r}")
        self.representation = representation
        self.n_f = int(n_f)
        self.k = int(k)
        self.mesh_fingerprint = mesh_fingerprint
        self.x = None if x is None else np.asarray(x, dtype=float).reshape(n_f)
        self.P = None if P is None else np.asarray(P, dtype=float).reshape(n_f, n_f)
        self.xi = None if xi is None else np.asarray(xi, dtype=float).reshape(n_f)
        self.omega = None if omega is None else np.asarray(omega, dtype=float)
        if representation == "covariance" and (self.x is None or self.P is None):
            raise ValueError("covariance form needs x and P")
        if representation == "information" and (self.xi is None or self.omega is None):
            raise ValueError("information form needs xi and omega")

    @classmethod
    def prior(cls, n_f, sigma0, representation="covariance", mesh_fingerprint=""):
        """Zero-mean prior with std sigma0 on every face."""
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if representation == "covariance":
            return cls("covariance", n_f, x=np.zeros(n_f),
                       P=np.eye(n_f) * sigma0**2, mesh_fingerprint=mesh_fingerprint)
        return cls("information", n_f, xi=np.zeros(n_f),
                   omega=np.full(n_f, 1.0 / sigma0**2), mesh_fingerprint=mesh_fingerprint)

    def copy(self):
        return EstimatorState(
            self.representation, self.n_f, k=self.k, mesh_fingerprint=self.mesh_fingerprint,
            x=None if self.x is None else self.x.copy(),
            P=None if self.P is None else self.P.copy(),
            xi=None if self.xi is None else self.xi.copy(),
            omega=None if self.omega is None else self.omega.copy(),
        )

    def mean(self):
        """x-hat without materializing a covariance state."""
        if self.representation == "covariance":
            return self.x.copy()
        if self.omega.ndim == 1:
            return self.xi / self.omega
        c = cho_factor(self.omega)
        return cho_solve(c, self.xi)

    def variance_diag(self):
        """Diagonal of P for either representation."""
        if self.representation == "covariance":
            return np.diag(self.P).copy()
        if self.omega.ndim == 1:
            return 1.0 / self.omega
        c = cho_factor(self.omega)
        return np.diag(cho_solve(c, np.eye(self.n_f))).copy()


def assemble_batch(cloud, model, mesh, bvh, border_exclusion_m=0.006,
                   mode="ray", correction=None):
    """Turn one cloud into residual observations against the nominal mesh.

    The cloud is mapped to the world frame through its pose (optionally
    refined by ``correction``), corresponded to the mesh, and filtered:
    points without a correspondence or whose footpoint lies closer than
    ``border_exclusion_m`` to the mesh boundary are dropped and counted
    in the batch diagnostics. Each survivor yields delta = z - footpoint
    with sigma evaluated at the camera-frame range of the noisy point,
    which is all the estimator can observe.
    """
    rho = np.linalg.norm(cloud.points, axis=1)
    cam2world = cloud.pose.as_transform()
    if correction is not None:
        cam2world = correction.compose(cam2world)
    pts_w = cam2world.apply(cloud.points)
    origin = cam2world.translation

    res = correspond_batch(bvh, mesh, pts_w, origin, mode=mode)
    valid = res["face"] >= 0
    keep = valid & (res["border_distance"] >= border_exclusion_m)
    faces = res["face"][keep]
    return MeasurementBatch(
        residuals=pts_w[keep] - res["footpoint"][keep],
        face_of=faces,
        sigma_of=noise_sigma(model, rho[keep]),
        normals=mesh.face_normals[faces],
        diagnostics={
            "n_points": len(pts_w),
            "n_no_correspondence": int((~valid).sum()),
            "n_border_dropped": int((valid & ~keep).sum()),
            "n_ray_fallback": res["n_fallback"],
        },
    )


def project_batch(batch):
    """Replace each delta by its normal component (n^T delta) n.

    For isotropic per-point covariance this loses nothing: the
    tangential components of delta carry no information about the
    along-normal state, so the projected batch updates the filter
    identically. The fast path relies on this identity.
    """
    y = batch.projections()
    return MeasurementBatch(
        y[:, None] * batch.normals, batch.face_of, batch.sigma_of, batch.normals,
        diagnostics=dict(batch.diagnostics),
    )


def compress_batch(batch):
    """Fuse same-face measurements into one pseudo-measurement each.

    Within a batch all residuals of face j share the normal n_j, so
    their information sums to a single scalar observation: weighted
    mean ybar with weight wsum = sum(1/sigma_i^2), re-expressed as the
    3-vector ybar * n_j with sigma' = 1/sqrt(wsum). The compressed
    batch is algebraically equivalent to the original for any update.
    """
    if len(batch) == 0:
        return batch
    faces_u, first, inverse = np.unique(batch.face_of, return_index=True, return_inverse=True)
    w = 1.0 / batch.sigma_of**2
    wsum = np.bincount(inverse, weights=w)
    ysum = np.bincount(inverse, weights=w * batch.projections())
    ybar = ysum / wsum
    normals = batch.normals[first]
    return MeasurementBatch(
        ybar[:, None] * normals, faces_u, 1.0 / np.sqrt(wsum), normals,
        diagnostics=dict(batch.diagnostics),
    )


def _dense_H(batch, n_f):
    """Literal observation matrix, one 3-row block per measurement."""
    n_p = len(batch)
    H = np.zeros((3 * n_p, n_f))
    rows = 3 * np.arange(n_p)
    for axis in range(3):
        H[rows + axis, batch.face_of] = batch.normals[:, axis]
    return H


def _check_faces(batch, n_f):
    if len(batch) and (batch.face_of.min() < 0 or batch.face_of.max() >= n_f):
        raise ValueError("batch face index out of range for this state")


def rwls_update(state, batch, max_dense_nf=2000):
    """Covariance-form update; the readable reference implementation.

    Builds H and R literally, so cost grows with both the batch size
    and n_f; it refuses states larger than ``max_dense_nf`` faces.
    Production runs use info_update, which is algebraically identical.
    """
    if state.representation != "covariance":
        raise ValueError("rwls_update needs a covariance-form state")
    if state.n_f > max_dense_nf:
        raise ValueError(
            f"n_f={state.n_f} exceeds the dense-form limit {max_dense_nf}; "
            "use info_update or raise max_dense_nf"
        )
    _check_faces(batch, state.n_f)
    out = state.copy()
    out.k += 1
    if len(batch) == 0:
        return out
    if not (np.all(np.isfinite(batch.residuals)) and np.all(np.isfinite(batch.sigma_of))):
        raise ValueError("non-finite values in measurement batch")

    H = _dense_H(batch, state.n_f)
    r_diag = np.repeat(batch.sigma_of**2, 3)
    delta = batch.residuals.reshape(-1)

    S = H @ state.P @ H.T
    S[np.diag_indices_from(S)] += r_diag
    PHt = state.P @ H.T
    try:
        W = np.linalg.solve(S, PHt.T).T  # S symmetric
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"innovation covariance singular ({exc}); "
            "sigma=0 measurements on a collapsed prior are inconsistent"
        ) from None
    out.x = state.x + W @ (delta - H @ state.x)
    P = (np.eye(state.n_f) - W @ H) @ state.P
    out.P = 0.5 * (P + P.T)
    return out


def info_update(state, batch):
    """Information-form update: two weighted bincounts per batch."""
    if state.representation != "information":
        raise ValueError("info_update needs an information-form state")
    _check_faces(batch, state.n_f)
    out = state.copy()
    out.k += 1
    if len(batch) == 0:
        return out
    if not (np.all(np.isfinite(batch.residuals)) and np.all(np.isfinite(batch.sigma_of))):
        raise ValueError("non-finite values in measurement batch")

    w = 1.0 / batch.sigma_of**2
    add_omega = np.bincount(batch.face_of, weights=w, minlength=state.n_f)
    add_xi = np.bincount(batch.face_of, weights=w * batch.projections(), minlength=state.n_f)
    if out.omega.ndim == 1:
        out.omega = out.omega + add_omega
    else:
        out.omega = out.omega + np.diag(add_omega)
    out.xi = out.xi + add_xi
    return out


def recover(state):
    """Covariance form of an information state: P = Omega^-1, x = P xi."""
    if state.representation == "covariance":
        return state.copy()
    if state.omega.ndim == 1:
        if np.any(state.omega <= 0):
            raise np.linalg.LinAlgError("information diagonal lost positive definiteness")
        P = np.diag(1.0 / state.omega)
        x = state.xi / state.omega
    else:
        try:
            c = cho_factor(state.omega)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError("information matrix lost positive definiteness") from None
        x = cho_solve(c, state.xi)
        P = cho_solve(c, np.eye(state.n_f))
        P = 0.5 * (P + P.T)
    return EstimatorState("covariance", state.n_f, k=state.k,
                          mesh_fingerprint=state.mesh_fingerprint, x=x, P=P)


def to_information(state):
    """Information form of a covariance state (dense Omega)."""
    if state.representation == "information":
        return state.copy()
    c = cho_factor(state.P)
    omega = cho_solve(c, np.eye(state.n_f))
    omega = 0.5 * (omega + omega.T)
    return EstimatorState("information", state.n_f, k=state.k,
                          mesh_fingerprint=state.mesh_fingerprint,
                          xi=omega @ state.x, omega=omega)


def batch_wls_oracle(batches, prior):
    """One-shot weighted least squares over all batches stacked.

    Solves (sum H^T R^-1 H + P0^-1) x = sum H^T R^-1 delta + P0^-1 x0
    as a single normal-equation system. Order-free by construction;
    used to cross-check the sequential updates.
    """
    if prior.representation != "covariance":
        prior = recover(prior)
    n_f = prior.n_f
    A = np.linalg.inv(prior.P)
    rhs = A @ prior.x
    k = prior.k
    for batch in batches:
        _check_faces(batch, n_f)
        k += 1
        if len(batch) == 0:
            continue
        H = _dense_H(batch, n_f)
        rinv = np.repeat(1.0 / batch.sigma_of**2, 3)
        A += H.T * rinv @ H
        rhs += H.T @ (rinv * batch.residuals.reshape(-1))
    try:
        c = cho_factor(A)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("stacked normal equations are singular") from None
    x = cho_solve(c, rhs)
    P = cho_solve(c, np.eye(n_f))
    return EstimatorState("covariance", n_f, k=k,
                          mesh_fingerprint=prior.mesh_fingerprint,
                          x=x, P=0.5 * (P + P.T))


_FULL_MATRIX_LIMIT = 256  # above this, checkpoints keep diagonals only


def state_to_dict(state):
    d = {
        "k": state.k,
        "n_f": state.n_f,
        "representation": state.representation,
        "mesh_fingerprint": state.mesh_fingerprint,
    }
    if state.representation == "covariance":
        d["x_hat"] = state.x.tolist()
        d["diag_P"] = np.diag(state.P).tolist()
        if state.n_f <= _FULL_MATRIX_LIMIT:
            d["P"] = state.P.reshape(-1).tolist()
    else:
        d["xi"] = state.xi.tolist()
        if state.omega.ndim == 1:
            d["diag_omega"] = state.omega.tolist()
        else:
            d["diag_omega"] = np.diag(state.omega).tolist()
            if state.n_f <= _FULL_MATRIX_LIMIT:
                d["omega"] = state.omega.reshape(-1).tolist()
    return d


def state_from_dict(d):
    n_f = d["n_f"]
    rep = d["representation"]
    if rep == "covariance":
        P = (np.array(d["P"]).reshape(n_f, n_f) if "P" in d
             else np.diag(np.array(d["diag_P"], dtype=float)))
        return EstimatorState(rep, n_f, k=d["k"], mesh_fingerprint=d["mesh_fingerprint"],
                              x=np.array(d["x_hat"], dtype=float), P=P)
    omega = (np.array(d["omega"]).reshape(n_f, n_f) if "omega" in d
             else np.array(d["diag_omega"], dtype=float))
    return EstimatorState(rep, n_f, k=d["k"], mesh_fingerprint=d["mesh_fingerprint"],
                          xi=np.array(d["xi"], dtype=float), omega=omega)


def save_state(state, path, extra=None):
    d = state_to_dict(state)
    if extra:
        d.update(extra)
    with open(path, "w") as fh:
        json.dump(d, fh)


def load_state(path):
    """Returns (state, extras) where extras holds any foreign keys."""
    with open(path) as fh:
        d = json.load(fh)
    known = {"k", "n_f", "representation", "mesh_fingerprint",
             "x_hat", "diag_P", "P", "xi", "diag_omega", "omega"}
    extras = {k: v for k, v in d.items() if k not in known}
    return state_from_dict(d), extras
