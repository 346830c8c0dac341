"""Rigid ICP alignment against the nominal mesh."""

import numpy as np
import pytest

from meshfusion.raycast import build_bvh, closest_point_batch
from meshfusion.registration import icp_align
from meshfusion.transforms import RigidTransform


@pytest.fixture(scope="module")
def wavy_bvh(wavy_mesh):
    return build_bvh(wavy_mesh)


def surface_samples(mesh, n, seed):
    """Random points on the mesh via area-weighted barycentric draws."""
    rng = np.random.default_rng(seed)
    p = mesh.face_areas / mesh.face_areas.sum()
    f = rng.choice(mesh.n_f, size=n, p=p)
    r1, r2 = rng.random(n), rng.random(n)
    swap = r1 + r2 > 1
    r1[swap], r2[swap] = 1 - r1[swap], 1 - r2[swap]
    a, b, c = (mesh.vertices[mesh.faces[f, k]] for k in range(3))
    return a + r1[:, None] * (b - a) + r2[:, None] * (c - a)


def small_motion(angle_deg=1.0, shift=0.003):
    return RigidTransform.from_axis_angle(
        [0.3, -0.5, 0.8], np.deg2rad(angle_deg),
        translation=[shift, -0.5 * shift, 0.4 * shift])


def test_identity_cloud_stays_put(wavy_mesh, wavy_bvh):
    pts = surface_samples(wavy_mesh, 600, seed=1)
    T, rms = icp_align(pts, wavy_mesh, wavy_bvh)
    assert rms < 1e-9
    assert np.linalg.norm(T.translation) < 1e-9
    assert T.rotation_angle() < 1e-8


def test_recovers_a_known_motion(wavy_mesh, wavy_bvh):
    pts = surface_samples(wavy_mesh, 800, seed=2)
    T_true = small_motion(1.0, 0.003)
    moved = T_true.inverse().apply(pts)  # displaced cloud off the surface
    T, rms = icp_align(moved, wavy_mesh, wavy_bvh, tol=1e-9, max_iter=200)
    assert rms < 1e-7
    # recovered motion undoes the displacement
    residual = T.compose(T_true.inverse())
    assert np.linalg.norm(residual.translation) < 1e-6
    assert residual.rotation_angle() < 1e-6


def test_reduces_residual_on_noisy_cloud(wavy_mesh, wavy_bvh):
    rng = np.random.default_rng(3)
    pts = surface_samples(wavy_mesh, 800, seed=4)
    noisy = small_motion(1.5, 0.004).apply(pts) + 2e-4 * rng.standard_normal(pts.shape)
    _, _, before = closest_point_batch(wavy_bvh, noisy)
    T, rms = icp_align(noisy, wavy_mesh, wavy_bvh)
    _, _, after = closest_point_batch(wavy_bvh, T.apply(noisy))
    assert np.sqrt(np.mean(after**2)) < np.sqrt(np.mean(before**2))
    assert rms < 5e-4  # settles near the noise floor


def test_initial_guess_is_honoured(wavy_mesh, wavy_bvh):
    pts = surface_samples(wavy_mesh, 500, seed=5)
    T_true = small_motion(2.0, 0.005)
    moved = T_true.inverse().apply(pts)
    # seeding with the exact answer converges immediately
    T, rms = icp_align(moved, wavy_mesh, wavy_bvh, initial=T_true)
    assert rms < 1e-9
    residual = T.compose(T_true.inverse())
    assert np.linalg.norm(residual.translation) < 1e-9


def test_rejects_degenerate_cloud(wavy_mesh, wavy_bvh):
    with pytest.raises(ValueError, match="at least 3"):
        icp_align(np.zeros((2, 3)), wavy_mesh, wavy_bvh)


def test_alignment_is_pose_equivariant(wavy_mesh, wavy_bvh):
    # conjugating the displacement by a world motion leaves the
    # recovered correction expressed in the same (mesh) frame
    pts = surface_samples(wavy_mesh, 600, seed=6)
    moved = small_motion(1.0, 0.002).inverse().apply(pts)
    T1, rms1 = icp_align(moved, wavy_mesh, wavy_bvh)
    T2, rms2 = icp_align(moved.copy(), wavy_mesh, wavy_bvh)
    assert abs(rms1 - rms2) < 1e-15
    np.testing.assert_array_equal(T1.translation, T2.translation)
    np.testing.assert_array_equal(T1.rotation, T2.rotation)
