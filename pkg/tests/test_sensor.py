"""Camera model, scene casting, noise statistics, and cloud files."""

import json

import numpy as np
import pytest

from meshfusion.raycast import build_bvh
from meshfusion.sensor import (
    CameraModel,
    CameraPose,
    PointCloud,
    apply_noise,
    camera_rays,
    cast_scene,
    noise_sigma,
    read_cloud,
    simulate_cloud,
    write_cloud,
)


def small_model(**kw):
    args = dict(width=64, height=48, stride=1)
    args.update(kw)
    return CameraModel(**args)


def top_down_pose(height=0.5):
    return CameraPose.look_at([0.0, 0.0, height], [0.0, 0.0, 0.0])


# --- noise model ------------------------------------------------------------

def test_noise_sigma_reference_values():
    m = CameraModel()
    assert abs(noise_sigma(m, 0.5) - 0.020443207272874499) < 1e-15
    assert abs(noise_sigma(m, 0.9) - 0.022239959862008316) < 1e-15
    assert noise_sigma(m, 0.0) == m.a


def test_noise_sigma_grows_with_range():
    m = CameraModel()
    rho = np.linspace(0.2, 5.0, 40)
    sig = noise_sigma(m, rho)
    assert sig.shape == rho.shape
    assert np.all(np.diff(sig) > 0)


def test_noise_sigma_rejects_negative_range():
    with pytest.raises(ValueError):
        noise_sigma(CameraModel(), -0.1)


def test_model_validation():
    with pytest.raises(ValueError):
        CameraModel(a=0.0)
    with pytest.raises(ValueError):
        CameraModel(width=0)
    with pytest.raises(ValueError):
        CameraModel(fov_h=np.pi)
    with pytest.raises(ValueError):
        CameraModel(stride=0)


def test_model_dict_round_trip():
    m = small_model(stride=3, a=0.01, b=0.3, min_range=0.1, max_range=2.0)
    assert CameraModel.from_dict(m.to_dict()) == m


# --- pixel grid ------------------------------------------------------------

def test_camera_rays_count_and_norm():
    m = small_model()
    rays = camera_rays(m)
    assert rays.shape == (64 * 48, 3)
    np.testing.assert_allclose(np.linalg.norm(rays, axis=1), 1.0, atol=1e-12)


def test_camera_rays_span_the_fov():
    m = small_model()
    rays = camera_rays(m)
    sx = rays[:, 0] / rays[:, 2]
    sy = rays[:, 1] / rays[:, 2]
    # pixel centers stay strictly inside the half-angle envelope
    assert np.all(np.abs(sx) < np.tan(0.5 * m.fov_h))
    assert np.all(np.abs(sy) < np.tan(0.5 * m.fov_v))
    # outermost centers sit half a pixel in from the envelope
    edge = np.tan(0.5 * m.fov_h) * (1.0 - 1.0 / m.width)
    assert abs(sx.max() - edge) < 1e-12
    assert abs(sx.min() + edge) < 1e-12


def test_camera_rays_row_major_top_first():
    rays = camera_rays(small_model())
    sy = rays[:, 1] / rays[:, 2]
    assert sy[0] < 0  # top image row maps to -y
    assert abs(sy[0] - sy[1]) < 1e-14  # neighbors along a row share the vertical slope
    assert rays[0, 0] < rays[1, 0]  # and scan left to right
    assert sy[64] > sy[0]  # next row is lower in the image


def test_camera_rays_stride_subsamples_the_grid():
    full = camera_rays(small_model()).reshape(48, 64, 3)
    coarse = camera_rays(small_model(stride=4))
    np.testing.assert_array_equal(coarse, full[::4, ::4].reshape(-1, 3))


# --- poses ------------------------------------------------------------

def test_look_at_points_z_axis_at_target():
    pose = CameraPose.look_at([0.1, -0.2, 0.5], [0.0, 0.0, 0.0])
    R = pose.rotation
    forward = np.array([-0.1, 0.2, -0.5])
    forward /= np.linalg.norm(forward)
    np.testing.assert_allclose(R[:, 2], forward, atol=1e-12)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_look_at_handles_axis_parallel_to_up():
    pose = CameraPose.look_at([0.0, -1.0, 0.0], [0.0, 0.0, 0.0])
    R = pose.rotation
    np.testing.assert_allclose(R[:, 2], [0, 1, 0], atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_look_at_rejects_zero_baseline():
    with pytest.raises(ValueError):
        CameraPose.look_at([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])


def test_point_cloud_rejects_non_finite():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]), top_down_pose())


# --- scene casting ------------------------------------------------------------

def test_cast_scene_ranges_match_hit_norms(tablet, tablet_bvh):
    cast = cast_scene(tablet_bvh, top_down_pose(), small_model())
    assert len(cast.ranges) > 0
    np.testing.assert_allclose(
        np.linalg.norm(cast.hits_cam, axis=1), cast.ranges, atol=1e-12)
    assert cast.faces.min() >= 0 and cast.faces.max() < tablet.n_f
    assert cast.n_rays == 64 * 48
    assert cast.n_miss == cast.n_rays - len(cast.ranges)


def test_cast_scene_hits_lie_on_the_surface(tablet, tablet_bvh):
    pose = top_down_pose()
    cast = cast_scene(tablet_bvh, pose, small_model())
    world = pose.as_transform().apply(cast.hits_cam)
    assert np.abs(world[:, 2]).max() < 1e-9
    assert np.abs(world[:, 0]).max() <= 0.08 + 1e-9
    assert np.abs(world[:, 1]).max() <= 0.05 + 1e-9


def test_cast_scene_facing_away_sees_nothing(tablet_bvh):
    pose = CameraPose.look_at([0.0, 0.0, 0.5], [0.0, 0.0, 1.0])
    cast = cast_scene(tablet_bvh, pose, small_model())
    assert len(cast.ranges) == 0
    assert cast.n_miss == cast.n_rays


def test_cast_scene_honours_range_window(tablet_bvh):
    # camera at 0.5 m; a 0.4 m far plane discards every hit
    cast = cast_scene(tablet_bvh, top_down_pose(), small_model(max_range=0.4))
    assert len(cast.ranges) == 0
    # and a 0.2 m near plane discards a 0.1 m standoff
    cast = cast_scene(tablet_bvh, top_down_pose(0.1), small_model(min_range=0.2))
    assert len(cast.ranges) == 0


# --- noise application ------------------------------------------------------------

def test_tiny_noise_recovers_the_cast(tablet_bvh):
    cast = cast_scene(tablet_bvh, top_down_pose(), small_model(a=1e-300))
    cloud = apply_noise(cast, rng_seed=3)
    assert len(cloud) == len(cast.ranges)
    np.testing.assert_allclose(cloud.points, cast.hits_cam, atol=1e-12)


def test_noise_statistics_match_the_model(tablet_bvh):
    cast = cast_scene(tablet_bvh, top_down_pose(), small_model())
    cloud = apply_noise(cast, rng_seed=11)
    assert len(cloud) == len(cast.ranges)  # window wide enough, no drops
    sig = noise_sigma(cast.model, cast.ranges)
    z = (cloud.points - cast.hits_cam) / sig[:, None]
    n = z.size
    assert abs(z.std() - 1.0) < 0.02
    assert abs(z.mean()) < 3.0 / np.sqrt(n)


def test_noisy_points_respect_the_range_window(tablet_bvh):
    model = small_model(max_range=0.5005)
    cast = cast_scene(tablet_bvh, top_down_pose(), model)
    cloud = apply_noise(cast, rng_seed=5)
    assert 0 < len(cloud) < len(cast.ranges)  # some points jitter past the far plane
    rho = np.linalg.norm(cloud.points, axis=1)
    assert rho.max() <= model.max_range
    assert rho.min() >= model.min_range


def test_simulate_cloud_is_deterministic(tablet, tablet_bvh):
    pose = top_down_pose()
    model = small_model()
    c1 = simulate_cloud(tablet, tablet_bvh, pose, model, rng_seed=42)
    c2 = simulate_cloud(tablet, tablet_bvh, pose, model, rng_seed=42)
    c3 = simulate_cloud(tablet, tablet_bvh, pose, model, rng_seed=43)
    np.testing.assert_array_equal(c1.points, c2.points)
    assert not np.array_equal(c1.points, c3.points)


# --- cloud files ------------------------------------------------------------

def test_cloud_round_trip_is_bitwise(tmp_path, tablet, tablet_bvh):
    cloud = simulate_cloud(tablet, tablet_bvh, top_down_pose(), small_model(), 7, seq=4)
    path = tmp_path / "cloud_0004.ply"
    write_cloud(cloud, path, model=small_model(), extra={"config_hash": "abc123"})
    back = read_cloud(path)
    np.testing.assert_array_equal(back.points, cloud.points)
    np.testing.assert_array_equal(back.pose.position, cloud.pose.position)
    np.testing.assert_array_equal(back.pose.orientation, cloud.pose.orientation)
    assert back.seq == 4
    assert back.meta["config_hash"] == "abc123"
    assert CameraModel.from_dict(back.meta["model"]) == small_model()


def test_empty_cloud_round_trips(tmp_path):
    cloud = PointCloud(np.zeros((0, 3)), top_down_pose())
    path = tmp_path / "empty.ply"
    write_cloud(cloud, path)
    back = read_cloud(path)
    assert len(back) == 0


def test_three_point_cloud_values(tmp_path):
    pts = np.array([[0.1, -0.2, 0.3], [1e-17, 2.0, -3.0], [np.pi, np.e, np.sqrt(2)]])
    path = tmp_path / "three.ply"
    write_cloud(PointCloud(pts, top_down_pose()), path)
    np.testing.assert_array_equal(read_cloud(path).points, pts)


def test_read_cloud_rejects_missing_sidecar(tmp_path):
    path = tmp_path / "orphan.ply"
    write_cloud(PointCloud(np.zeros((1, 3)), top_down_pose()), path)
    (tmp_path / "orphan.ply.json").unlink()
    with pytest.raises(FileNotFoundError):
        read_cloud(path)


def test_read_cloud_rejects_non_ply(tmp_path):
    path = tmp_path / "junk.ply"
    path.write_text("OFF\n3 1 0\n")
    with pytest.raises(ValueError, match="not a PLY"):
        read_cloud(path)


def test_read_cloud_rejects_count_mismatch(tmp_path):
    path = tmp_path / "short.ply"
    write_cloud(PointCloud(np.zeros((2, 3)), top_down_pose()), path)
    text = path.read_text().replace("element vertex 2", "element vertex 5")
    path.write_text(text)
    with pytest.raises(ValueError, match="header says 5"):
        read_cloud(path)


def test_read_cloud_rejects_headerless_file(tmp_path):
    path = tmp_path / "noend.ply"
    path.write_text("ply\nformat ascii 1.0\nelement vertex 1\n")
    with pytest.raises(ValueError, match="end_header"):
        read_cloud(path)


def test_points_world_applies_the_pose(tablet, tablet_bvh):
    pose = CameraPose.look_at([0.05, -0.02, 0.4], [0.0, 0.0, 0.0])
    cloud = simulate_cloud(tablet, tablet_bvh, pose, small_model(a=1e-300), 1)
    world = cloud.points_world()
    assert np.abs(world[:, 2]).max() < 1e-9  # noiseless hits sit on the z=0 plate
