"""Synthesize noisy depth-camera acquisitions of the defective tablet.

One scene cast against the truth mesh is shared by all acquisitions;
each cloud then perturbs the hit points with range-dependent isotropic
noise, sigma(rho) = a * exp(b * rho). The script prints the noise
curve, casts the scene, verifies the empirical noise against the
model, and writes one cloud as PLY plus its JSON sidecar.
"""

import os

import numpy as np

from meshfusion.mesh import add_spherical_defect, generate_tablet
from meshfusion.raycast import build_bvh
from meshfusion.sensor import (
    CameraModel,
    CameraPose,
    apply_noise,
    cast_scene,
    noise_sigma,
    read_cloud,
    write_cloud,
)

MM = 1e-3
OUT = os.path.join(os.path.dirname(__file__), "out", "02_simulate_clouds")


def main():
    os.makedirs(OUT, exist_ok=True)

    model = CameraModel(width=640, height=360)
    print("noise curve sigma(rho) = a exp(b rho), "
          f"a={model.a} m, b={model.b} 1/m")
    for rho in (0.2, 0.5, 1.0, 2.0, 4.0):
        print(f"  rho {rho:4.1f} m   sigma {noise_sigma(model, rho) * 1e3:6.2f} mm")

    truth = add_spherical_defect(
        generate_tablet(160 * MM, 100 * MM, 1 * MM), (0.0, 0.0), 5 * MM)
    bvh = build_bvh(truth)
    pose = CameraPose.look_at((0.0, 0.0, 0.5), (0.0, 0.0, 0.0))

    cast = cast_scene(bvh, pose, model)
    print(f"\ncast {cast.n_rays} rays: {len(cast.hits_cam)} tablet hits, "
          f"{cast.n_miss} misses")
    print(f"hit ranges {cast.ranges.min():.4f} .. {cast.ranges.max():.4f} m")

    # the same cast perturbed under different seeds; at this range no
    # noisy point leaves the range window, so rows stay aligned
    print("\nper-cloud empirical noise (should match sigma(rho) ~ "
          f"{noise_sigma(model, 0.5) * 1e3:.2f} mm)")
    for seed in range(3):
        cloud = apply_noise(cast, [42, seed], seq=seed)
        assert len(cloud.points) == len(cast.hits_cam)
        per_axis = (cloud.points - cast.hits_cam).std(axis=0) * 1e3
        print(f"  seed {seed}: n={len(cloud.points)}  "
              f"std x/y/z {per_axis[0]:.2f}/{per_axis[1]:.2f}/{per_axis[2]:.2f} mm")

    cloud = apply_noise(cast, [42, 0], seq=0)
    path = os.path.join(OUT, "cloud_0000.ply")
    write_cloud(cloud, path, model=model, extra={"note": "demo acquisition"})
    again = read_cloud(path)
    stable = np.array_equal(again.points, cloud.points)
    print(f"\nwrote {path} (+ sidecar), re-read bitwise equal: {stable}")


if __name__ == "__main__":
    main()
