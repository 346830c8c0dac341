import numpy as np
import pytest

from meshfusion import TriMesh, generate_tablet
from meshfusion.raycast import build_bvh


@pytest.fixture
def fan_mesh():
    """Five coplanar vertices fanned into three z=0 faces, all wound +z."""
    verts = np.array([
        [0.0, 0.0, 0.0],
        [3.0, 0.0, 0.0],
        [6.0, -1.0, 0.0],
        [5.0, 2.0, 0.0],
        [2.0, 2.0, 0.0],
    ])
    faces = np.array([[0, 1, 4], [1, 3, 4], [1, 2, 3]])
    return TriMesh(verts, faces)


@pytest.fixture(scope="session")
def tablet():
    """The default workpiece: 160 x 100 mm at 5 mm mesh size, 1280 faces."""
    return generate_tablet(0.16, 0.10, 0.005)


@pytest.fixture(scope="session")
def tablet_bvh(tablet):
    return build_bvh(tablet)


@pytest.fixture(scope="session")
def tablet_small():
    return generate_tablet(0.04, 0.03, 0.01)


@pytest.fixture(scope="session")
def soup_mesh():
    """Fifty disjoint random triangles in the unit cube; no shared vertices."""
    rng = np.random.default_rng(321)
    centers = rng.uniform(-0.4, 0.4, size=(50, 1, 3))
    tris = centers + rng.uniform(-0.08, 0.08, size=(50, 3, 3))
    verts = tris.reshape(-1, 3)
    faces = np.arange(150, dtype=np.int64).reshape(-1, 3)
    return TriMesh(verts, faces)


@pytest.fixture(scope="session")
def wavy_mesh():
    """Non-planar 80 x 60 mm sheet so rigid alignment is fully observable."""
    base = generate_tablet(0.08, 0.06, 0.002)
    v = base.vertices.copy()
    v[:, 2] = 0.008 * np.sin(2 * np.pi * v[:, 0] / 0.05) * np.cos(2 * np.pi * v[:, 1] / 0.04)
    return TriMesh(v, base.faces, validate=False)
