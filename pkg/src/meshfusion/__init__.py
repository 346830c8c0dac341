"""Per-face surface-deviation estimation against a CAD triangle mesh.

Noisy depth-camera clouds are corresponded to the faces of a nominal
mesh; a recursive weighted least-squares filter (or its information
dual) fuses the residuals into one signed offset per face, which is
then scored against ground truth.
"""

from .estimator import (
    EstimatorState,
    MeasurementBatch,
    assemble_batch,
    batch_wls_oracle,
    compress_batch,
    info_update,
    recover,
    rwls_update,
)
from .evaluation import (
    EvalReport,
    SelectionMask,
    error_stats,
    flag_defects,
    reference_state,
    rmse,
    selection_mask,
)
from .mesh import (
    TriMesh,
    add_spherical_defect,
    apply_state,
    face_normal,
    generate_tablet,
    mesh_fingerprint,
    vertex_normal_newton,
)
from .pipeline import RunConfig, run_pipeline, run_sweep
from .raycast import Bvh, build_bvh, closest_point_batch, correspond, ray_cast, ray_cast_batch
from .registration import icp_align
from .sensor import (
    CameraModel,
    CameraPose,
    PointCloud,
    noise_sigma,
    read_cloud,
    simulate_cloud,
    write_cloud,
)
from .stl import parse_stl, write_stl
from .transforms import RigidTransform

__version__ = "0.1.0"
