"""Uncertainty-aware quadrotor trajectory planning among cuboid obstacles.

Pipeline: noisy facade point clouds -> RANSAC plane estimates -> cuboids
with empirical pose/size error banks -> sample-based collision surrogate
(RKHS mean discrepancy of the band-violation distribution) -> cross-entropy
or sequential-convex trajectory optimization -> benchmark harness.
"""

from .geometry import Cuboid, CuboidSize, GroundPose2D, LocalTransform, local_transform, sdf, sdf_batch, wrap_angle
from .mmd import (
    KernelConfig,
    SafetyBand,
    bandwidth_from_violations,
    flatten_grid,
    mmd_per_query,
    mmd_point,
    mmd_trajectory,
    violation,
    violation_matrix,
    violation_tensor,
)
from .perception import (
    CameraModel,
    LabeledCloud,
    PerceptionResult,
    PlaneFit,
    back_project_corners,
    estimate_nominal,
    face_rectangles,
    face_truth,
    look_at_camera,
    ransac_plane,
    synthesize_cloud,
    visible_faces,
)
from .planner_cem import CemConfig, CemTrace, cem_minimize, min_jerk_coefficients, plan_cem, suggested_duration
from .planner_scp import ScpConfig, ScpTrace, contains_cuboid, inflate, mmd_rank_init, plan_scp, scp_refine, signed_sdf
from .trajectory import (
    BoundaryState,
    Limits,
    PolyTrajectory,
    WaypointTrajectory,
    basis_matrix,
    evaluate,
    limit_penalty,
    second_difference_matrix,
    smoothness_cost,
    stomp_samples,
)
from .voxel import DistanceField, VoxelGrid, edt, query_bench, rasterize, trilinear_lookup
from .uncertainty import (
    ErrorBank,
    Mixture1D,
    SampleGrid,
    UncertainCuboid,
    calibrate_bank,
    default_bank,
    draw_grid,
    zero_bank,
)

__all__ = [
    "BoundaryState",
    "CameraModel",
    "CemConfig",
    "CemTrace",
    "Cuboid",
    "CuboidSize",
    "DistanceField",
    "ErrorBank",
    "GroundPose2D",
    "KernelConfig",
    "LabeledCloud",
    "Limits",
    "LocalTransform",
    "Mixture1D",
    "PerceptionResult",
    "PlaneFit",
    "PolyTrajectory",
    "SafetyBand",
    "SampleGrid",
    "ScpConfig",
    "ScpTrace",
    "UncertainCuboid",
    "VoxelGrid",
    "WaypointTrajectory",
    "back_project_corners",
    "bandwidth_from_violations",
    "basis_matrix",
    "calibrate_bank",
    "cem_minimize",
    "contains_cuboid",
    "default_bank",
    "draw_grid",
    "edt",
    "estimate_nominal",
    "evaluate",
    "face_rectangles",
    "face_truth",
    "flatten_grid",
    "inflate",
    "limit_penalty",
    "local_transform",
    "look_at_camera",
    "min_jerk_coefficients",
    "mmd_per_query",
    "mmd_point",
    "mmd_rank_init",
    "mmd_trajectory",
    "plan_cem",
    "plan_scp",
    "query_bench",
    "ransac_plane",
    "rasterize",
    "scp_refine",
    "sdf",
    "sdf_batch",
    "second_difference_matrix",
    "signed_sdf",
    "smoothness_cost",
    "stomp_samples",
    "suggested_duration",
    "synthesize_cloud",
    "trilinear_lookup",
    "violation",
    "violation_matrix",
    "violation_tensor",
    "visible_faces",
    "wrap_angle",
    "zero_bank",
]
