"""Rotation-equivariant, occlusion-invariant 3D lower-limb keypoint
estimation from depth-derived point clouds.

The package trains a cylindrical-voxel convolutional network whose theta
axis is handled periodically, making predictions equivariant to rotations
about the vertical axis, and uses multi-view consistency on synthetic gait
sequences to stay accurate under view-dependent self-occlusion.
"""

from .estimator import CylindricalPoseEstimator, CylindricalVoxelizer
from .geom import (
    CylindricalGrid,
    GridConfig,
    NormalizationTransform,
    PointCloud,
    ViewRotation,
    minmax_normalize,
    voxelize_cylindrical,
)
from .pose import JOINT_NAMES, N_JOINTS, Pose

__all__ = [
    "CylindricalGrid",
    "CylindricalPoseEstimator",
    "CylindricalVoxelizer",
    "GridConfig",
    "NormalizationTransform",
    "PointCloud",
    "ViewRotation",
    "minmax_normalize",
    "voxelize_cylindrical",
    "Pose",
    "JOINT_NAMES",
    "N_JOINTS",
]

__version__ = "0.1.0"
