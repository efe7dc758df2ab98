"""Synthetic multi-view occluded gait data generator."""

from .body import (
    GAIT_CONDITIONS,
    GaitParams,
    LimbSkeleton,
    generate_surface_cloud,
    sample_gait_params,
    sample_gait_pose,
    sample_skeleton,
)
from .dataset import (
    Dataset,
    DatasetSpec,
    DomainShiftConfig,
    LABELED_DOMAIN,
    MultiviewGroup,
    Sample,
    UNLABELED_DOMAIN,
    build_dataset,
    convention_offset_pose,
    generate_dataset,
    load_dataset,
    make_labeled_sample,
    make_multiview_group,
    synthetic_member_as_labeled,
)
from .occlusion import (
    MAX_ELEVATION,
    VIEW_AZIMUTHS_DEG,
    VIEW_IDS,
    CameraViewpoint,
    add_noise,
    make_viewpoints,
    simulate_occlusion,
)

__all__ = [
    "GAIT_CONDITIONS",
    "GaitParams",
    "LimbSkeleton",
    "generate_surface_cloud",
    "sample_gait_params",
    "sample_gait_pose",
    "sample_skeleton",
    "Dataset",
    "DatasetSpec",
    "DomainShiftConfig",
    "LABELED_DOMAIN",
    "MultiviewGroup",
    "Sample",
    "UNLABELED_DOMAIN",
    "build_dataset",
    "convention_offset_pose",
    "generate_dataset",
    "load_dataset",
    "make_labeled_sample",
    "make_multiview_group",
    "synthetic_member_as_labeled",
    "MAX_ELEVATION",
    "VIEW_AZIMUTHS_DEG",
    "VIEW_IDS",
    "CameraViewpoint",
    "add_noise",
    "make_viewpoints",
    "simulate_occlusion",
]
