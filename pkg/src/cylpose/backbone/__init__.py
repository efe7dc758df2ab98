"""Rotation-equivariant backbone, heatmap decoding, and target maps."""

from .decode import (
    AXIS_SHARPNESS,
    DegenerateThetaError,
    HeatmapPair,
    KeypointEstimate,
    axis_soft_argmax,
    decode_pair,
    estimates_to_pose,
    fuse_theta,
    sinusoidal_soft_argmax,
)
from .net import Backbone, BackboneConfig, predictions_to_estimates
from .targets import DEFAULT_SIGMA_BINS, gt_heatmaps

__all__ = [
    "AXIS_SHARPNESS",
    "Backbone",
    "BackboneConfig",
    "DEFAULT_SIGMA_BINS",
    "DegenerateThetaError",
    "HeatmapPair",
    "KeypointEstimate",
    "axis_soft_argmax",
    "decode_pair",
    "estimates_to_pose",
    "fuse_theta",
    "gt_heatmaps",
    "predictions_to_estimates",
    "sinusoidal_soft_argmax",
]
