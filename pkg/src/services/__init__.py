# Services Module
from .heatmap import Heatmap, HeatmapStack, encode, decode, bce_loss
from .geometry import centroid, trace_contour, ray_contour_distance, keypoint_distances
from .orientation import (
    PoseEstimate,
    phi_from_keypoints,
    theta_numeric,
    direction_from_angles,
    angular_error,
    estimate_pose,
)

__all__ = [
    "Heatmap",
    "HeatmapStack",
    "encode",
    "decode",
    "bce_loss",
    "centroid",
    "trace_contour",
    "ray_contour_distance",
    "keypoint_distances",
    "PoseEstimate",
    "phi_from_keypoints",
    "theta_numeric",
    "direction_from_angles",
    "angular_error",
    "estimate_pose",
]
