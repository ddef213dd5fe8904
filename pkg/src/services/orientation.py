"""
Orientation from key points: phi from the tip->top vector, theta from the
piecewise square-root formula over the normalised key point distances, and
the angular error between direction vectors.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from src.core.errors import CoincidentKeypoints
from src.core.models import (
    DirectionVector,
    KeyPoint,
    OrientationAngles,
    ShapeParams,
    SilhouetteMask,
    cos_deg,
    sin_deg,
)
from .geometry import KeypointDistances, keypoint_distances

# Key points closer than this (px) are treated as coincident
COINCIDENT_TOLERANCE = 1e-9


class ThetaBranch(str, Enum):
    TOP = "top"
    TIP = "tip"


@dataclass(frozen=True)
class PoseEstimate:
    angles: OrientationAngles
    direction: DirectionVector
    branch: ThetaBranch
    degenerate: bool
    distances: KeypointDistances = None

    @property
    def phi(self) -> float:
        return self.angles.phi

    @property
    def theta(self) -> float:
        return self.angles.theta


def phi_from_keypoints(top: KeyPoint, tip: KeyPoint) -> float:
    """Angle of the tip->top vector in the image plane, degrees in [-180, 180]."""
    dx, dy = top.x - tip.x, top.y - tip.y
    if math.hypot(dx, dy) <= COINCIDENT_TOLERANCE:
        raise CoincidentKeypoints(f"top and tip coincide at ({top.x}, {top.y})")
    return math.degrees(math.atan2(dy, dx))


def theta_numeric(d: KeypointDistances, p: ShapeParams) -> Tuple[float, ThetaBranch]:
    """Piecewise formula: sqrt(dhat_top)*alpha above T, sqrt(dhat_tip)*omega + sigma otherwise."""
    if d.d_tt > p.T:
        theta = math.sqrt(d.dhat_top) * p.alpha
        branch = ThetaBranch.TOP
    else:
        theta = math.sqrt(d.dhat_tip) * p.omega + p.sigma_offset
        branch = ThetaBranch.TIP
    return min(max(theta, 0.0), 90.0), branch


def theta_numeric_array(d_tt: np.ndarray, dhat_top: np.ndarray, dhat_tip: np.ndarray, p: ShapeParams):
    """Vectorised theta_numeric; returns (theta, top_branch_mask)."""
    top_branch = d_tt > p.T
    theta = np.where(
        top_branch,
        np.sqrt(dhat_top) * p.alpha,
        np.sqrt(dhat_tip) * p.omega + p.sigma_offset,
    )
    return np.clip(theta, 0.0, 90.0), top_branch


def direction_from_angles(angles: OrientationAngles) -> DirectionVector:
    """V = (cos t cos p, cos t sin p, sin t); V(-90, 0) = (0, -1, 0)."""
    cos_t = cos_deg(angles.theta)
    return DirectionVector(
        cos_t * cos_deg(angles.phi),
        cos_t * sin_deg(angles.phi),
        sin_deg(angles.theta),
    )


def direction_array(phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Vectorised direction_from_angles, shape (N, 3)."""
    phi_r, theta_r = np.radians(phi), np.radians(theta)
    cos_t = np.cos(theta_r)
    return np.stack([cos_t * np.cos(phi_r), cos_t * np.sin(phi_r), np.sin(theta_r)], axis=-1)


def angular_error(a: DirectionVector, b: DirectionVector) -> float:
    """Angle between two unit vectors in degrees, in [0, 180]."""
    return float(angular_error_array(a.as_array()[None, :], b.as_array()[None, :])[0])


def angular_error_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Row-wise angle between unit vectors.

    atan2(|a x b|, a.b) equals acos of the clamped dot product and stays
    accurate near 0 and 180 degrees.
    """
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.degrees(np.arctan2(cross, dot))


def estimate_pose(mask: SilhouetteMask, top: KeyPoint, tip: KeyPoint, p: ShapeParams) -> PoseEstimate:
    """Two-stage pose: mask geometry + key points -> (phi, theta) -> direction."""
    try:
        phi = phi_from_keypoints(top, tip)
    except CoincidentKeypoints:
        # both key points collapse onto one spot only when the tip faces the camera
        angles = OrientationAngles(0.0, 90.0)
        return PoseEstimate(angles, direction_from_angles(angles), ThetaBranch.TIP, True)

    distances = keypoint_distances(mask, top, tip)
    theta, branch = theta_numeric(distances, p)
    angles = OrientationAngles(phi, theta)
    return PoseEstimate(angles, direction_from_angles(angles), branch, False, distances)
