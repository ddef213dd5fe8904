"""
Core domain types for berry pose estimation.

Frame convention used everywhere: origin at the top-left pixel centre,
x grows rightward (columns), y grows downward (rows), z points out of the
image toward the camera. Angles are stored in degrees; radians only appear
inside trigonometric calls.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidValue, OutOfBounds, PartialGroundTruth, EmptyMask

# Tolerance for the omega + sigma_offset <= 90 invariant
PARAM_TOLERANCE = 1e-6

_EXACT_COS = {0: 1.0, 90: 0.0, 180: -1.0, 270: 0.0}
_EXACT_SIN = {0: 0.0, 90: 1.0, 180: 0.0, 270: -1.0}


def cos_deg(angle: float) -> float:
    """Cosine of an angle in degrees, exact at multiples of 90."""
    reduced = angle % 360.0
    if reduced in _EXACT_COS:
        return _EXACT_COS[reduced]
    return math.cos(math.radians(angle))


def sin_deg(angle: float) -> float:
    """Sine of an angle in degrees, exact at multiples of 90."""
    reduced = angle % 360.0
    if reduced in _EXACT_SIN:
        return _EXACT_SIN[reduced]
    return math.sin(math.radians(angle))


def wrap_degrees(angle: float) -> float:
    """Wrap an angle into [-180, 180)."""
    wrapped = (angle + 180.0) % 360.0 - 180.0
    # float modulo can land exactly on 180 for inputs a hair below -180
    return -180.0 if wrapped >= 180.0 else wrapped


class KeypointKind(str, Enum):
    TOP = "top"
    TIP = "tip"


class Point(NamedTuple):
    """Sub-pixel image location without a key point kind."""
    x: float
    y: float


@dataclass(frozen=True)
class ImageGrid:
    """Pixel grid of a square crop (256 x 256 by default)."""
    width: int = 256
    height: int = 256

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise InvalidValue(f"grid must be at least 8x8, got {self.width}x{self.height}")

    @property
    def shape(self):
        """numpy (rows, columns) shape."""
        return (self.height, self.width)

    @property
    def center(self) -> Point:
        return Point((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width - 1, self.height - 1)

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.width and 0.0 <= y < self.height


@dataclass(frozen=True)
class KeyPoint:
    """Projection of the stem attachment (top) or distal point (tip)."""
    x: float
    y: float
    kind: KeypointKind = KeypointKind.TOP

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidValue(f"key point coordinates must be finite, got ({self.x}, {self.y})")
        object.__setattr__(self, "kind", KeypointKind(self.kind))

    def distance_to(self, other) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def shifted(self, dx: float, dy: float) -> "KeyPoint":
        return KeyPoint(self.x + dx, self.y + dy, self.kind)


@dataclass(frozen=True, eq=False)
class SilhouetteMask:
    """Binary fruit mask; bits[y, x] is True on fruit pixels."""
    grid: ImageGrid
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != self.grid.shape:
            raise InvalidValue(f"mask shape {bits.shape} does not match grid {self.grid.shape}")
        if not bits.any():
            raise EmptyMask("silhouette mask has no foreground pixel")
        bits = bits.copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_array(cls, bits) -> "SilhouetteMask":
        bits = np.asarray(bits, dtype=bool)
        return cls(ImageGrid(width=bits.shape[1], height=bits.shape[0]), bits)

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, SilhouetteMask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.bits, other.bits)

    __hash__ = None


@dataclass(frozen=True)
class OrientationAngles:
    """phi: in-image-plane angle of the tip->top axis; theta: tilt toward the camera."""
    phi: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.phi) and math.isfinite(self.theta)):
            raise InvalidValue(f"angles must be finite, got ({self.phi}, {self.theta})")
        theta = self.theta
        if -1e-9 <= theta < 0.0:
            theta = 0.0
        elif 90.0 < theta <= 90.0 + 1e-9:
            theta = 90.0
        if not 0.0 <= theta <= 90.0:
            raise InvalidValue(f"theta must lie in [0, 90], got {self.theta}")
        object.__setattr__(self, "phi", wrap_degrees(self.phi))
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class DirectionVector:
    """Unit 3-vector of the fruit axis; normalized on construction."""
    vx: float
    vy: float
    vz: float

    def __post_init__(self):
        norm = math.sqrt(self.vx * self.vx + self.vy * self.vy + self.vz * self.vz)
        if not math.isfinite(norm) or norm == 0.0:
            raise InvalidValue("direction vector must be finite and non-zero")
        if norm != 1.0:
            object.__setattr__(self, "vx", self.vx / norm)
            object.__setattr__(self, "vy", self.vy / norm)
            object.__setattr__(self, "vz", self.vz / norm)

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz], dtype=np.float64)

    def as_list(self):
        return [self.vx, self.vy, self.vz]


@dataclass(frozen=True)
class ShapeParams:
    """
    Parameters of the piecewise theta formula plus the heat-map kernel width.

    T is the d_tt branch threshold in pixels of the 256 grid; alpha scales the
    top branch; omega and sigma_offset scale and offset the tip branch.
    """
    T: float = 170.0
    alpha: float = 54.0
    omega: float = 50.0
    sigma_offset: float = 40.0
    sigma_kernel: float = 2.0

    def __post_init__(self):
        for name in ("T", "alpha", "omega", "sigma_offset", "sigma_kernel"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0.0:
                raise InvalidValue(f"{name} must be strictly positive, got {value}")
        if self.alpha > 90.0:
            raise InvalidValue(f"alpha must be <= 90, got {self.alpha}")
        if self.omega + self.sigma_offset > 90.0 + PARAM_TOLERANCE:
            raise InvalidValue(
                f"omega + sigma_offset must be <= 90, got {self.omega + self.sigma_offset}"
            )

    def replace(self, **changes) -> "ShapeParams":
        values = {
            "T": self.T,
            "alpha": self.alpha,
            "omega": self.omega,
            "sigma_offset": self.sigma_offset,
            "sigma_kernel": self.sigma_kernel,
        }
        values.update(changes)
        return ShapeParams(**values)


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotated crop: key points, optional orientation and its mask file."""
    id: str
    top: KeyPoint
    tip: KeyPoint
    phi_gt: Optional[float] = None
    theta_gt: Optional[float] = None
    mask_path: str = ""

    @property
    def has_orientation(self) -> bool:
        return self.phi_gt is not None and self.theta_gt is not None

    def angles(self) -> OrientationAngles:
        return OrientationAngles(self.phi_gt, self.theta_gt)


def validate_record(record: AnnotationRecord, grid: ImageGrid) -> AnnotationRecord:
    """Return the record unchanged if its key points and ground truth are consistent."""
    for kp in (record.top, record.tip):
        if not grid.contains(kp.x, kp.y):
            raise OutOfBounds(
                f"record {record.id}: {kp.kind.value} key point ({kp.x}, {kp.y}) "
                f"outside {grid.width}x{grid.height} grid"
            )
    if (record.phi_gt is None) != (record.theta_gt is None):
        raise PartialGroundTruth(f"record {record.id}: phi_gt and theta_gt must be both present or both absent")
    if record.has_orientation:
        OrientationAngles(record.phi_gt, record.theta_gt)
    return record


def default_shape_params() -> ShapeParams:
    """Published constants: T=170, alpha=54, omega=50, sigma=40, kernel sigma 2."""
    return ShapeParams(T=170.0, alpha=54.0, omega=50.0, sigma_offset=40.0, sigma_kernel=2.0)


@dataclass(frozen=True)
class Prediction:
    """Estimated pose of one record, one line of an `estimate` output file."""
    id: str
    top: KeyPoint
    tip: KeyPoint
    angles: OrientationAngles
    direction: DirectionVector
    branch: str
    degenerate: bool = False
