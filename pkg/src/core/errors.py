"""
Error types raised across the berry pose library.
Every failure the library reports is a BerryPoseError subclass.
"""
from typing import Optional


class BerryPoseError(Exception):
    """Base class for all library errors."""
    pass


class InvalidValue(BerryPoseError):
    """A value object was constructed with fields outside their invariants."""
    pass


class OutOfBounds(BerryPoseError):
    """A key point or pixel index lies outside the image grid."""
    pass


class PartialGroundTruth(BerryPoseError):
    """Only one of phi_gt / theta_gt is present on a record."""
    pass


class EmptyMask(BerryPoseError):
    """A silhouette mask has no foreground pixel."""
    pass


class DisconnectedMask(BerryPoseError):
    """A silhouette mask has more than one 4-connected component."""
    pass


class NoIntersection(BerryPoseError):
    """A ray from the centroid does not cross the contour."""
    pass


class CoincidentKeypoints(BerryPoseError):
    """Top and tip key points coincide, so phi is undefined."""
    pass


class GridMismatch(BerryPoseError):
    """Two heat maps (or a map and a grid) differ in dimensions."""
    pass


class BerryOutOfFrame(BerryPoseError):
    """The rendered berry does not fit the grid with the required margin."""
    pass


class NoGroundTruth(BerryPoseError):
    """Orientation ground truth is required but missing."""
    pass


class MalformedFile(BerryPoseError):
    """A mask, heat map, manifest or params file cannot be parsed."""
    pass


class NonBinaryPixelValue(BerryPoseError):
    """A mask file holds a pixel value other than 0 or maxval."""
    pass


class OutOfRangeValue(BerryPoseError):
    """A heat map value lies outside [0, 1]."""
    pass


class IdMismatch(BerryPoseError):
    """Predictions and records share no id."""
    pass


class MalformedLine(BerryPoseError):
    """A JSON-lines file holds a line that is not a valid record."""

    def __init__(self, message: str, line_number: int, path: Optional[str] = None):
        self.line_number = line_number
        self.path = path
        where = f"{path}:{line_number}" if path else f"line {line_number}"
        super().__init__(f"{where}: {message}")
