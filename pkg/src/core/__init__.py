# Core Module - shared domain types and errors
from .errors import BerryPoseError
from .models import (
    ImageGrid,
    KeypointKind,
    KeyPoint,
    Point,
    SilhouetteMask,
    OrientationAngles,
    DirectionVector,
    ShapeParams,
    AnnotationRecord,
    Prediction,
    validate_record,
    default_shape_params,
)

__all__ = [
    "BerryPoseError",
    "ImageGrid",
    "KeypointKind",
    "KeyPoint",
    "Point",
    "SilhouetteMask",
    "OrientationAngles",
    "DirectionVector",
    "ShapeParams",
    "AnnotationRecord",
    "Prediction",
    "validate_record",
    "default_shape_params",
]
