"""
JSON documents of a dataset: annotation records and predictions as JSON
lines, shape parameters as a small JSON object.

Parsing goes through pydantic models; every failure is reported as a
MalformedLine (with its 1-based line number) or a MalformedFile.
"""
import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, ValidationError

from src.core.errors import (
    BerryPoseError,
    InvalidValue,
    MalformedFile,
    MalformedLine,
    PartialGroundTruth,
)
from src.core.models import (
    AnnotationRecord,
    DirectionVector,
    ImageGrid,
    KeyPoint,
    KeypointKind,
    OrientationAngles,
    Prediction,
    ShapeParams,
    validate_record,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

KEYPOINT_DECIMALS = 6


class RecordLine(BaseModel):
    model_config = ConfigDict(extra="ignore")

    id: str
    top: Tuple[float, float]
    tip: Tuple[float, float]
    phi_gt: Optional[float] = None
    theta_gt: Optional[float] = None
    mask: str


class PredictionLine(BaseModel):
    model_config = ConfigDict(extra="ignore")

    id: str
    top: Tuple[float, float]
    tip: Tuple[float, float]
    phi: float
    theta: float
    direction: Tuple[float, float, float]
    branch: str
    degenerate: bool = False


class ParamsDocument(BaseModel):
    model_config = ConfigDict(extra="ignore")

    T: float
    alpha: float
    omega: float
    sigma_offset: float
    sigma_kernel: float = 2.0


def _xy(kp: KeyPoint) -> Tuple[float, float]:
    return round(kp.x, KEYPOINT_DECIMALS), round(kp.y, KEYPOINT_DECIMALS)


def _iter_lines(path: Path):
    with path.open("rb") as f:
        for number, raw in enumerate(f, 1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise MalformedLine(f"invalid UTF-8 at byte {e.start}", number, str(path)) from e
            if line.strip():
                yield number, line


def _parse(model, number: int, line: str, path: Path):
    try:
        return model.model_validate(json.loads(line))
    except json.JSONDecodeError as e:
        raise MalformedLine(f"invalid JSON: {e.msg}", number, str(path))
    except ValidationError as e:
        fields = ", ".join(".".join(str(p) for p in err["loc"]) or "line" for err in e.errors())
        raise MalformedLine(f"invalid or missing field(s): {fields}", number, str(path))


# ============================================================================
# ANNOTATION RECORDS
# ============================================================================

def record_to_line(record: AnnotationRecord) -> str:
    line = RecordLine(
        id=record.id,
        top=_xy(record.top),
        tip=_xy(record.tip),
        phi_gt=record.phi_gt,
        theta_gt=record.theta_gt,
        mask=record.mask_path,
    )
    return json.dumps(line.model_dump(exclude_none=True), allow_nan=False)


def write_records(path: PathLike, records: Iterable[AnnotationRecord]) -> int:
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for record in records:
            if (record.phi_gt is None) != (record.theta_gt is None):
                raise PartialGroundTruth(f"record {record.id}: phi_gt and theta_gt must be both present or both absent")
            f.write(record_to_line(record) + "\n")
            count += 1
    return count


def read_records(path: PathLike, grid: Optional[ImageGrid] = None) -> List[AnnotationRecord]:
    """Read a records file; key points are bounds-checked when a grid is given."""
    path = Path(path)
    records: List[AnnotationRecord] = []
    seen = set()
    for number, line in _iter_lines(path):
        doc = _parse(RecordLine, number, line, path)
        if (doc.phi_gt is None) != (doc.theta_gt is None):
            raise PartialGroundTruth(f"{path}:{number}: record {doc.id} has only one of phi_gt/theta_gt")
        if doc.id in seen:
            raise MalformedLine(f"duplicate record id {doc.id!r}", number, str(path))
        try:
            record = AnnotationRecord(
                id=doc.id,
                top=KeyPoint(doc.top[0], doc.top[1], KeypointKind.TOP),
                tip=KeyPoint(doc.tip[0], doc.tip[1], KeypointKind.TIP),
                phi_gt=doc.phi_gt,
                theta_gt=doc.theta_gt,
                mask_path=doc.mask,
            )
            if record.has_orientation:
                OrientationAngles(record.phi_gt, record.theta_gt)
            if grid is not None:
                validate_record(record, grid)
        except InvalidValue as e:
            raise MalformedLine(str(e), number, str(path)) from e
        except BerryPoseError as e:
            raise type(e)(f"{path}:{number}: {e}") from e
        seen.add(doc.id)
        records.append(record)
    return records


# ============================================================================
# PREDICTIONS
# ============================================================================

def prediction_to_line(prediction: Prediction) -> str:
    line = PredictionLine(
        id=prediction.id,
        top=_xy(prediction.top),
        tip=_xy(prediction.tip),
        phi=prediction.angles.phi,
        theta=prediction.angles.theta,
        direction=tuple(prediction.direction.as_list()),
        branch=prediction.branch,
        degenerate=prediction.degenerate,
    )
    return json.dumps(line.model_dump(), allow_nan=False)


def write_predictions(path: PathLike, predictions: Iterable[Prediction]) -> int:
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for prediction in predictions:
            f.write(prediction_to_line(prediction) + "\n")
            count += 1
    return count


def read_predictions(path: PathLike) -> List[Prediction]:
    path = Path(path)
    predictions: List[Prediction] = []
    for number, line in _iter_lines(path):
        doc = _parse(PredictionLine, number, line, path)
        try:
            predictions.append(Prediction(
                id=doc.id,
                top=KeyPoint(doc.top[0], doc.top[1], KeypointKind.TOP),
                tip=KeyPoint(doc.tip[0], doc.tip[1], KeypointKind.TIP),
                angles=OrientationAngles(doc.phi, doc.theta),
                direction=DirectionVector(*doc.direction),
                branch=doc.branch,
                degenerate=doc.degenerate,
            ))
        except InvalidValue as e:
            raise MalformedLine(str(e), number, str(path))
    return predictions


# ============================================================================
# SHAPE PARAMETERS
# ============================================================================

def write_params(path: PathLike, params: ShapeParams, extra: Optional[dict] = None) -> None:
    """Write params as JSON; `extra` keys (e.g. objective values) are appended after them."""
    doc = ParamsDocument(
        T=params.T,
        alpha=params.alpha,
        omega=params.omega,
        sigma_offset=params.sigma_offset,
        sigma_kernel=params.sigma_kernel,
    ).model_dump()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def read_params(path: PathLike) -> ShapeParams:
    path = Path(path)
    try:
        doc = ParamsDocument.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except UnicodeDecodeError as e:
        raise MalformedFile(f"{path}: invalid UTF-8 at byte {e.start}") from e
    except json.JSONDecodeError as e:
        raise MalformedFile(f"{path}: invalid JSON: {e.msg}")
    except ValidationError as e:
        raise MalformedFile(f"{path}: invalid params document: {e.error_count()} error(s)")
    try:
        return ShapeParams(
            T=doc.T,
            alpha=doc.alpha,
            omega=doc.omega,
            sigma_offset=doc.sigma_offset,
            sigma_kernel=doc.sigma_kernel,
        )
    except InvalidValue as e:
        raise MalformedFile(f"{path}: {e}")
