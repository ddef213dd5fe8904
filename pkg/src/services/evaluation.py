"""
Evaluation metrics: key point error, phi error, theta error and angular
error, summarised overall and per ground-truth theta bin.

Medians use the lower-of-two convention for even counts; std is the
population standard deviation.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core.errors import IdMismatch, InvalidValue, NoGroundTruth
from src.core.models import (
    AnnotationRecord,
    KeyPoint,
    OrientationAngles,
    Prediction,
    ShapeParams,
    SilhouetteMask,
    default_shape_params,
)
from src.infra.workers import map_ordered
from .orientation import angular_error_array, direction_from_angles, estimate_pose

logger = logging.getLogger(__name__)

DEFAULT_BIN_WIDTH = 10.0
KEYPOINT_METRICS = ("kp_top", "kp_tip")
ORIENTATION_METRICS = ("phi", "theta", "angular")
METRICS = KEYPOINT_METRICS + ORIENTATION_METRICS


@dataclass(frozen=True)
class MetricStats:
    median: float
    mean: float
    std: float
    iqr: float
    count: int

    @classmethod
    def from_values(cls, values) -> "MetricStats":
        values = np.sort(np.asarray(values, dtype=np.float64))
        values = values[np.isfinite(values)]
        n = len(values)
        if n == 0:
            return cls(math.nan, math.nan, math.nan, math.nan, 0)
        q1, q3 = np.percentile(values, [25.0, 75.0])
        return cls(
            median=float(values[(n - 1) // 2]),
            mean=float(values.mean()),
            std=float(values.std()),
            iqr=float(q3 - q1),
            count=n,
        )

    def as_dict(self) -> dict:
        return {"median": self.median, "mean": self.mean, "std": self.std, "iqr": self.iqr, "count": self.count}


@dataclass(frozen=True)
class ThetaBin:
    low: float
    high: float
    closed: bool
    stats: Dict[str, MetricStats]

    @property
    def label(self) -> str:
        return f"[{self.low:g},{self.high:g}{']' if self.closed else ')'}"

    def contains(self, theta: float) -> bool:
        return self.low <= theta < self.high or (self.closed and theta == self.high)


@dataclass(frozen=True)
class EvalSummary:
    metrics: Dict[str, MetricStats]
    theta_bins: List[ThetaBin]
    table: pd.DataFrame = field(repr=False)
    partial: bool = False

    @property
    def count(self) -> int:
        return len(self.table)

    def median(self, metric: str) -> float:
        return self.metrics[metric].median

    def bin_for(self, theta: float) -> ThetaBin:
        for b in self.theta_bins:
            if b.contains(theta):
                return b
        raise InvalidValue(f"theta {theta} outside [0, 90]")


def keypoint_error(pred: KeyPoint, gt: KeyPoint) -> float:
    """Euclidean distance in pixels."""
    return math.hypot(pred.x - gt.x, pred.y - gt.y)


def phi_error(pred: float, gt: float) -> float:
    """Absolute in-plane angle difference with wraparound, in [0, 180]."""
    delta = abs(pred - gt) % 360.0
    return min(delta, 360.0 - delta)


def theta_bin_edges(bin_width: float = DEFAULT_BIN_WIDTH) -> List[Tuple[float, float]]:
    """Half-open bins of `bin_width` covering [0, 90]; the last one is closed and may be shorter."""
    if not 0 < bin_width <= 90:
        raise InvalidValue(f"bin width must lie in (0, 90], got {bin_width}")
    edges = []
    low = 0.0
    while low < 90.0 - 1e-9:
        high = min(low + bin_width, 90.0)
        edges.append((low, high))
        low = high
    return edges


def kfold_indices(n: int, k: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Contiguous (train, test) index folds; test folds are disjoint and cover range(n)."""
    if k < 2 or k > n:
        raise InvalidValue(f"need 2 <= folds <= {n}, got {k}")
    folds = np.array_split(np.arange(n), k)
    return [(np.concatenate([f for j, f in enumerate(folds) if j != i]), test) for i, test in enumerate(folds)]


def _align(records: Sequence[AnnotationRecord], predictions: Sequence[Prediction]):
    by_id = {p.id: p for p in predictions}
    record_ids = {r.id for r in records}
    common = [r for r in records if r.id in by_id]
    if not common:
        raise IdMismatch(f"no common ids between {len(records)} record(s) and {len(predictions)} prediction(s)")
    missing = len(records) - len(common)
    extra = len(by_id.keys() - record_ids)
    if missing or extra:
        logger.warning(f"id mismatch: {missing} record(s) without prediction, {extra} prediction(s) without record")
    common.sort(key=lambda r: r.id)
    return common, [by_id[r.id] for r in common]


def _error_table(records: List[AnnotationRecord], predictions: List[Prediction]) -> pd.DataFrame:
    rows = []
    for record, pred in zip(records, predictions):
        rows.append({
            "id": record.id,
            "phi_gt": record.phi_gt if record.has_orientation else math.nan,
            "theta_gt": record.theta_gt if record.has_orientation else math.nan,
            "phi_pred": pred.angles.phi,
            "theta_pred": pred.angles.theta,
            "branch": pred.branch,
            "degenerate": pred.degenerate,
            "kp_top": keypoint_error(pred.top, record.top),
            "kp_tip": keypoint_error(pred.tip, record.tip),
        })
    table = pd.DataFrame(rows)

    oriented = table["theta_gt"].notna().to_numpy()
    for metric in ORIENTATION_METRICS:
        table[metric] = math.nan
    if oriented.any():
        gt = table.loc[oriented]
        table.loc[oriented, "phi"] = [phi_error(p, g) for p, g in zip(gt["phi_pred"], gt["phi_gt"])]
        table.loc[oriented, "theta"] = (gt["theta_pred"] - gt["theta_gt"]).abs().to_numpy()
        pred_dirs = np.array([predictions[i].direction.as_list() for i in np.flatnonzero(oriented)])
        gt_dirs = np.array([
            direction_from_angles(OrientationAngles(p, t)).as_list() for p, t in zip(gt["phi_gt"], gt["theta_gt"])
        ])
        table.loc[oriented, "angular"] = angular_error_array(pred_dirs, gt_dirs)
    return table


def summarize(
    records: Sequence[AnnotationRecord],
    predictions: Sequence[Prediction],
    bin_width: float = DEFAULT_BIN_WIDTH,
    require_orientation: bool = False,
) -> EvalSummary:
    """
    Aggregate errors of predictions against records, matched by id.

    Records without orientation ground truth contribute key point metrics
    only; the summary is then marked partial. With require_orientation
    such records raise NoGroundTruth instead.
    """
    if not records:
        raise InvalidValue("no records to evaluate")
    edges = theta_bin_edges(bin_width)
    records, predictions = _align(records, predictions)

    without = sum(1 for r in records if not r.has_orientation)
    if without and require_orientation:
        raise NoGroundTruth(f"{without} record(s) lack orientation ground truth")
    if without:
        logger.warning(f"{without} of {len(records)} record(s) lack orientation ground truth; summary is partial")

    table = _error_table(records, predictions)
    metrics = {m: MetricStats.from_values(table[m].to_numpy()) for m in METRICS}

    bins = []
    theta_gt = table["theta_gt"].to_numpy()
    for index, (low, high) in enumerate(edges):
        closed = index == len(edges) - 1
        in_bin = (theta_gt >= low) & ((theta_gt <= high) if closed else (theta_gt < high))
        stats = {m: MetricStats.from_values(table.loc[in_bin, m].to_numpy()) for m in METRICS}
        bins.append(ThetaBin(low, high, closed, stats))

    return EvalSummary(metrics=metrics, theta_bins=bins, table=table, partial=without > 0)


def _predict(task) -> Prediction:
    record, mask, params, top, tip = task
    pose = estimate_pose(mask, top, tip, params)
    return Prediction(
        id=record.id,
        top=top,
        tip=tip,
        angles=pose.angles,
        direction=pose.direction,
        branch=pose.branch.value,
        degenerate=pose.degenerate,
    )


def predict(
    records: Sequence[AnnotationRecord],
    masks: Sequence[SilhouetteMask],
    params: Optional[ShapeParams] = None,
    threads: int = 1,
    keypoints: Optional[Sequence[Tuple[KeyPoint, KeyPoint]]] = None,
) -> List[Prediction]:
    """
    estimate_pose for every record, in input order.

    `keypoints` replaces the annotated (top, tip) pairs, e.g. with points
    decoded from detector heat maps.
    """
    if len(records) != len(masks):
        raise InvalidValue(f"{len(records)} records but {len(masks)} masks")
    if keypoints is None:
        keypoints = [(r.top, r.tip) for r in records]
    elif len(keypoints) != len(records):
        raise InvalidValue(f"{len(records)} records but {len(keypoints)} key point pairs")
    params = params or default_shape_params()
    tasks = [(r, m, params, top, tip) for r, m, (top, tip) in zip(records, masks, keypoints)]
    return map_ordered(_predict, tasks, threads)


def evaluate(
    records: Sequence[AnnotationRecord],
    masks: Sequence[SilhouetteMask],
    params: Optional[ShapeParams] = None,
    bin_width: float = DEFAULT_BIN_WIDTH,
    threads: int = 1,
    require_orientation: bool = False,
) -> EvalSummary:
    """Run the estimator on every record and summarise its errors."""
    if not records:
        raise InvalidValue("no records to evaluate")
    predictions = predict(records, masks, params, threads)
    return summarize(records, predictions, bin_width, require_orientation)


def summarize_folds(
    records: Sequence[AnnotationRecord],
    predictions: Sequence[Prediction],
    folds: int,
    bin_width: float = DEFAULT_BIN_WIDTH,
) -> List[EvalSummary]:
    """One summary per contiguous test fold of the id-sorted records."""
    ordered = sorted(records, key=lambda r: r.id)
    by_id = {p.id: p for p in predictions}
    summaries = []
    for _, test in kfold_indices(len(ordered), folds):
        fold = [ordered[i] for i in test]
        summaries.append(summarize(fold, [by_id[r.id] for r in fold if r.id in by_id], bin_width))
    return summaries
