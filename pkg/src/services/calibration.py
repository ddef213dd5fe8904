"""
Shape parameter calibration.

Fits (T, alpha, omega, sigma_offset) by minimising the mean angular error
over records with orientation ground truth: a coarse grid search followed by
cyclic coordinate descent with step halving. The key point distances are
measured once per record, so every objective evaluation is a handful of
vectorised array operations.
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import OptimizeResult

from src.core.errors import CoincidentKeypoints, InvalidValue, NoGroundTruth
from src.core.models import AnnotationRecord, PARAM_TOLERANCE, ShapeParams, SilhouetteMask, default_shape_params
from src.infra.workers import map_ordered
from .geometry import keypoint_distances
from .orientation import angular_error_array, direction_array, phi_from_keypoints, theta_numeric_array

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 10000
MIN_STEP = 0.1
GRID_POINTS = {"T": 13, "alpha": 8, "omega": 8, "sigma_offset": 8}
COORDINATES = ("T", "alpha", "omega", "sigma_offset")
ANGLE_SUM_LIMIT = 90.0


@dataclass(frozen=True)
class ParamBounds:
    """Closed search box; sigma_offset starts just above 0 since params must be positive."""
    T: Tuple[float, float] = (60.0, 240.0)
    alpha: Tuple[float, float] = (20.0, 90.0)
    omega: Tuple[float, float] = (10.0, 70.0)
    sigma_offset: Tuple[float, float] = (1e-6, 70.0)

    def __post_init__(self):
        for name in COORDINATES:
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise InvalidValue(f"bounds for {name} must satisfy 0 < low <= high, got ({low}, {high})")
        if self.alpha[1] > 90.0:
            raise InvalidValue(f"alpha upper bound must be <= 90, got {self.alpha[1]}")
        if self.omega[0] + self.sigma_offset[0] > ANGLE_SUM_LIMIT:
            raise InvalidValue("omega and sigma_offset lower bounds leave no feasible point")

    def contains(self, p: ShapeParams) -> bool:
        return all(getattr(self, n)[0] <= getattr(p, n) <= getattr(self, n)[1] for n in COORDINATES)


@dataclass(frozen=True)
class CalibrationReport:
    fitted: ShapeParams
    objective_before: float
    objective_after: float
    iterations: int
    converged: bool
    evaluations: int = 0
    history: Tuple[float, ...] = ()
    holdout_before: Optional[float] = None
    holdout_after: Optional[float] = None

    def to_text(self) -> str:
        p = self.fitted
        lines = [
            "CALIBRATION REPORT",
            "=" * 40,
            f"T            : {p.T:.4f}",
            f"alpha        : {p.alpha:.4f}",
            f"omega        : {p.omega:.4f}",
            f"sigma_offset : {p.sigma_offset:.4f}",
            f"sigma_kernel : {p.sigma_kernel:.4f}",
            "-" * 40,
            f"objective before : {self.objective_before:.4f} deg",
            f"objective after  : {self.objective_after:.4f} deg",
            f"iterations       : {self.iterations}",
            f"evaluations      : {self.evaluations}",
            f"converged        : {str(self.converged).lower()}",
            f"accepted steps   : {max(len(self.history) - 1, 0)}",
        ]
        if self.holdout_before is not None:
            lines.append(f"holdout before   : {self.holdout_before:.4f} deg")
            lines.append(f"holdout after    : {self.holdout_after:.4f} deg")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class Observations:
    """Measured key point geometry and ground truth of a training set, one row per record."""
    ids: Tuple[str, ...]
    d_tt: np.ndarray = field(repr=False)
    dhat_top: np.ndarray = field(repr=False)
    dhat_tip: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    degenerate: np.ndarray = field(repr=False)
    phi_gt: np.ndarray = field(repr=False)
    theta_gt: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.ids)
        for name in ("d_tt", "dhat_top", "dhat_tip", "phi", "degenerate", "phi_gt", "theta_gt"):
            dtype = bool if name == "degenerate" else np.float64
            values = np.asarray(getattr(self, name), dtype=dtype).reshape(-1)
            if len(values) != n:
                raise InvalidValue(f"observation column {name} has {len(values)} rows, expected {n}")
            object.__setattr__(self, name, values)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "_gt_direction", direction_array(self.phi_gt, self.theta_gt))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def gt_direction(self) -> np.ndarray:
        return self._gt_direction

    def subset(self, indices) -> "Observations":
        indices = np.asarray(indices, dtype=int)
        return Observations(
            ids=tuple(self.ids[i] for i in indices),
            d_tt=self.d_tt[indices],
            dhat_top=self.dhat_top[indices],
            dhat_tip=self.dhat_tip[indices],
            phi=self.phi[indices],
            degenerate=self.degenerate[indices],
            phi_gt=self.phi_gt[indices],
            theta_gt=self.theta_gt[indices],
        )


def _measure(pair):
    record, mask = pair
    try:
        phi = phi_from_keypoints(record.top, record.tip)
    except CoincidentKeypoints:
        return 0.0, 0.0, 0.0, 0.0, True
    d = keypoint_distances(mask, record.top, record.tip)
    return d.d_tt, d.dhat_top, d.dhat_tip, phi, False


def observe(
    records: Sequence[AnnotationRecord],
    masks: Sequence[SilhouetteMask],
    threads: int = 1,
) -> Observations:
    """Measure every record once; records must carry orientation ground truth."""
    if len(records) != len(masks):
        raise InvalidValue(f"{len(records)} records but {len(masks)} masks")
    if not records:
        raise NoGroundTruth("no records to calibrate on")
    missing = [r.id for r in records if not r.has_orientation]
    if missing:
        raise NoGroundTruth(f"{len(missing)} record(s) lack orientation ground truth, first: {missing[0]}")

    rows = map_ordered(_measure, list(zip(records, masks)), threads)
    columns = list(zip(*rows))
    return Observations(
        ids=tuple(r.id for r in records),
        d_tt=columns[0],
        dhat_top=columns[1],
        dhat_tip=columns[2],
        phi=columns[3],
        degenerate=columns[4],
        phi_gt=[r.phi_gt for r in records],
        theta_gt=[r.theta_gt for r in records],
    )


def as_observations(data, threads: int = 1) -> Observations:
    """Accept Observations or a sequence of synthetic records (with masks)."""
    if isinstance(data, Observations):
        return data
    data = list(data)
    if any(getattr(item, "mask", None) is None for item in data):
        raise InvalidValue("records passed to calibration must carry their masks")
    return observe([item.record for item in data], [item.mask for item in data], threads)


def observations_from_formula(
    params: Optional[ShapeParams] = None,
    n: int = 2000,
    seed: int = 0,
) -> Observations:
    """
    Training pairs whose ratios are the exact inverse of the theta formula.

    Half of the rows sit in the top branch (d_tt in (T, T+70], theta in
    [0, alpha]) and half in the tip branch (d_tt in [T-110, T], theta in
    [sigma_offset, omega + sigma_offset]). The unused ratio of each row is
    set to the value that is most wrong if the row lands in the other branch.
    """
    p = params or default_shape_params()
    if n < 2:
        raise InvalidValue(f"need at least 2 observations, got {n}")
    rng = np.random.default_rng(seed)
    n_top = n // 2
    n_tip = n - n_top

    theta_top = rng.uniform(0.0, p.alpha, n_top)
    d_tt_top = p.T + 70.0 * (1.0 - rng.random(n_top))
    theta_tip = rng.uniform(p.sigma_offset, min(90.0, p.omega + p.sigma_offset), n_tip)
    d_tt_tip = np.maximum(p.T - 110.0 * rng.random(n_tip), 0.0)

    phi_gt = rng.uniform(-180.0, 180.0, n)
    return Observations(
        ids=tuple(f"eq{i:05d}" for i in range(n)),
        d_tt=np.concatenate([d_tt_top, d_tt_tip]),
        dhat_top=np.concatenate([(theta_top / p.alpha) ** 2, np.zeros(n_tip)]),
        dhat_tip=np.concatenate([np.ones(n_top), ((theta_tip - p.sigma_offset) / p.omega) ** 2]),
        phi=phi_gt,
        degenerate=np.zeros(n, dtype=bool),
        phi_gt=phi_gt,
        theta_gt=np.concatenate([theta_top, theta_tip]),
    )


def objective(params: ShapeParams, data, threads: int = 1) -> float:
    """Mean angular error (degrees) of the pose estimates over the training set."""
    obs = as_observations(data, threads)
    if len(obs) == 0:
        raise NoGroundTruth("no records to evaluate the objective on")
    theta, _ = theta_numeric_array(obs.d_tt, obs.dhat_top, obs.dhat_tip, params)
    theta = np.where(obs.degenerate, 90.0, theta)
    phi = np.where(obs.degenerate, 0.0, obs.phi)
    errors = angular_error_array(direction_array(phi, theta), obs.gt_direction)
    return float(np.mean(errors))


def _project(values: dict, moved: str, bounds: ParamBounds) -> dict:
    """Clamp into the box; restore omega + sigma_offset <= 90 by lowering the unmoved one."""
    values = dict(values)
    for name in COORDINATES:
        low, high = getattr(bounds, name)
        values[name] = min(max(values[name], low), high)
    other = "omega" if moved == "sigma_offset" else "sigma_offset"
    partner = "sigma_offset" if other == "omega" else "omega"
    for name in (other, partner):
        excess = values["omega"] + values["sigma_offset"] - ANGLE_SUM_LIMIT
        if excess <= 0:
            break
        values[name] = max(values[name] - excess, getattr(bounds, name)[0])
    return values


def _params(values: dict, sigma_kernel: float) -> ShapeParams:
    return ShapeParams(
        T=values["T"],
        alpha=values["alpha"],
        omega=values["omega"],
        sigma_offset=values["sigma_offset"],
        sigma_kernel=sigma_kernel,
    )


def grid_search(obs: Observations, bounds: ParamBounds, budget: int, sigma_kernel: float) -> OptimizeResult:
    """Exhaustive search over the coarse grid, in a fixed order, up to `budget` evaluations."""
    axes = [np.linspace(*getattr(bounds, name), GRID_POINTS[name]) for name in COORDINATES]
    best_x, best_fun, nfev = None, np.inf, 0
    exhausted = False
    for point in itertools.product(*axes):
        if point[2] + point[3] > ANGLE_SUM_LIMIT + PARAM_TOLERANCE:
            continue
        if nfev >= budget:
            exhausted = True
            break
        fun = objective(_params(dict(zip(COORDINATES, point)), sigma_kernel), obs)
        nfev += 1
        if fun < best_fun:
            best_x, best_fun = np.array(point), fun
    return OptimizeResult(
        x=best_x,
        fun=best_fun,
        nfev=nfev,
        success=best_x is not None,
        status=1 if exhausted else 0,
        message="Budget exhausted" if exhausted else "Grid complete",
    )


def fit(
    records,
    init: Optional[ShapeParams] = None,
    bounds: Optional[ParamBounds] = None,
    budget: int = DEFAULT_BUDGET,
    threads: int = 1,
) -> CalibrationReport:
    """
    Grid search then cyclic coordinate descent, within `budget` objective evaluations.

    The initial evaluation counts toward the budget, so budget=1 returns
    `init` unchanged. Only strict improvements are accepted; when a full
    cycle finds none every step is halved, until all steps drop below 0.1.
    """
    if budget < 1:
        raise InvalidValue(f"budget must be >= 1, got {budget}")
    init = init or default_shape_params()
    bounds = bounds or ParamBounds()
    if not bounds.contains(init):
        raise InvalidValue(f"initial params {init} lie outside the search bounds")
    obs = as_observations(records, threads)

    f_init = objective(init, obs)
    evaluations = 1
    history: List[float] = [f_init]
    best_values = {name: getattr(init, name) for name in COORDINATES}
    best_f = f_init

    if evaluations < budget:
        grid = grid_search(obs, bounds, budget - evaluations, init.sigma_kernel)
        evaluations += grid.nfev
        logger.info(f"grid search: {grid.nfev} evaluations, best {grid.fun:.4f} deg ({grid.message})")
        if grid.success and grid.fun < best_f:
            best_values = dict(zip(COORDINATES, (float(v) for v in grid.x)))
            best_f = float(grid.fun)
            history.append(best_f)

    steps = {
        name: (getattr(bounds, name)[1] - getattr(bounds, name)[0]) / (GRID_POINTS[name] - 1) / 2.0
        for name in COORDINATES
    }
    iterations = 0
    converged = False
    while evaluations < budget:
        if max(steps.values()) < MIN_STEP:
            converged = True
            break
        iterations += 1
        improved = False
        for name in COORDINATES:
            for sign in (1.0, -1.0):
                if evaluations >= budget:
                    break
                candidate = dict(best_values)
                candidate[name] += sign * steps[name]
                candidate = _project(candidate, name, bounds)
                if candidate == best_values:
                    continue
                f = objective(_params(candidate, init.sigma_kernel), obs)
                evaluations += 1
                if f < best_f:
                    best_values, best_f = candidate, f
                    history.append(f)
                    improved = True
                    break
        if not improved:
            steps = {name: step / 2.0 for name, step in steps.items()}
    else:
        converged = max(steps.values()) < MIN_STEP

    fitted = init if len(history) == 1 else _params(best_values, init.sigma_kernel)
    logger.info(
        f"calibration: {f_init:.4f} -> {best_f:.4f} deg after {iterations} cycle(s), "
        f"{evaluations} evaluation(s), converged={converged}"
    )
    return CalibrationReport(
        fitted=fitted,
        objective_before=f_init,
        objective_after=best_f,
        iterations=iterations,
        converged=converged,
        evaluations=evaluations,
        history=tuple(history),
    )
