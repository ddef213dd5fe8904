"""
Synthetic Berry Generator
Renders revolved-profile berries at known orientations under orthographic
projection and builds fully annotated datasets from them.

Frame: the top->tip axis of a berry at (phi, theta) is
(-cos t cos p, -cos t sin p, sin t), so the in-image vector tip->top points
along phi and the tip leans toward the camera by theta. The projected
volume centroid lands on the grid centre.
"""
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from src.core.errors import BerryOutOfFrame, InvalidValue
from src.core.models import (
    AnnotationRecord,
    ImageGrid,
    KeyPoint,
    KeypointKind,
    OrientationAngles,
    ShapeParams,
    SilhouetteMask,
    cos_deg,
    sin_deg,
)
from src.infra.workers import map_ordered
from .heatmap import DEFAULT_STACK_SIZE, HeatmapStack, encode_stack

logger = logging.getLogger(__name__)

PROFILE_SAMPLES = 512
DISC_SAMPLES = 48
# Berries rendered per batch when streaming a dataset to disk
CHUNK_BERRIES = 8
KEYPOINT_DECIMALS = 6


@dataclass(frozen=True)
class BerryProfile:
    """
    Radial profile of a berry of revolution, in world units.

    r(t) = r_max * sin(pi * s^taper)^bulge where s is t warped piecewise
    linearly so that the widest point sits at t = asymmetry (0 = top).
    """
    length: float = 1.0
    r_max: float = 0.36
    bulge: float = 0.9
    taper: float = 1.1
    asymmetry: float = 0.4

    def __post_init__(self):
        if not (self.length > 0 and self.r_max > 0):
            raise InvalidValue(f"length and r_max must be > 0, got {self.length}, {self.r_max}")
        if not 0.5 <= self.bulge <= 3.0:
            raise InvalidValue(f"bulge must lie in [0.5, 3], got {self.bulge}")
        if not 0.5 <= self.taper <= 3.0:
            raise InvalidValue(f"taper must lie in [0.5, 3], got {self.taper}")
        if not 0.2 <= self.asymmetry <= 0.6:
            raise InvalidValue(f"asymmetry must lie in [0.2, 0.6], got {self.asymmetry}")

    def radius(self, t) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
        peak = 0.5 ** (1.0 / self.taper)
        a = self.asymmetry
        s = np.where(t <= a, t / a * peak, peak + (t - a) / (1.0 - a) * (1.0 - peak))
        r = self.r_max * np.clip(np.sin(np.pi * s ** self.taper), 0.0, None) ** self.bulge
        return np.where((t <= 0.0) | (t >= 1.0), 0.0, r)


@dataclass(frozen=True)
class ProfileRanges:
    """Uniform sampling ranges for generated berry profiles."""
    length: Tuple[float, float] = (0.9, 1.2)
    r_max: Tuple[float, float] = (0.30, 0.42)
    bulge: Tuple[float, float] = (0.6, 1.2)
    taper: Tuple[float, float] = (0.8, 1.5)
    asymmetry: Tuple[float, float] = (0.30, 0.50)

    def sample(self, rng: np.random.Generator) -> BerryProfile:
        return BerryProfile(
            length=float(rng.uniform(*self.length)),
            r_max=float(rng.uniform(*self.r_max)),
            bulge=float(rng.uniform(*self.bulge)),
            taper=float(rng.uniform(*self.taper)),
            asymmetry=float(rng.uniform(*self.asymmetry)),
        )


@dataclass(frozen=True)
class RenderSpec:
    grid: ImageGrid = field(default_factory=ImageGrid)
    scale: float = 170.0
    noise_px: float = 0.0
    seed: int = 0
    margin: int = 8

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidValue(f"scale must be > 0, got {self.scale}")
        if self.noise_px < 0:
            raise InvalidValue(f"noise_px must be >= 0, got {self.noise_px}")
        if self.seed < 0:
            raise InvalidValue(f"seed must be >= 0, got {self.seed}")
        if self.margin < 0:
            raise InvalidValue(f"margin must be >= 0, got {self.margin}")


@dataclass(frozen=True)
class SyntheticRecord:
    """Annotation plus the profile and render settings it came from."""
    record: AnnotationRecord
    profile: BerryProfile
    spec: RenderSpec
    mask: Optional[SilhouetteMask] = field(default=None, repr=False, compare=False)
    berry_index: int = 0
    view_index: int = 0

    @property
    def id(self) -> str:
        return self.record.id

    @property
    def top(self) -> KeyPoint:
        return self.record.top

    @property
    def tip(self) -> KeyPoint:
        return self.record.tip

    def angles(self) -> OrientationAngles:
        return self.record.angles()

    def provenance(self) -> dict:
        return {
            "id": self.id,
            "berry": self.berry_index,
            "view": self.view_index,
            "profile": asdict(self.profile),
            "scale": self.spec.scale,
            "noise_px": self.spec.noise_px,
            "seed": self.spec.seed,
        }


def record_id(berry_index: int, view_index: int) -> str:
    return f"b{berry_index:04d}_v{view_index:03d}"


def berry_volume_centroid(profile: BerryProfile) -> float:
    """Axial position (fraction of length from the top) of the volume centroid."""
    t = np.linspace(0.0, 1.0, PROFILE_SAMPLES)
    area = profile.radius(t) ** 2
    return float(np.sum(t * area) / np.sum(area))


def bounding_radius(profile: BerryProfile) -> float:
    """Largest distance from the volume centroid to the berry surface, world units."""
    t = np.linspace(0.0, 1.0, PROFILE_SAMPLES)
    axial = (t - berry_volume_centroid(profile)) * profile.length
    return float(np.max(np.hypot(axial, profile.radius(t))))


def _frame_limit(grid: ImageGrid, margin: int) -> float:
    return (min(grid.width, grid.height) - 1) / 2.0 - margin


def fit_scale(profile: BerryProfile, grid: ImageGrid, margin: int = 8) -> float:
    """Largest scale at which the berry stays `margin` px inside the grid in every orientation."""
    limit = _frame_limit(grid, margin)
    if limit <= 0:
        raise BerryOutOfFrame(f"margin {margin} leaves no room on a {grid.width}x{grid.height} grid")
    return limit / bounding_radius(profile)


def check_fits(profile: BerryProfile, spec: RenderSpec) -> None:
    limit = _frame_limit(spec.grid, spec.margin)
    extent = bounding_radius(profile) * spec.scale
    if extent > limit + 1e-9:
        raise BerryOutOfFrame(
            f"berry reaches {extent:.1f} px from its centre; "
            f"the frame allows {limit:.1f} px at scale {spec.scale}"
        )


def project_keypoints(profile: BerryProfile, angles: OrientationAngles, spec: RenderSpec):
    """Exact projected (top, tip) pixel positions before any jitter."""
    ax, ay = -cos_deg(angles.phi), -sin_deg(angles.phi)
    length_px = profile.length * spec.scale * cos_deg(angles.theta)
    offset = berry_volume_centroid(profile) * length_px
    cx, cy = spec.grid.center
    top = (cx - offset * ax, cy - offset * ay)
    tip = (top[0] + length_px * ax, top[1] + length_px * ay)
    return top, tip


def _rasterize(profile: BerryProfile, angles: OrientationAngles, spec: RenderSpec, top_xy) -> np.ndarray:
    grid = spec.grid
    cos_t, sin_t = cos_deg(angles.theta), sin_deg(angles.theta)
    ax, ay = -cos_deg(angles.phi), -sin_deg(angles.phi)
    length_px = profile.length * spec.scale * cos_t
    r_max_px = profile.r_max * spec.scale

    cx, cy = grid.center
    reach = bounding_radius(profile) * spec.scale + 2.0
    x0, x1 = max(int(math.floor(cx - reach)), 0), min(int(math.ceil(cx + reach)), grid.width - 1)
    y0, y1 = max(int(math.floor(cy - reach)), 0), min(int(math.ceil(cy + reach)), grid.height - 1)

    dx = np.arange(x0, x1 + 1, dtype=np.float64)[None, :] - top_xy[0]
    dy = np.arange(y0, y1 + 1, dtype=np.float64)[:, None] - top_xy[1]
    s = dx * ax + dy * ay  # along the projected axis, 0 at the top
    w = dy * ax - dx * ay  # across it
    w_sq = w * w

    inside = np.zeros(s.shape, dtype=bool)
    if length_px > 0:
        # side view of the surface of revolution
        t = s / length_px
        r = profile.radius(t) * spec.scale
        inside |= (t >= 0.0) & (t <= 1.0) & (w_sq <= r * r)

    if sin_t > 0:
        # cross-section discs project to ellipses squashed by sin(theta) along the axis
        sin_sq = sin_t * sin_t
        cap = r_max_px * sin_t
        candidates = ~inside & (w_sq <= r_max_px * r_max_px) & (s >= -cap) & (s <= length_px + cap)
        cs = s[candidates]
        cw = w_sq[candidates] * sin_sq
        hit = np.zeros(cs.shape, dtype=bool)
        t_samples = np.unique(np.append(np.linspace(0.0, 1.0, DISC_SAMPLES), profile.asymmetry))
        for t_k, r_k in zip(t_samples, profile.radius(t_samples) * spec.scale):
            if r_k <= 0:
                continue
            ds = cs - t_k * length_px
            hit |= ds * ds + cw <= r_k * r_k * sin_sq
        inside[candidates] = hit

    bits = np.zeros(grid.shape, dtype=bool)
    bits[y0:y1 + 1, x0:x1 + 1] = inside
    return bits


def _jitter(xy, noise_px: float, grid: ImageGrid, rng: np.random.Generator):
    x, y = xy
    if noise_px > 0:
        x += float(rng.normal(0.0, noise_px))
        y += float(rng.normal(0.0, noise_px))
    x = min(max(x, 0.0), grid.width - 1.0)
    y = min(max(y, 0.0), grid.height - 1.0)
    return round(x, KEYPOINT_DECIMALS), round(y, KEYPOINT_DECIMALS)


def silhouette(
    profile: BerryProfile,
    angles: OrientationAngles,
    spec: RenderSpec,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[SilhouetteMask, KeyPoint, KeyPoint]:
    """Render the mask and the (optionally jittered) top and tip key points."""
    check_fits(profile, spec)
    if rng is None:
        rng = np.random.default_rng(spec.seed)

    top_xy, tip_xy = project_keypoints(profile, angles, spec)
    bits = _rasterize(profile, angles, spec, top_xy)
    mask = SilhouetteMask(spec.grid, bits)

    top = KeyPoint(*_jitter(top_xy, spec.noise_px, spec.grid, rng), KeypointKind.TOP)
    tip = KeyPoint(*_jitter(tip_xy, spec.noise_px, spec.grid, rng), KeypointKind.TIP)
    return mask, top, tip


def _plan_berry(berry_index: int, spec: RenderSpec, ranges: ProfileRanges):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, berry_index]))
    profile = ranges.sample(rng)
    try:
        check_fits(profile, spec)
        return profile, spec
    except BerryOutOfFrame:
        scaled = replace(spec, scale=fit_scale(profile, spec.grid, spec.margin))
        logger.warning(f"berry {berry_index} does not fit at scale {spec.scale}; rescaled to {scaled.scale:.2f}")
        check_fits(profile, scaled)
        return profile, scaled


def _render_view(task) -> SyntheticRecord:
    berry_index, view_index, profile, spec, dataset_seed = task
    rng = np.random.default_rng(np.random.SeedSequence([dataset_seed, berry_index, view_index]))
    angles = OrientationAngles(float(rng.uniform(-180.0, 180.0)), float(rng.uniform(0.0, 90.0)))
    mask, top, tip = silhouette(profile, angles, spec, rng)
    rid = record_id(berry_index, view_index)
    record = AnnotationRecord(rid, top, tip, angles.phi, angles.theta, f"masks/{rid}.pgm")
    return SyntheticRecord(record, profile, spec, mask, berry_index, view_index)


def generate_dataset(
    n_berries: int,
    views_per_berry: int,
    spec: Optional[RenderSpec] = None,
    profile_ranges: Optional[ProfileRanges] = None,
    out_dir=None,
    threads: int = 1,
    heatmap_maps: int = 0,
) -> List[SyntheticRecord]:
    """
    Sample n_berries profiles and render views_per_berry random views of each.

    Every view draws its angles and jitter from its own stream seeded by
    (seed, berry, view), so the output does not depend on `threads`. With
    `out_dir` the dataset is streamed to disk and the returned records carry
    no masks.
    """
    if n_berries < 1 or views_per_berry < 1:
        raise InvalidValue(f"counts must be >= 1, got berries={n_berries}, views={views_per_berry}")
    spec = spec or RenderSpec()
    ranges = profile_ranges or ProfileRanges()

    plans = [_plan_berry(b, spec, ranges) for b in range(n_berries)]
    total = n_berries * views_per_berry
    logger.info(f"rendering {total} views of {n_berries} berries on {threads} thread(s)")

    if out_dir is None:
        tasks = [(b, v, plans[b][0], plans[b][1], spec.seed) for b in range(n_berries) for v in range(views_per_berry)]
        return map_ordered(_render_view, tasks, threads)

    from src.database.db import DatasetManifest, dataset_writer

    manifest = DatasetManifest(
        grid=spec.grid,
        count=total,
        seed=spec.seed,
        generator={
            "berries": n_berries,
            "views": views_per_berry,
            "scale": spec.scale,
            "noise_px": spec.noise_px,
            "margin": spec.margin,
            "profile_ranges": asdict(ranges),
            "heatmap_maps": heatmap_maps,
        },
    )
    records: List[SyntheticRecord] = []
    sigma = ShapeParams().sigma_kernel
    with dataset_writer(Path(out_dir), manifest) as writer:
        for start in range(0, n_berries, CHUNK_BERRIES):
            berries = range(start, min(start + CHUNK_BERRIES, n_berries))
            tasks = [(b, v, plans[b][0], plans[b][1], spec.seed) for b in berries for v in range(views_per_berry)]
            for synthetic in map_ordered(_render_view, tasks, threads):
                stacks = None
                if heatmap_maps > 0:
                    stacks = heatmaps_for_record(synthetic, sigma, 0.0, heatmap_maps, spec.seed)
                writer.add(synthetic.record, synthetic.mask, stacks, synthetic.provenance())
                records.append(replace(synthetic, mask=None))
            logger.info(f"rendered {len(records)}/{total} views")
    return records


def heatmaps_for_record(
    record: SyntheticRecord,
    p,
    noise_px: float = 0.0,
    n_maps: int = DEFAULT_STACK_SIZE,
    seed: int = 0,
) -> Tuple[HeatmapStack, HeatmapStack]:
    """
    Simulated detector output: (top, tip) stacks of n_maps maps each.

    Each key point is jittered by N(0, noise_px) per axis, snapped to the
    nearest pixel and encoded with per-map amplitudes in [0.5, 1] where one
    randomly chosen map keeps amplitude 1. `p` is a ShapeParams or a bare
    kernel width.
    """
    if not 1 <= n_maps <= DEFAULT_STACK_SIZE:
        raise InvalidValue(f"stack size must lie in [1, {DEFAULT_STACK_SIZE}], got {n_maps}")
    sigma_kernel = p.sigma_kernel if isinstance(p, ShapeParams) else float(p)
    grid = record.spec.grid
    rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(record.id.encode("utf-8"))]))

    stacks = []
    for kp in (record.top, record.tip):
        x, y = kp.x, kp.y
        if noise_px > 0:
            x += float(rng.normal(0.0, noise_px))
            y += float(rng.normal(0.0, noise_px))
        x = float(np.clip(np.rint(x), 0, grid.width - 1))
        y = float(np.clip(np.rint(y), 0, grid.height - 1))
        amplitudes = rng.uniform(0.5, 1.0, n_maps)
        amplitudes[rng.integers(n_maps)] = 1.0
        stacks.append(encode_stack(KeyPoint(x, y, kp.kind), grid, sigma_kernel, amplitudes))
    return stacks[0], stacks[1]
