"""
Silhouette geometry: centroid, boundary tracing, ray-contour intersection and
the normalised key point distances the theta formula is built on.

The distances to the contour are taken along the ray from the centroid
through each key point (the key point's side of the silhouette).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from src.core.errors import EmptyMask, InvalidValue, NoIntersection
from src.core.models import KeyPoint, Point, SilhouetteMask

logger = logging.getLogger(__name__)

# Key points closer than this to the centroid make a degenerate ray
DEGENERATE_RADIUS = 1e-6

# Clockwise neighbour order on screen (y down), starting west
_MOORE_OFFSETS = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_OFFSET_INDEX = {offset: i for i, offset in enumerate(_MOORE_OFFSETS)}


@dataclass(frozen=True, eq=False)
class Contour:
    """Closed boundary loop of pixel centres, counter-clockwise on screen."""
    points: np.ndarray = field(repr=False)
    disconnected: bool = False

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(points) == 0:
            raise InvalidValue("a contour needs at least one point")
        points = points.copy()
        points.flags.writeable = False
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return len(self.points)

    def signed_area(self) -> float:
        """Shoelace area in raster coordinates; negative for counter-clockwise on screen."""
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class KeypointDistances:
    d_top: float
    d_tip: float
    d_topside: float
    d_tipside: float
    d_tt: float
    dhat_top: float
    dhat_tip: float


class RayHit(NamedTuple):
    distance: float
    degenerate: bool


def _xy(point):
    if hasattr(point, "x"):
        return float(point.x), float(point.y)
    return float(point[0]), float(point[1])


def centroid(mask: SilhouetteMask) -> Point:
    """Arithmetic mean of the foreground pixel coordinates."""
    ys, xs = np.nonzero(mask.bits)
    if len(xs) == 0:
        raise EmptyMask("cannot take the centroid of an empty mask")
    return Point(float(xs.mean()), float(ys.mean()))


def largest_component(bits: np.ndarray):
    """Largest 4-connected component of a boolean image and the component count."""
    labels, count = ndimage.label(bits)
    if count == 0:
        raise EmptyMask("mask has no foreground pixel")
    if count == 1:
        return bits, 1
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(np.argmax(sizes)), count


def boundary_pixels(bits: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background (or off-grid) 4-neighbour."""
    padded = np.pad(bits, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return bits & ~interior


def trace_contour(mask: SilhouetteMask) -> Contour:
    """
    Moore-neighbour trace of the outer boundary of the largest component.

    Stops when the first move (start -> second pixel) is about to repeat.
    A single-pixel component yields a one-point contour.
    """
    component, count = largest_component(mask.bits)
    disconnected = count > 1
    if disconnected:
        logger.warning(f"mask has {count} components; tracing the largest")

    rows, cols = np.nonzero(component)
    top, left = int(rows.min()), int(cols.min())
    bottom, right = int(rows.max()), int(cols.max())
    # crop + 1 px pad so neighbour lookups never leave the array
    crop = np.pad(component[top:bottom + 1, left:right + 1], 1, constant_values=False)
    grid = crop.tolist()

    # first foreground pixel in raster order, in crop coordinates
    start_row = int(np.argmax(crop.any(axis=1)))
    start = (int(np.argmax(crop[start_row])), start_row)
    backtrack = (start[0] - 1, start[1])

    path = [start]
    current = start
    second = None
    max_steps = 4 * crop.size + 8
    for _ in range(max_steps):
        dx, dy = backtrack[0] - current[0], backtrack[1] - current[1]
        base = _OFFSET_INDEX[(dx, dy)]
        nxt = None
        previous = backtrack
        for k in range(1, 9):
            ox, oy = _MOORE_OFFSETS[(base + k) % 8]
            candidate = (current[0] + ox, current[1] + oy)
            if grid[candidate[1]][candidate[0]]:
                nxt = candidate
                break
            previous = candidate
        if nxt is None:
            break  # isolated pixel
        if current == start and second is not None and nxt == second:
            break
        if second is None:
            second = nxt
        backtrack = previous
        current = nxt
        if current == start:
            continue
        path.append(current)
    else:
        logger.warning("contour trace hit its step limit; returning partial loop")

    points = np.array(path, dtype=np.float64)
    points[:, 0] += left - 1
    points[:, 1] += top - 1

    # keep only pixels satisfying the boundary predicate
    border = boundary_pixels(component)
    keep = border[points[:, 1].astype(int), points[:, 0].astype(int)]
    if keep.any():
        points = points[keep]

    contour = Contour(points, disconnected)
    if len(contour) >= 3 and contour.signed_area() > 0:
        contour = Contour(points[::-1], disconnected)
    return contour


def ray_contour_distance(center, through, contour: Contour) -> RayHit:
    """
    Distance from center to the nearest contour crossing on the ray toward `through`.

    Segments are the consecutive contour pairs including the closing one.
    """
    cx, cy = _xy(center)
    tx, ty = _xy(through)
    dx, dy = tx - cx, ty - cy
    length = math.hypot(dx, dy)
    if length < DEGENERATE_RADIUS:
        return RayHit(0.0, True)
    dx, dy = dx / length, dy / length

    pts = contour.points
    if len(pts) < 2:
        # a one-point contour is hit only if the ray passes through it
        px, py = pts[0, 0] - cx, pts[0, 1] - cy
        t = px * dx + py * dy
        if t > 0 and abs(px * dy - py * dx) <= 0.5:
            return RayHit(float(t), False)
        raise NoIntersection("ray misses the single-pixel contour")

    a = pts
    b = np.roll(pts, -1, axis=0)
    ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    wx, wy = a[:, 0] - cx, a[:, 1] - cy
    denom = dx * ey - dy * ex
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * ey - wy * ex) / denom
        u = (wx * dy - wy * dx) / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= -1e-9) & (u <= 1.0 + 1e-9)
    if not valid.any():
        raise NoIntersection(f"ray from ({cx:.2f}, {cy:.2f}) toward ({tx:.2f}, {ty:.2f}) misses the contour")
    return RayHit(float(t[valid].min()), False)


def mean_radius(center: Point, contour: Contour) -> float:
    """Mean centre-to-contour distance, floored at half a pixel."""
    offsets = contour.points - np.array([center.x, center.y])
    return max(float(np.hypot(offsets[:, 0], offsets[:, 1]).mean()), 0.5)


def _side_distance(center: Point, kp: KeyPoint, contour: Contour):
    hit = ray_contour_distance(center, kp, contour)
    if hit.degenerate:
        return mean_radius(center, contour), True
    return hit.distance, False


def keypoint_distances(mask: SilhouetteMask, top: KeyPoint, tip: KeyPoint) -> KeypointDistances:
    """The four centroid distances, d_tt and the clamped ratios."""
    center = centroid(mask)
    contour = trace_contour(mask)

    d_top = math.hypot(top.x - center.x, top.y - center.y)
    d_tip = math.hypot(tip.x - center.x, tip.y - center.y)
    d_topside, top_degenerate = _side_distance(center, top, contour)
    d_tipside, tip_degenerate = _side_distance(center, tip, contour)

    dhat_top = 0.0 if top_degenerate else min(max(d_top / d_topside, 0.0), 1.0)
    dhat_tip = 0.0 if tip_degenerate else min(max(d_tip / d_tipside, 0.0), 1.0)
    return KeypointDistances(
        d_top=d_top,
        d_tip=d_tip,
        d_topside=d_topside,
        d_tipside=d_tipside,
        d_tt=top.distance_to(tip),
        dhat_top=dhat_top,
        dhat_tip=dhat_tip,
    )
