"""
Heat-map key-point codec.

Ground-truth maps are amplitude-1 Gaussians centred on the key point;
predicted stacks are decoded by taking the global maximum over every map of
the stack. Values below exp(-8) (beyond 4 sigma) are written as exactly 0.
"""
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence

import numpy as np

from src.core.errors import GridMismatch, InvalidValue, OutOfBounds
from src.core.models import ImageGrid, KeyPoint, KeypointKind

BCE_EPSILON = 1e-7
TRUNCATION_SIGMAS = 4.0
DEFAULT_STACK_SIZE = 8


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Per-pixel key point likelihood, values[y, x] in [0, 1]."""
    grid: ImageGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            raise GridMismatch(f"heat map shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise InvalidValue("heat map values must lie in [0, 1]")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def value_at(self, x: int, y: int) -> float:
        return float(self.values[y, x])

    @property
    def peak(self) -> float:
        return float(self.values.max())

    def scaled(self, amplitude: float) -> "Heatmap":
        return Heatmap(self.grid, self.values * amplitude)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Heatmap):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class HeatmapStack:
    """The S maps predicted for one key point (one per stacked module)."""
    maps: tuple
    kind: KeypointKind = KeypointKind.TOP

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise InvalidValue("a heat map stack needs at least one map")
        grid = maps[0].grid
        if any(m.grid != grid for m in maps):
            raise GridMismatch("all maps of a stack must share one grid")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "kind", KeypointKind(self.kind))

    @property
    def grid(self) -> ImageGrid:
        return self.maps[0].grid

    def __len__(self) -> int:
        return len(self.maps)

    def as_array(self) -> np.ndarray:
        """Stack as an (S, H, W) array."""
        return np.stack([m.values for m in self.maps])


class DecodedKeypoint(NamedTuple):
    keypoint: KeyPoint
    peak: float
    degenerate: bool


def encode(kp: KeyPoint, grid: ImageGrid, sigma_kernel: float = 2.0) -> Heatmap:
    """Render an amplitude-1 Gaussian of width sigma_kernel centred on kp."""
    if sigma_kernel <= 0:
        raise InvalidValue(f"sigma_kernel must be > 0, got {sigma_kernel}")
    if not grid.contains(kp.x, kp.y):
        raise OutOfBounds(f"key point ({kp.x}, {kp.y}) outside {grid.width}x{grid.height} grid")

    xs = np.arange(grid.width, dtype=np.float64)
    ys = np.arange(grid.height, dtype=np.float64)
    dist_sq = (xs[None, :] - kp.x) ** 2 + (ys[:, None] - kp.y) ** 2
    values = np.exp(-dist_sq / (2.0 * sigma_kernel * sigma_kernel))
    values[values < math.exp(-TRUNCATION_SIGMAS ** 2 / 2.0)] = 0.0
    return Heatmap(grid, values)


def decode(stack: HeatmapStack) -> DecodedKeypoint:
    """
    Locate the global maximum over all maps of a stack.

    Ties are broken by (map index, row, column) ascending, which is the
    first occurrence in C order of the (S, H, W) array.
    """
    volume = stack.as_array()
    flat_index = int(np.argmax(volume))
    _, row, col = np.unravel_index(flat_index, volume.shape)
    peak = float(volume.flat[flat_index])
    if peak <= 0.0:
        return DecodedKeypoint(KeyPoint(0.0, 0.0, stack.kind), 0.0, True)
    return DecodedKeypoint(KeyPoint(float(col), float(row), stack.kind), peak, False)


def bce_loss(pred: Heatmap, target: Heatmap) -> float:
    """Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    if pred.grid != target.grid:
        raise GridMismatch(
            f"prediction grid {pred.grid.width}x{pred.grid.height} != "
            f"target grid {target.grid.width}x{target.grid.height}"
        )
    f = np.clip(pred.values, BCE_EPSILON, 1.0 - BCE_EPSILON)
    y = target.values
    loss = -y * np.log(f) - (1.0 - y) * np.log(1.0 - f)
    return float(max(loss.mean(), 0.0))


def stack_bce_loss(stack: HeatmapStack, target: Heatmap) -> float:
    """BCE averaged over every map of a stack (intermediate supervision)."""
    return float(np.mean([bce_loss(m, target) for m in stack.maps]))


def encode_stack(
    kp: KeyPoint,
    grid: ImageGrid,
    sigma_kernel: float = 2.0,
    amplitudes: Sequence[float] = (1.0,),
) -> HeatmapStack:
    """Stack of Gaussians at one location, one map per amplitude."""
    base = encode(kp, grid, sigma_kernel)
    maps: List[Heatmap] = []
    for amplitude in amplitudes:
        if not 0.0 < amplitude <= 1.0:
            raise InvalidValue(f"map amplitude must lie in (0, 1], got {amplitude}")
        maps.append(base if amplitude == 1.0 else base.scaled(amplitude))
    return HeatmapStack(tuple(maps), kp.kind)
