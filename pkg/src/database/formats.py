"""
Image file codecs.

Masks are binary PGM (P5, maxval 255, fruit = 255). Heat maps are
grayscale PFM (Pf) written little-endian (scale -1.0) with rows stored
bottom-up, as the format prescribes.
"""
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from src.core.errors import InvalidValue, MalformedFile, NonBinaryPixelValue, OutOfRangeValue
from src.core.models import ImageGrid, SilhouetteMask
from src.services.heatmap import Heatmap

PathLike = Union[str, Path]

_WHITESPACE = b" \t\r\n\v\f"


def _read_header(data: bytes, count: int, path) -> Tuple[List[bytes], int]:
    """Read `count` whitespace separated header tokens, skipping # comments."""
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data):
            byte = data[pos:pos + 1]
            if byte in _WHITESPACE:
                pos += 1
            elif byte == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                break
        start = pos
        while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedFile(f"{path}: truncated header after {len(tokens)} field(s)")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise MalformedFile(f"{path}: header not terminated by whitespace")
    return tokens, pos + 1


def _parse_grid(width: bytes, height: bytes, path) -> ImageGrid:
    try:
        return ImageGrid(width=int(width), height=int(height))
    except (ValueError, InvalidValue) as e:
        raise MalformedFile(f"{path}: bad dimensions {width!r} x {height!r}: {e}")


def write_mask(path: PathLike, mask: SilhouetteMask) -> None:
    path = Path(path)
    header = f"P5\n{mask.grid.width} {mask.grid.height}\n255\n".encode("ascii")
    raster = np.where(mask.bits, 255, 0).astype(np.uint8)
    path.write_bytes(header + raster.tobytes())


def read_mask(path: PathLike) -> SilhouetteMask:
    path = Path(path)
    data = path.read_bytes()
    tokens, offset = _read_header(data, 4, path)
    magic, width, height, maxval = tokens
    if magic != b"P5":
        raise MalformedFile(f"{path}: expected P5 magic, got {magic[:8]!r}")
    grid = _parse_grid(width, height, path)
    try:
        maxval = int(maxval)
    except ValueError:
        raise MalformedFile(f"{path}: bad maxval {maxval!r}")
    if not 1 <= maxval <= 255:
        raise MalformedFile(f"{path}: only 8-bit PGM is supported, maxval {maxval}")

    expected = grid.width * grid.height
    raster = data[offset:]
    if len(raster) != expected:
        raise MalformedFile(f"{path}: expected {expected} pixel bytes, found {len(raster)}")

    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(grid.shape)
    bad = (pixels != 0) & (pixels != maxval)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonBinaryPixelValue(
            f"{path}: pixel ({col}, {row}) has value {pixels[row, col]}, expected 0 or {maxval}"
        )
    return SilhouetteMask(grid, pixels == maxval)


def write_heatmap(path: PathLike, heatmap) -> None:
    """Write a Heatmap (or a raw 2D array) as little-endian PFM."""
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap, dtype=np.float64)
    if values.ndim != 2:
        raise InvalidValue(f"heat map must be 2D, got shape {values.shape}")
    if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
        raise OutOfRangeValue(f"{path}: heat map values must lie in [0, 1]")
    height, width = values.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    raster = np.ascontiguousarray(values[::-1].astype("<f4"))
    Path(path).write_bytes(header + raster.tobytes())


def read_heatmap(path: PathLike) -> Heatmap:
    path = Path(path)
    data = path.read_bytes()
    tokens, offset = _read_header(data, 4, path)
    magic, width, height, scale = tokens
    if magic != b"Pf":
        raise MalformedFile(f"{path}: expected grayscale Pf magic, got {magic[:8]!r}")
    grid = _parse_grid(width, height, path)
    try:
        scale = float(scale)
    except ValueError:
        raise MalformedFile(f"{path}: bad scale {scale!r}")
    if scale == 0.0:
        raise MalformedFile(f"{path}: scale must be non-zero")
    dtype = "<f4" if scale < 0 else ">f4"

    expected = grid.width * grid.height * 4
    raster = data[offset:]
    if len(raster) != expected:
        raise MalformedFile(f"{path}: expected {expected} raster bytes, found {len(raster)}")

    values = np.frombuffer(raster, dtype=dtype).reshape(grid.shape)[::-1].astype(np.float64)
    if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
        raise OutOfRangeValue(f"{path}: heat map values outside [0, 1]")
    return Heatmap(grid, values)
