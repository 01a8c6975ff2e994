"""Orthogonal multi-view depth rendering and 2D→3D back-projection.

A point's projection drops one coordinate (the view axis) and floors the
other two onto the pixel grid. Depth is remapped d → (d+1)/2 so an occupied
pixel at depth 0 stays distinguishable from empty background (exactly 0);
colliding points keep the maximum remapped depth, which makes rendering
order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, ShapeError
from .pointcloud import PointCloud

AXES = ("x", "y", "z")
_AXIS_ID = {"x": 0, "y": 1, "z": 2}


@dataclass
class DepthMap:
    """Single-view depth image; occupied pixels lie in [0.5, 1], background 0."""

    axis: str
    pixels: np.ndarray
    channel_replicated: bool = False

    @property
    def resolution(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class GridMap:
    """H×W×C cell grid of per-view values (features or saliency)."""

    axis: str
    values: np.ndarray

    @property
    def grid(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def _planar(points: np.ndarray, axis: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split coordinates into (u, v, dropped) for a view axis.

    The two kept coordinates stay in their natural (x, y, z) order:
    axis x → (y, z), axis y → (x, z), axis z → (x, y).
    """
    if axis not in _AXIS_ID:
        raise InputError(f"unknown projection axis {axis!r}")
    drop = _AXIS_ID[axis]
    keep = [a for a in range(3) if a != drop]
    return points[:, keep[0]], points[:, keep[1]], points[:, drop]


def render_depth(cloud: PointCloud, axis: str, resolution: int = 224) -> DepthMap:
    """Project a normalized cloud along one axis into a depth map."""
    pts = cloud.points
    if pts.min() < 0.0 or pts.max() > 1.0:
        raise InputError("render_depth requires coordinates in [0,1]³; normalize first")
    u, v, d = _planar(pts, axis)
    rows = np.floor(u * (resolution - 1)).astype(np.intp)
    cols = np.floor(v * (resolution - 1)).astype(np.intp)
    pixels = np.zeros((resolution, resolution))
    np.maximum.at(pixels, (rows, cols), (d + 1.0) / 2.0)
    return DepthMap(axis=axis, pixels=pixels)


def render_views(cloud: PointCloud, view_count: int = 3, resolution: int = 224) -> list[DepthMap]:
    """Render the first ``view_count`` axes of the fixed (x, y, z) order."""
    if view_count not in (1, 2, 3):
        raise InputError(f"view_count must be 1, 2 or 3, got {view_count}")
    return [render_depth(cloud, AXES[i], resolution) for i in range(view_count)]


def back_project(grid: GridMap | DepthMap, queries: np.ndarray) -> np.ndarray:
    """Look up each query point's grid cell; returns M×C (pure lookup).

    Drops the grid's view axis from the query coordinates and floors the
    rest onto the H×W cell lattice, mirroring ``render_depth``.
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != 3:
        raise ShapeError(f"back_project expects M×3 queries, got {queries.shape}")
    if isinstance(grid, DepthMap):
        values = grid.pixels[:, :, None]
        axis = grid.axis
    else:
        values = grid.values
        axis = grid.axis
    h, w = values.shape[:2]
    u, v, _ = _planar(queries, axis)
    rows = np.floor(u * (h - 1)).astype(np.intp)
    cols = np.floor(v * (w - 1)).astype(np.intp)
    return values[rows, cols, :]


def render_token_mask(centers: np.ndarray, visible_idx: np.ndarray, resolution: int,
                      axis: str = "x") -> np.ndarray:
    """Rasterize token centers: background 0, masked 0.5, visible 1.0."""
    u, v, _ = _planar(np.asarray(centers, dtype=np.float64), axis)
    rows = np.floor(u * (resolution - 1)).astype(np.intp)
    cols = np.floor(v * (resolution - 1)).astype(np.intp)
    image = np.zeros((resolution, resolution))
    visible = np.zeros(centers.shape[0], dtype=bool)
    visible[visible_idx] = True
    image[rows[~visible], cols[~visible]] = 0.5
    image[rows[visible], cols[visible]] = 1.0
    return image


def write_ppm(image, path) -> None:
    """Write a single-channel map as binary PPM (P6), 3 identical channels.

    Values are scaled linearly so the map maximum lands on 255; an all-zero
    map renders black.
    """
    if isinstance(image, DepthMap):
        values = image.pixels
    elif isinstance(image, GridMap):
        if image.channels != 1:
            raise InputError(f"write_ppm needs a single-channel map, got {image.channels} channels")
        values = image.values[:, :, 0]
    else:
        values = np.asarray(image, dtype=np.float64)
        if values.ndim != 2:
            raise InputError(f"write_ppm needs an H×W array, got shape {values.shape}")
    lo = min(0.0, float(values.min()))
    hi = float(values.max())
    if hi <= lo:
        scaled = np.zeros_like(values)
    else:
        scaled = (values - lo) / (hi - lo) * 255.0
    byte = np.rint(scaled).astype(np.uint8)
    h, w = byte.shape
    rgb = np.repeat(byte[:, :, None], 3, axis=2)
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())
