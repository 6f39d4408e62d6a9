"""Heatmap <-> pixel conversions at the stage boundary.

Pixels are ``(u, v)`` with ``u`` the column and ``v`` the row; a grid has
shape ``(H, W)`` and is indexed ``grid[v, u]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfBounds

MIN_SIGMA = 0.5
TRUNCATE = 3.0


@dataclass(frozen=True, eq=False)
class Heatmap:
    grid: np.ndarray
    joint: int = 0
    camera: int = 0

    def __post_init__(self):
        g = np.array(self.grid, dtype=float)
        if g.ndim != 2 or g.shape[0] < 1 or g.shape[1] < 1:
            raise ValueError(f"heatmap grid must be a non-empty 2D array, got shape {g.shape}")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ValueError("heatmap values must be finite and non-negative")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @property
    def shape(self):
        return self.grid.shape


def extract_joint(heatmap):
    """Argmax pixel ``(u, v)``; ties go to the first cell in row-major order."""
    grid = heatmap.grid if isinstance(heatmap, Heatmap) else np.asarray(heatmap, float)
    if grid.size == 0:
        raise ValueError("empty heatmap")
    v, u = np.unravel_index(int(np.argmax(grid)), grid.shape)
    return int(u), int(v)


def round_half_up(x):
    return np.floor(np.asarray(x, float) + 0.5).astype(int)


def render_joint(point, height, width, sigma_px=1.0, joint=0, camera=0):
    """Unit-peak Gaussian on the pixel nearest to ``point``, zero beyond ``3 * sigma_px``.

    ``sigma_px`` below 0.5 is raised to 0.5.
    """
    u, v = (float(c) for c in point)
    if not (0.0 <= u < width and 0.0 <= v < height):
        raise OutOfBounds(f"point ({u}, {v}) outside the {width}x{height} grid")
    sigma = max(float(sigma_px), MIN_SIGMA)
    cu = min(int(round_half_up(u)), width - 1)
    cv = min(int(round_half_up(v)), height - 1)
    rows = np.arange(height)[:, None] - cv
    cols = np.arange(width)[None, :] - cu
    d2 = rows ** 2 + cols ** 2
    grid = np.exp(-0.5 * d2 / sigma ** 2)
    grid[d2 > (TRUNCATE * sigma) ** 2] = 0.0
    return Heatmap(grid, joint, camera)


def render_pose(points, height, width, sigma_px=1.0, camera=0):
    """One heatmap per joint of a (P, 2) pixel array."""
    return [render_joint(pt, height, width, sigma_px, j, camera) for j, pt in enumerate(np.asarray(points))]


def extract_pose(heatmaps):
    return np.array([extract_joint(h) for h in heatmaps], dtype=float)
