"""Detection output-head math and extent-grid losses.

Maps a raw 5-vector of unconstrained detector outputs to a valid location
Gaussian, and provides the per-detection training losses (point negative log
likelihood, and the tile-grid variant that spreads mass over the object's
physical extent). No learned backbone exists in this package; raw head
vectors originate from the simulator or from test fixtures.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import Arena, Gaussian2D, ObjectPose, log_density, nll, rotation


def sigmoid(x):
    """Numerically stable logistic function (scalar or array)."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return out if out.ndim else float(out)


def softplus(x):
    """Overflow-safe softplus: max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def inv_softplus(y: float) -> float:
    """Inverse of softplus for y > 0; tiny y is clamped to keep it finite."""
    y = max(float(y), 1e-12)
    if y > 30.0:
        return y
    return float(np.log(np.expm1(y)))


@dataclass(frozen=True)
class RawHead:
    """The five unconstrained values an output head produces for one detection."""

    mean_raw: np.ndarray
    diag_raw: np.ndarray
    offdiag_raw: float

    def __post_init__(self):
        mean_raw = np.array(self.mean_raw, dtype=float).reshape(2)
        diag_raw = np.array(self.diag_raw, dtype=float).reshape(2)
        off = float(self.offdiag_raw)
        if not (np.all(np.isfinite(mean_raw)) and np.all(np.isfinite(diag_raw)) and np.isfinite(off)):
            raise ValueError("raw head values must be finite")
        object.__setattr__(self, "mean_raw", mean_raw)
        object.__setattr__(self, "diag_raw", diag_raw)
        object.__setattr__(self, "offdiag_raw", off)


@dataclass(frozen=True)
class ExtentGrid:
    """Evenly spaced world-frame tile centers covering an object's rectangle."""

    points: np.ndarray
    tile_area: float

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] == 0:
            raise ValueError("grid points must be a non-empty (n, 2) array")
        if not self.tile_area > 0.0:
            raise ValueError("tile_area must be positive")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "tile_area", float(self.tile_area))


def head_to_gaussian(raw: RawHead, arena: Arena) -> Gaussian2D:
    """Decode a raw head vector into a location Gaussian.

    The mean is a sigmoid of the first two values scaled to the arena size.
    The covariance is M @ M.T + I where M is lower triangular with softplus
    diagonal and the remaining raw value in the (2, 1) slot; the identity
    floor keeps the result positive definite for every input.
    """
    mean = np.array(
        [
            sigmoid(raw.mean_raw[0]) * arena.width,
            sigmoid(raw.mean_raw[1]) * arena.length,
        ]
    )
    d1, d2 = softplus(raw.diag_raw)
    m = np.array([[d1, 0.0], [raw.offdiag_raw, d2]])
    cov = m @ m.T + np.eye(2)
    return Gaussian2D(mean, cov)


def nll_loss(raw: RawHead, arena: Arena, truth: np.ndarray) -> float:
    """Point NLL of the ground-truth position under the decoded head output."""
    truth = np.asarray(truth, dtype=float).reshape(2)
    if not arena.contains(truth):
        warnings.warn(
            f"truth point {truth.tolist()} lies outside the {arena.width}x{arena.length} arena",
            stacklevel=2,
        )
    return nll(head_to_gaussian(raw, arena), truth)


def extent_grid(pose: ObjectPose, tile: float) -> ExtentGrid:
    """Tile-center lattice over the pose's rectangle, rotated into world frame.

    Uses floor(extent / tile) tiles per axis, centered on the rectangle, so
    every point lies strictly inside the extent.
    """
    w, l = pose.extent
    if not tile > 0.0:
        raise ValueError("tile size must be positive")
    if tile > min(w, l) / 2.0:
        raise ValueError(f"tile size {tile} exceeds half the smallest extent {min(w, l) / 2.0}")
    nx = int(w // tile)
    ny = int(l // tile)
    xs = (np.arange(nx) - (nx - 1) / 2.0) * tile
    ys = (np.arange(ny) - (ny - 1) / 2.0) * tile
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    body = np.column_stack([gx.ravel(), gy.ravel()])
    world = pose.position + body @ rotation(pose.heading).T
    return ExtentGrid(world, tile * tile)


def grid_loss(g: Gaussian2D, grid: ExtentGrid) -> float:
    """Negative log of the tile-area-weighted density sum over the grid.

    A soft integral of the probability mass captured by the object's extent;
    log-sum-exp keeps distant tiles from underflowing.
    """
    lp = log_density(g, grid.points)
    m = float(np.max(lp))
    lse = m + float(np.log(np.sum(np.exp(lp - m))))
    return -(lse + float(np.log(grid.tile_area)))
