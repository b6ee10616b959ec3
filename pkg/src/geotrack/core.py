"""Core geometry and Gaussian primitives shared by every other module.

Conventions used throughout the package: distances in centimeters, time in
seconds, angles in radians. All types here are immutable values and every
function is pure, so concurrent use needs no coordination; the only stateful
object anywhere is a numpy Generator owned by its caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG_TWO_PI = math.log(2.0 * math.pi)


class NotPositiveDefiniteError(ValueError):
    """A covariance matrix failed its positive-definiteness check.

    ``minor_index`` is the 1-based index of the offending leading principal
    minor and ``minor_value`` its value (for a 2x2 matrix: the top-left entry,
    then the determinant).
    """

    def __init__(self, minor_index: int, minor_value: float):
        self.minor_index = minor_index
        self.minor_value = float(minor_value)
        super().__init__(
            f"matrix is not positive definite: leading minor {minor_index} "
            f"is {minor_value:.6g}"
        )


def rotation(angle: float) -> np.ndarray:
    """2x2 counter-clockwise rotation matrix."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def wrap_angle(angle: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def cholesky2x2(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == cov for a symmetric 2x2 input.

    Raises NotPositiveDefiniteError for non-PD input, identifying the failing
    leading minor.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {cov.shape}")
    scale = np.max(np.abs(cov)) + 1.0
    if abs(cov[0, 1] - cov[1, 0]) > 1e-9 * scale:
        raise ValueError("covariance must be symmetric")
    a = cov[0, 0]
    if not a > 0.0:
        raise NotPositiveDefiniteError(1, a)
    l00 = math.sqrt(a)
    l10 = cov[0, 1] / l00
    rem = cov[1, 1] - l10 * l10
    if not rem > 0.0:
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[0, 1]
        raise NotPositiveDefiniteError(2, det)
    return np.array([[l00, 0.0], [l10, math.sqrt(rem)]])


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Gaussian2D:
    """A 2-D Gaussian over object location: mean (cm) and covariance (cm^2).

    The covariance is symmetric by construction (the off-diagonal value is
    stored once) and validated positive definite at construction time.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Gaussian2D):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(2)
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean components must be finite")
        raw = np.array(self.cov, dtype=float)
        if raw.shape != (2, 2):
            raise ValueError(f"covariance must be 2x2, got shape {raw.shape}")
        if not np.all(np.isfinite(raw)):
            raise ValueError("covariance entries must be finite")
        cov = np.array([[raw[0, 0], raw[0, 1]], [raw[0, 1], raw[1, 1]]])
        if not cov[0, 0] > 0.0:
            raise NotPositiveDefiniteError(1, cov[0, 0])
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[0, 1]
        if not det > 0.0:
            raise NotPositiveDefiniteError(2, det)
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(cov))


@dataclass(frozen=True, eq=False)
class ObjectPose:
    """Ground-truth position, heading, and rectangular extent of the object.

    The body frame puts the width axis along x and the length axis along y;
    heading rotates the body frame into the world frame and is normalized
    into [-pi, pi).
    """

    position: np.ndarray
    heading: float
    extent: tuple[float, float]

    def __eq__(self, other):
        if not isinstance(other, ObjectPose):
            return NotImplemented
        return (
            np.array_equal(self.position, other.position)
            and self.heading == other.heading
            and self.extent == other.extent
        )

    def __post_init__(self):
        position = np.array(self.position, dtype=float).reshape(2)
        if not np.all(np.isfinite(position)):
            raise ValueError("position components must be finite")
        w, l = float(self.extent[0]), float(self.extent[1])
        if not (w > 0.0 and l > 0.0):
            raise ValueError(f"extent components must be positive, got {(w, l)}")
        object.__setattr__(self, "position", _frozen(position))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))
        object.__setattr__(self, "extent", (w, l))


@dataclass(frozen=True)
class Arena:
    """Rectangular tracking environment with origin at one corner."""

    width: float = 500.0
    length: float = 700.0

    def __post_init__(self):
        if not (self.width > 0.0 and self.length > 0.0):
            raise ValueError("arena dimensions must be positive")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.width / 2.0, self.length / 2.0])

    def contains(self, point: np.ndarray) -> bool:
        x, y = float(point[0]), float(point[1])
        return 0.0 <= x <= self.width and 0.0 <= y <= self.length


def nll(g: Gaussian2D, point: np.ndarray) -> float:
    """Negative log density of ``point`` under ``g``, in nats.

    Computed via the Cholesky factor of the covariance; finite for any finite
    point.
    """
    point = np.asarray(point, dtype=float).reshape(2)
    if not np.all(np.isfinite(point)):
        raise ValueError("evaluation point must be finite")
    L = cholesky2x2(g.cov)
    d = point - g.mean
    y0 = d[0] / L[0, 0]
    y1 = (d[1] - L[1, 0] * y0) / L[1, 1]
    return LOG_TWO_PI + math.log(L[0, 0]) + math.log(L[1, 1]) + 0.5 * (y0 * y0 + y1 * y1)


def log_density(g: Gaussian2D, points: np.ndarray) -> np.ndarray:
    """Vectorized log density of ``g`` at an (n, 2) array of points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    L = cholesky2x2(g.cov)
    d = points - g.mean
    y0 = d[:, 0] / L[0, 0]
    y1 = (d[:, 1] - L[1, 0] * y0) / L[1, 1]
    log_norm = LOG_TWO_PI + math.log(L[0, 0]) + math.log(L[1, 1])
    return -log_norm - 0.5 * (y0 * y0 + y1 * y1)


def sample_gaussian(g: Gaussian2D, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` points from ``g`` as an (n, 2) array, reproducible per rng."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    L = cholesky2x2(g.cov)
    z = rng.standard_normal((n, 2))
    return g.mean + z @ L.T


def point_in_pose(pose: ObjectPose, point: np.ndarray) -> bool:
    """True iff the point lies in the pose's rectangle; boundary counts as inside."""
    b = rotation(-pose.heading) @ (np.asarray(point, dtype=float) - pose.position)
    return bool(
        abs(b[0]) <= pose.extent[0] / 2.0 and abs(b[1]) <= pose.extent[1] / 2.0
    )


def points_in_pose(pose: ObjectPose, points: np.ndarray) -> np.ndarray:
    """Vectorized membership test for an (n, 2) array of points."""
    d = np.atleast_2d(np.asarray(points, dtype=float)) - pose.position
    b = d @ rotation(-pose.heading).T
    return (np.abs(b[:, 0]) <= pose.extent[0] / 2.0) & (
        np.abs(b[:, 1]) <= pose.extent[1] / 2.0
    )


def heading_from_velocity(velocity: np.ndarray) -> float:
    """Heading that aligns the pose's length axis with the velocity direction."""
    vx, vy = float(velocity[0]), float(velocity[1])
    if vx == 0.0 and vy == 0.0:
        return 0.0
    return wrap_angle(math.atan2(-vx, vy))
