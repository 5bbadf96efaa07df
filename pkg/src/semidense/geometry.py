"""Pinhole camera model, rigid transforms and epipolar search geometry.

Conventions: pixel coordinates are ``(u, v)`` with ``u`` along image columns.
A relative pose maps keyframe camera coordinates into current-frame camera
coordinates, ``X_cur = R @ X_kf + t``.  Inverse depth is measured along the
keyframe ray of a pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BehindCamera,
    DivergentRays,
    NearEpipole,
    NonPositiveDepth,
    OutsideFrame,
    TooShort,
)

DEPTH_EPS = 1e-6
EPIPOLE_EPS = 1e-6
DIVERGENCE_EPS = 1e-9
ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_file(cls, path) -> "CameraIntrinsics":
        """Read a calibration file holding one line ``fx fy cx cy width height``."""
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 6:
                raise ValueError(f"expected 6 calibration values, got {len(fields)}")
            fx, fy, cx, cy, w, h = (float(f) for f in fields)
            return cls(fx, fy, cx, cy, int(w), int(h))
        raise ValueError(f"empty calibration file: {path}")

    def to_file(self, path) -> None:
        Path(path).write_text(
            f"{self.fx!r} {self.fy!r} {self.cx!r} {self.cy!r} {self.width} {self.height}\n"
        )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, quat_xyzw, translation) -> "Pose":
        from scipy.spatial.transform import Rotation

        return cls(Rotation.from_quat(quat_xyzw).as_matrix(), translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self * other`` (apply ``other`` first)."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def transform(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class EpipolarSegment:
    origin: tuple[float, float]
    direction: tuple[float, float]
    t_min: float
    t_max: float

    @property
    def length(self) -> float:
        return self.t_max - self.t_min

    def point(self, t: float) -> np.ndarray:
        return np.array(
            [self.origin[0] + t * self.direction[0], self.origin[1] + t * self.direction[1]]
        )


def unproject(pixel, intrinsics: CameraIntrinsics) -> np.ndarray:
    u, v = pixel
    return np.array([(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy, 1.0])


def project(point, intrinsics: CameraIntrinsics) -> np.ndarray:
    x, y, z = (float(c) for c in point)
    if z <= DEPTH_EPS:
        raise NonPositiveDepth(f"cannot project point with z={z}")
    return np.array([intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy])


def _rotated_ray(keypoint, rel_pose: Pose, K: CameraIntrinsics):
    u, v = keypoint
    R = rel_pose.rotation
    a = (u - K.cx) / K.fx
    b = (v - K.cy) / K.fy
    return (
        R[0, 0] * a + R[0, 1] * b + R[0, 2],
        R[1, 0] * a + R[1, 1] * b + R[1, 2],
        R[2, 0] * a + R[2, 1] * b + R[2, 2],
    )


def epipolar_direction(keypoint, rel_pose: Pose, intrinsics: CameraIntrinsics) -> tuple[float, float]:
    """Unnormalized direction in which the match moves as inverse depth grows.

    The pixel of inverse depth ``d`` is ``project(r + d*t)``; its derivative
    with respect to ``d`` is this vector divided by the (positive) squared
    depth, so the orientation holds along the whole line.
    """
    rx, ry, rz = _rotated_ray(keypoint, rel_pose, intrinsics)
    tx, ty, tz = rel_pose.translation
    return (intrinsics.fx * (tx * rz - rx * tz), intrinsics.fy * (ty * rz - ry * tz))


def _clip_to_box(ox, oy, dx, dy, lo_x, hi_x, lo_y, hi_y, t0, t1):
    # Liang-Barsky on a parametric line, returns None when empty.
    for o, d, lo, hi in ((ox, dx, lo_x, hi_x), (oy, dy, lo_y, hi_y)):
        if abs(d) < 1e-12:
            if o < lo or o > hi:
                return None
            continue
        a = (lo - o) / d
        b = (hi - o) / d
        if a > b:
            a, b = b, a
        t0 = max(t0, a)
        t1 = min(t1, b)
        if t0 > t1:
            return None
    return t0, t1


def epipolar_segment(
    keypoint,
    rel_pose: Pose,
    intrinsics: CameraIntrinsics,
    prior: tuple[float, float] | None = None,
    max_steps: int = 100,
    *,
    idepth_min: float = 0.05,
    idepth_max: float = 10.0,
    min_epl_length: float = 1.75,
    border: float = 2.0,
    step: float = 1.0,
) -> EpipolarSegment:
    """Build the clipped search segment for ``keypoint`` in the current frame.

    With ``prior = (idepth, sigma)`` the segment is centred on the projection
    of the prior and spans inverse depths ``idepth +- 2 sigma``; otherwise it
    starts at the projection of ``idepth_min`` and runs towards
    ``idepth_max``.  The segment is clipped so every point stays ``border``
    pixels inside the image, leaving room for the +-2 px matching pattern and
    bilinear sampling, and capped to ``max_steps`` sample positions.

    Raises:
        NearEpipole: the keypoint does not move between the views.
        OutsideFrame: no part of the line is visible in the current frame.
        TooShort: the visible part is shorter than ``min_epl_length``.
    """
    K = intrinsics
    rx, ry, rz = _rotated_ray(keypoint, rel_pose, K)
    tx, ty, tz = (float(c) for c in rel_pose.translation)

    ex = K.fx * (tx * rz - rx * tz)
    ey = K.fy * (ty * rz - ry * tz)
    norm = math.hypot(ex, ey)
    if norm < EPIPOLE_EPS:
        raise NearEpipole("keypoint projects onto itself")
    dx, dy = ex / norm, ey / norm

    if prior is not None:
        d, sigma = prior
        lo, hi = max(d - 2.0 * sigma, 0.0), d + 2.0 * sigma
        ref = d
    else:
        lo, hi = idepth_min, idepth_max
        ref = idepth_min

    # keep the search in front of the current camera: rz + d*tz > 0
    if tz > 1e-12:
        lo = max(lo, (DEPTH_EPS - rz) / tz)
    elif tz < -1e-12:
        hi = min(hi, (DEPTH_EPS - rz) / tz)
    elif rz <= DEPTH_EPS:
        raise OutsideFrame("keypoint ray points behind the current camera")
    if lo > hi:
        raise OutsideFrame("search interval lies behind the current camera")
    ref = min(max(ref, lo), hi)

    def pixel(dd):
        z = rz + dd * tz
        return K.fx * (rx + dd * tx) / z + K.cx, K.fy * (ry + dd * ty) / z + K.cy

    ox, oy = pixel(ref)
    plo = pixel(lo)
    phi = pixel(hi)
    t_lo = (plo[0] - ox) * dx + (plo[1] - oy) * dy
    t_hi = (phi[0] - ox) * dx + (phi[1] - oy) * dy
    if t_lo > t_hi:
        t_lo, t_hi = t_hi, t_lo

    clipped = _clip_to_box(
        ox, oy, dx, dy,
        border, K.width - 2 - border,
        border, K.height - 2 - border,
        t_lo, t_hi,
    )
    if clipped is None:
        raise OutsideFrame("epipolar segment does not intersect the image")
    t_min, t_max = clipped
    if t_max - t_min < min_epl_length:
        raise TooShort(f"visible segment is {t_max - t_min:.3f} px")

    cap = (max_steps - 1) * step
    if t_max - t_min > cap:
        if prior is not None:
            centre = min(max(0.0, t_min), t_max)
            start = max(t_min, min(centre - 0.5 * cap, t_max - cap))
        else:
            start = t_min
        t_min, t_max = start, start + cap

    return EpipolarSegment((ox, oy), (dx, dy), t_min, t_max)


def triangulate_inverse_depth(
    keypoint,
    matched,
    rel_pose: Pose,
    intrinsics: CameraIntrinsics,
    direction: tuple[float, float] | None = None,
) -> float:
    """Inverse depth of ``keypoint`` given its subpixel match in the current frame.

    Solves ``q_a * (z*r_z + t_z) = z*r_a + t_a`` on the image axis ``a`` along
    which the epipolar line moves most.
    """
    K = intrinsics
    rx, ry, rz = _rotated_ray(keypoint, rel_pose, K)
    tx, ty, tz = (float(c) for c in rel_pose.translation)
    if direction is None:
        direction = (K.fx * (tx * rz - rx * tz), K.fy * (ty * rz - ry * tz))
    if abs(direction[0]) >= abs(direction[1]):
        q = (matched[0] - K.cx) / K.fx
        r_a, t_a = rx, tx
    else:
        q = (matched[1] - K.cy) / K.fy
        r_a, t_a = ry, ty
    denom = q * rz - r_a
    if abs(denom) < DIVERGENCE_EPS:
        raise DivergentRays("viewing rays are parallel")
    z = (t_a - q * tz) / denom
    if z <= 0:
        raise BehindCamera(f"triangulated depth {z} is not positive")
    return 1.0 / z
