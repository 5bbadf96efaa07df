"""Ray-traced synthetic scenes with analytic ground-truth inverse depth.

A textured plane is rendered from two camera poses.  The texture is smooth
value noise defined in plane coordinates, so both views sample the same
continuous intensity function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .geometry import CameraIntrinsics, Pose


@dataclass
class PlaneTexture:
    values: np.ndarray
    cell: float  # metres per texture sample

    @classmethod
    def random(cls, seed: int = 0, size: int = 512, cell: float = 0.04, contrast: float = 60.0) -> "PlaneTexture":
        rng = np.random.default_rng(seed)
        return cls(128.0 + contrast * rng.standard_normal((size, size)), cell)

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        n = self.values.shape[0]
        ia = a / self.cell + n / 2
        ib = b / self.cell + n / 2
        return map_coordinates(self.values, [ib, ia], order=3, mode="mirror")


@dataclass
class Plane:
    """Points X with ``normal . X = offset`` (world frame)."""

    normal: np.ndarray
    offset: float

    def basis(self):
        n = self.normal / np.linalg.norm(self.normal)
        helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(helper, n)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        return n, e1, e2


def render_view(
    intrinsics: CameraIntrinsics,
    world_to_cam: Pose,
    plane: Plane,
    texture: PlaneTexture,
) -> tuple[np.ndarray, np.ndarray]:
    """Render a greyscale view and its per-pixel inverse depth."""
    K = intrinsics
    u, v = np.meshgrid(np.arange(K.width, dtype=np.float64), np.arange(K.height, dtype=np.float64))
    rays_cam = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    R, t = world_to_cam.rotation, world_to_cam.translation
    centre = -R.T @ t
    rays_world = rays_cam @ R  # R^T applied to each row
    n, e1, e2 = plane.basis()
    scale = (plane.offset / np.linalg.norm(plane.normal) - n @ centre) / (rays_world @ n)
    if (scale <= 0).any():
        raise ValueError("plane is not in front of the camera everywhere")
    pts = centre + scale[..., None] * rays_world
    intensity = texture(pts @ e1, pts @ e2)
    image = np.clip(np.rint(intensity), 0, 255).astype(np.uint8)
    return image, 1.0 / scale


@dataclass
class SyntheticPair:
    intrinsics: CameraIntrinsics
    keyframe_image: np.ndarray
    current_image: np.ndarray
    keyframe_pose: Pose
    current_pose: Pose
    idepth_true: np.ndarray

    @property
    def rel_pose(self) -> Pose:
        """Keyframe camera coordinates -> current camera coordinates."""
        return self.current_pose @ self.keyframe_pose.inverse()


def two_view_scene(
    width: int = 320,
    height: int = 240,
    focal: float = 250.0,
    baseline=(0.08, 0.0, 0.0),
    rotation_deg: float = 0.0,
    depth: float = 2.0,
    tilt_deg: float = 20.0,
    seed: int = 0,
    texture_cell: float = 0.04,
) -> SyntheticPair:
    """Slanted textured plane seen from a keyframe at the origin and a moved camera.

    ``baseline`` is the current camera centre in the keyframe (world) frame;
    ``rotation_deg`` yaws the current camera about its vertical axis.
    """
    from scipy.spatial.transform import Rotation

    K = CameraIntrinsics(focal, focal, width / 2 - 0.5, height / 2 - 0.5, width, height)
    tilt = np.deg2rad(tilt_deg)
    normal = np.array([np.sin(tilt), 0.0, np.cos(tilt)])
    plane = Plane(normal, depth * np.cos(tilt))
    texture = PlaneTexture.random(seed, cell=texture_cell)

    kf_pose = Pose.identity()
    R = Rotation.from_euler("y", rotation_deg, degrees=True).as_matrix()
    centre = np.asarray(baseline, dtype=np.float64)
    cur_pose = Pose(R, -R @ centre)
    kf_img, idepth = render_view(K, kf_pose, plane, texture)
    cur_img, _ = render_view(K, cur_pose, plane, texture)
    return SyntheticPair(K, kf_img, cur_img, kf_pose, cur_pose, idepth)


def shifted_sinusoid(width: int, height: int, shift: float, period: float = 9.0, amplitude: float = 80.0):
    """Horizontal sinusoid and a copy translated by ``shift`` pixels (float images)."""
    x = np.arange(width, dtype=np.float64)
    base = 128.0 + amplitude * np.sin(2 * np.pi * x / period) + 0.3 * amplitude * np.sin(2 * np.pi * x / (2.7 * period))
    shifted = 128.0 + amplitude * np.sin(2 * np.pi * (x - shift) / period) + 0.3 * amplitude * np.sin(
        2 * np.pi * (x - shift) / (2.7 * period)
    )
    return np.tile(base, (height, 1)), np.tile(shifted, (height, 1))


def write_plane_sequence(
    out_dir,
    centres,
    width: int = 160,
    height: int = 120,
    focal: float = 125.0,
    depth: float = 2.0,
    tilt_deg: float = 20.0,
    seed: int = 0,
    texture_cell: float = 0.08,
    t0: float = 1000.0,
    dt: float = 0.05,
) -> dict:
    """Write a small on-disk dataset: PGM frames, TUM trajectory and calibration.

    One frame is rendered per camera centre (no rotation).  Returns the paths
    and the ground-truth inverse depth of the first frame.
    """
    from pathlib import Path

    from .dataset import write_trajectory
    from .imageio import write_pgm

    out = Path(out_dir)
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    K = CameraIntrinsics(focal, focal, width / 2 - 0.5, height / 2 - 0.5, width, height)
    tilt = np.deg2rad(tilt_deg)
    plane = Plane(np.array([np.sin(tilt), 0.0, np.cos(tilt)]), depth * np.cos(tilt))
    texture = PlaneTexture.random(seed, cell=texture_cell)

    stamps, poses, idepth0 = [], [], None
    for i, c in enumerate(centres):
        pose = Pose(np.eye(3), -np.asarray(c, dtype=np.float64))
        img, idepth = render_view(K, pose, plane, texture)
        if idepth0 is None:
            idepth0 = idepth
        t = t0 + i * dt
        write_pgm(images / f"{t:.6f}.pgm", img)
        stamps.append(t)
        poses.append(pose)
    write_trajectory(out / "groundtruth.txt", stamps, poses)
    K.to_file(out / "calib.txt")
    return {
        "images": images,
        "trajectory": out / "groundtruth.txt",
        "calib": out / "calib.txt",
        "idepth": idepth0,
    }
