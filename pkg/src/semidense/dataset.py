"""Image sequences with externally supplied camera poses.

Images are named by their timestamp in seconds (``1305031102.175304.png``).
The trajectory file follows the TUM convention, one pose per line::

    timestamp tx ty tz qx qy qz qw

giving the camera-to-world transform; poses are stored here world-to-camera.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import DatasetError, MissingCalib, NoPoseWithinWindow, UnsortedTrajectory
from .geometry import CameraIntrinsics, Pose
from .imageio import read_grey

IMAGE_SUFFIXES = (".png", ".pgm")
MATCH_WINDOW = 0.010


@dataclass
class Trajectory:
    timestamps: np.ndarray
    positions: np.ndarray  # camera centres in world, (N, 3)
    rotations: Rotation  # camera-to-world

    def __len__(self):
        return len(self.timestamps)


@dataclass
class DatasetSequence:
    timestamps: list[float]
    image_paths: list[Path]
    poses: list[Pose]  # world-to-camera
    calibration: CameraIntrinsics

    def __len__(self):
        return len(self.timestamps)

    def image(self, i: int) -> np.ndarray:
        return read_grey(self.image_paths[i])


def read_trajectory(path) -> Trajectory:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 8:
            raise DatasetError(f"{path}: expected 8 fields per pose, got {len(parts)}")
        rows.append([float(p) for p in parts])
    if not rows:
        raise DatasetError(f"{path}: no poses")
    data = np.array(rows)
    if np.any(np.diff(data[:, 0]) <= 0):
        raise UnsortedTrajectory(f"{path}: timestamps are not strictly increasing")
    return Trajectory(data[:, 0], data[:, 1:4], Rotation.from_quat(data[:, 4:8]))


def pose_at(traj: Trajectory, t: float, window: float = MATCH_WINDOW) -> Pose:
    """World-to-camera pose at time ``t``.

    Uses the nearest sample when it is within ``window`` seconds, otherwise
    interpolates (linear position, spherical rotation) between the two
    samples bracketing ``t``.
    """
    ts = traj.timestamps
    i = bisect.bisect_left(ts, t)
    nearest = min((j for j in (i - 1, i) if 0 <= j < len(ts)), key=lambda j: abs(ts[j] - t))
    if abs(ts[nearest] - t) <= window:
        rot, pos = traj.rotations[nearest], traj.positions[nearest]
    elif 0 < i < len(ts):
        a, b = i - 1, i
        s = (t - ts[a]) / (ts[b] - ts[a])
        pos = (1 - s) * traj.positions[a] + s * traj.positions[b]
        rot = Slerp([0.0, 1.0], traj.rotations[[a, b]])([s])[0]
    else:
        raise NoPoseWithinWindow(f"no pose for t={t:.6f}")
    return Pose(rot.as_matrix(), pos).inverse()


def list_images(image_dir) -> list[tuple[float, Path]]:
    out = []
    for p in sorted(Path(image_dir).iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            out.append((float(p.stem), p))
        except ValueError:
            raise DatasetError(f"image name {p.name} is not a timestamp") from None
    out.sort(key=lambda tp: tp[0])
    if not out:
        raise DatasetError(f"no PGM/PNG images in {image_dir}")
    stamps = [t for t, _ in out]
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise DatasetError("duplicate image timestamps")
    return out


def load_dataset(image_dir, trajectory_path, calib_path) -> DatasetSequence:
    if calib_path is None or not Path(calib_path).is_file():
        raise MissingCalib(f"calibration file not found: {calib_path}")
    calib = CameraIntrinsics.from_file(calib_path)
    traj = read_trajectory(trajectory_path)
    frames = list_images(image_dir)
    return DatasetSequence(
        timestamps=[t for t, _ in frames],
        image_paths=[p for _, p in frames],
        poses=[pose_at(traj, t) for t, _ in frames],
        calibration=calib,
    )


def write_trajectory(path, timestamps, world_to_cam: list[Pose]) -> None:
    """Inverse of :func:`read_trajectory` for world-to-camera poses."""
    with open(path, "w") as f:
        f.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, pose in zip(timestamps, world_to_cam):
            c2w = pose.inverse()
            q = Rotation.from_matrix(c2w.rotation).as_quat()
            vals = [t, *c2w.translation, *q]
            f.write(" ".join(repr(float(v)) for v in vals) + "\n")
