"""Keyframe depth map: per-pixel inverse-depth hypotheses over a keyframe image.

The hypothesis grid is a numpy structured array whose record layout is the
24-byte on-disk record, so serialization is a straight memory copy.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, BorderPixel, DimensionMismatch, SizeMismatch
from .geometry import Pose

FORMAT_VERSION = 1
HEADER = struct.Struct("<4I")

HYPOTHESIS_DTYPE = np.dtype(
    [
        ("idepth", "<f4"),
        ("variance", "<f4"),
        ("idepth_smoothed", "<f4"),
        ("variance_smoothed", "<f4"),
        ("validity", "u1"),
        ("failures", "u1"),
        ("flags", "u1"),
        ("reserved", "u1", (5,)),
    ]
)
assert HYPOTHESIS_DTYPE.itemsize == 24

DEFAULT_GRADIENT_THRESHOLD = 5.0
BLACKLIST_FAILURES = 3


class Flag(enum.IntFlag):
    VALID = 1
    BLACKLISTED = 2
    FILLED_BY_NEIGHBOUR = 4


class Verdict(enum.IntEnum):
    SCAN = 0
    SKIP_LOW_GRADIENT = 1
    SKIP_BLACKLISTED = 2
    SKIP_OUT_OF_FRAME = 3
    SKIP_GEOMETRY = 4
    UNSET = 255


@dataclass(frozen=True)
class DepthHypothesis:
    """Python view of one grid record."""

    idepth: float = 0.0
    variance: float = 0.0
    idepth_smoothed: float = 0.0
    variance_smoothed: float = 0.0
    validity_counter: int = 0
    failure_counter: int = 0
    flags: Flag = Flag(0)

    @property
    def valid(self) -> bool:
        return bool(self.flags & Flag.VALID)

    @classmethod
    def from_record(cls, rec) -> "DepthHypothesis":
        return cls(
            float(rec["idepth"]),
            float(rec["variance"]),
            float(rec["idepth_smoothed"]),
            float(rec["variance_smoothed"]),
            int(rec["validity"]),
            int(rec["failures"]),
            Flag(int(rec["flags"])),
        )

    def to_record(self) -> np.ndarray:
        rec = np.zeros((), dtype=HYPOTHESIS_DTYPE)
        rec["idepth"] = self.idepth
        rec["variance"] = self.variance
        rec["idepth_smoothed"] = self.idepth_smoothed
        rec["variance_smoothed"] = self.variance_smoothed
        rec["validity"] = self.validity_counter
        rec["failures"] = self.failure_counter
        rec["flags"] = int(self.flags)
        return rec


def empty_hypotheses(height: int, width: int) -> np.ndarray:
    return np.zeros((height, width), dtype=HYPOTHESIS_DTYPE)


@dataclass(eq=False)
class Keyframe:
    image: np.ndarray
    pose: Pose
    hypotheses: np.ndarray

    def __post_init__(self):
        self.image = np.ascontiguousarray(self.image, dtype=np.uint8)
        if self.image.ndim != 2:
            raise DimensionMismatch("keyframe image must be greyscale (2-D)")
        if self.hypotheses.dtype != HYPOTHESIS_DTYPE or self.hypotheses.shape != self.image.shape:
            raise DimensionMismatch(
                f"hypothesis grid {self.hypotheses.shape} does not match image {self.image.shape}"
            )

    @classmethod
    def create(cls, image, pose: Pose | None = None) -> "Keyframe":
        image = np.asarray(image, dtype=np.uint8)
        return cls(image, pose or Pose.identity(), empty_hypotheses(*image.shape))

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return (self.hypotheses["flags"] & Flag.VALID) != 0

    def hypothesis(self, x: int, y: int) -> DepthHypothesis:
        return DepthHypothesis.from_record(self.hypotheses[y, x])

    def set_hypothesis(self, x: int, y: int, hyp: DepthHypothesis) -> None:
        self.hypotheses[y, x] = hyp.to_record()

    def copy(self) -> "Keyframe":
        return Keyframe(self.image.copy(), self.pose, self.hypotheses.copy())

    def __eq__(self, other):
        if not isinstance(other, Keyframe):
            return NotImplemented
        return (
            self.pose == other.pose
            and np.array_equal(self.image, other.image)
            and self.hypotheses.tobytes() == other.hypotheses.tobytes()
        )


def serialized_size(width: int, height: int) -> int:
    n = width * height
    return HEADER.size + n + HYPOTHESIS_DTYPE.itemsize * n


def serialize(keyframe: Keyframe) -> bytes:
    h, w = keyframe.image.shape
    return b"".join(
        (
            HEADER.pack(w, h, FORMAT_VERSION, 0),
            keyframe.image.tobytes(),
            np.ascontiguousarray(keyframe.hypotheses).tobytes(),
        )
    )


def deserialize(data: bytes, pose: Pose | None = None) -> Keyframe:
    """Inverse of :func:`serialize`.

    The stream carries no pose; pass it explicitly or get the identity.
    """
    if len(data) < HEADER.size:
        raise SizeMismatch(f"stream of {len(data)} bytes is shorter than the header")
    w, h, version, _ = HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise BadMagic(f"unsupported keyframe format version {version}")
    if len(data) != serialized_size(w, h):
        raise SizeMismatch(f"expected {serialized_size(w, h)} bytes for {w}x{h}, got {len(data)}")
    n = w * h
    image = np.frombuffer(data, dtype=np.uint8, count=n, offset=HEADER.size).reshape(h, w).copy()
    hyps = (
        np.frombuffer(data, dtype=HYPOTHESIS_DTYPE, count=n, offset=HEADER.size + n)
        .reshape(h, w)
        .copy()
    )
    return Keyframe(image, pose or Pose.identity(), hyps)


def save_keyframe(path, keyframe: Keyframe) -> None:
    with open(path, "wb") as f:
        f.write(serialize(keyframe))


def load_keyframe(path, pose: Pose | None = None) -> Keyframe:
    with open(path, "rb") as f:
        return deserialize(f.read(), pose)


# --- gradient eligibility -------------------------------------------------


@dataclass(frozen=True)
class EligibilityDecision:
    verdict: Verdict
    max_neighbourhood_gradient: float


def max_gradient_map(image: np.ndarray) -> np.ndarray:
    """Max central-difference gradient magnitude over each 3x3 neighbourhood.

    Out-of-image samples replicate the nearest edge pixel.
    """
    img = np.pad(np.asarray(image, dtype=np.float64), 2, mode="edge")
    gx = 0.5 * (img[1:-1, 2:] - img[1:-1, :-2])
    gy = 0.5 * (img[2:, 1:-1] - img[:-2, 1:-1])
    mag = np.sqrt(gx * gx + gy * gy)  # (h+2, w+2), offset 1
    h, w = image.shape
    out = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            np.maximum(out, mag[dy : dy + h, dx : dx + w], out=out)
    return out


def _local_max_gradient(image: np.ndarray, x: int, y: int) -> float:
    h, w = image.shape
    rows = np.clip(np.arange(y - 2, y + 3), 0, h - 1)
    cols = np.clip(np.arange(x - 2, x + 3), 0, w - 1)
    patch = np.asarray(image, dtype=np.float64)[np.ix_(rows, cols)]
    gx = 0.5 * (patch[1:4, 2:5] - patch[1:4, 0:3])
    gy = 0.5 * (patch[2:5, 1:4] - patch[0:3, 1:4])
    return float(np.sqrt(gx * gx + gy * gy).max())


def gradient_check(
    image: np.ndarray,
    pixel,
    threshold: float = DEFAULT_GRADIENT_THRESHOLD,
    blacklisted: bool = False,
) -> EligibilityDecision:
    x, y = (int(c) for c in pixel)
    h, w = image.shape
    if not (1 <= x < w - 1 and 1 <= y < h - 1):
        raise BorderPixel(f"pixel ({x}, {y}) is on the image border")
    g = _local_max_gradient(image, x, y)
    if blacklisted:
        verdict = Verdict.SKIP_BLACKLISTED
    elif g >= threshold:
        verdict = Verdict.SCAN
    else:
        verdict = Verdict.SKIP_LOW_GRADIENT
    return EligibilityDecision(verdict, g)
