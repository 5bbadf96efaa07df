"""Per-point depth estimation: epipolar scan, subpixel refinement, variance and fusion.

``update_map`` runs the whole per-pixel chain over a keyframe and then the
two regularization filters, recording what happened to each pixel in an
:class:`UpdateTrace` that feeds the performance model.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import regularize
from .errors import (
    DimensionMismatch,
    GeometryRejection,
    NearEpipole,
    NonPositiveVariance,
    OutOfBounds,
    OutsideFrame,
    TriangulationError,
)
from .geometry import CameraIntrinsics, EpipolarSegment, Pose, epipolar_segment, triangulate_inverse_depth
from .keyframe import Flag, Keyframe, Verdict, max_gradient_map

PATTERN_OFFSETS = (-2, -1, 0, 1, 2)
GRADIENT_EPS = 1e-4
KEYPOINT_MARGIN = 3
SECOND_BEST_EXCLUSION = 2  # steps either side of the best that cannot be second best


class MatchStatus(enum.IntEnum):
    GOOD = 0
    AMBIGUOUS = 1
    BIG_ERROR = 2
    SKIPPED = 3


class FusionVerdict(enum.IntEnum):
    FUSED = 0
    REJECTED_OUTLIER = 1
    CREATED = 2


@dataclass
class SearchParams:
    gradient_threshold: float = 5.0
    max_steps: int = 100
    idepth_min: float = 0.05
    idepth_max: float = 10.0
    min_epl_length: float = 1.75
    border: float = 2.0
    step: float = 1.0
    ambiguity_ratio: float = 1.44
    max_error: float = 5 * 20.0**2
    sigma_l: float = 0.2
    sigma_i: float = 4.0
    sigma_max: float = 1.0
    prior_min_validity: int = 1
    new_variance_inflation: float = 1.5
    fusion_gate: float = 2.0
    blacklist_failures: int = 3


@dataclass(frozen=True)
class SearchSpec:
    segment: EpipolarSegment
    step: float
    n_steps: int
    reference_pattern: np.ndarray
    keyframe_epl_dir: tuple[float, float]


@dataclass(frozen=True)
class MatchResult:
    best_t: float
    best_err: float
    second_best_err: float
    steps_performed: int
    subpixel_t: float
    status: MatchStatus
    err_minus: float = math.inf
    err_plus: float = math.inf
    refined: bool = False


@dataclass(frozen=True)
class Observation:
    idepth: float
    variance: float


@dataclass(frozen=True)
class SubpixelResult:
    offset: float
    refined: bool


@dataclass(frozen=True)
class VarianceResult:
    variance: float
    geometric: float
    photometric: float
    alpha: float
    degenerate: bool = False


# --- sampling -------------------------------------------------------------


def bilinear_many(image: np.ndarray, xs, ys) -> np.ndarray:
    """Vectorized bilinear sampling; callers guarantee in-bounds coordinates."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h, w = image.shape
    x0 = np.minimum(xs.astype(np.intp), w - 2)
    y0 = np.minimum(ys.astype(np.intp), h - 2)
    a = xs - x0
    b = ys - y0
    flat = image.ravel()
    idx = y0 * w + x0
    i00 = flat[idx]
    i10 = flat[idx + 1]
    i01 = flat[idx + w]
    i11 = flat[idx + w + 1]
    top = i00 + a * (i10 - i00.astype(np.float64))
    bottom = i01 + a * (i11 - i01.astype(np.float64))
    return top + b * (bottom - top)


def sample_bilinear(image: np.ndarray, coords) -> float:
    x, y = coords
    h, w = image.shape
    if not (0 <= x <= w - 2 and 0 <= y <= h - 2):
        raise OutOfBounds(f"({x}, {y}) outside the interpolable region")
    return float(bilinear_many(image, x, y))


def image_gradient(image: np.ndarray, coords) -> np.ndarray:
    """Central-difference intensity gradient at a subpixel location."""
    x, y = coords
    v = bilinear_many(image, [x + 1, x - 1, x, x], [y, y, y + 1, y - 1])
    return np.array([0.5 * (v[0] - v[1]), 0.5 * (v[2] - v[3])])


def build_reference_pattern(keyframe_image: np.ndarray, keypoint, keyframe_epl_dir) -> np.ndarray:
    x, y = keypoint
    h, w = keyframe_image.shape
    if not (KEYPOINT_MARGIN <= x <= w - 1 - KEYPOINT_MARGIN and KEYPOINT_MARGIN <= y <= h - 1 - KEYPOINT_MARGIN):
        raise OutOfBounds(f"keypoint ({x}, {y}) too close to the border for the pattern")
    k = np.array(PATTERN_OFFSETS, dtype=np.float64)
    return bilinear_many(keyframe_image, x + k * keyframe_epl_dir[0], y + k * keyframe_epl_dir[1])


def keyframe_epipolar_direction(keypoint, rel_pose: Pose, intrinsics: CameraIntrinsics) -> tuple[float, float]:
    """Unit direction of the epipolar line through ``keypoint`` in the keyframe.

    Oriented so that stepping along it in the keyframe corresponds to stepping
    along the current-frame search direction.
    """
    K = intrinsics
    c = -rel_pose.rotation.T @ rel_pose.translation  # current camera centre in keyframe coords
    u, v = keypoint
    ex = c[2] * (u - K.cx) - K.fx * c[0]
    ey = c[2] * (v - K.cy) - K.fy * c[1]
    n = math.hypot(ex, ey)
    if n < 1e-9:
        raise NearEpipole("keypoint coincides with the keyframe epipole")
    return ex / n, ey / n


def build_search_spec(
    keyframe_image: np.ndarray,
    keypoint,
    segment: EpipolarSegment,
    rel_pose: Pose,
    intrinsics: CameraIntrinsics,
    step: float = 1.0,
) -> SearchSpec:
    kdir = keyframe_epipolar_direction(keypoint, rel_pose, intrinsics)
    n_steps = int(math.floor(segment.length / step + 1e-9)) + 1
    pattern = build_reference_pattern(keyframe_image, keypoint, kdir)
    return SearchSpec(segment, step, n_steps, pattern, kdir)


# --- scan -----------------------------------------------------------------


def scan_errors(spec: SearchSpec, current_image: np.ndarray) -> np.ndarray:
    """SSD of the reference pattern at every step of the segment.

    With a unit step every step consumes exactly one new interpolated sample;
    the other four are reused from the previous window.
    """
    seg = spec.segment
    n = spec.n_steps
    ox, oy = seg.origin
    dx, dy = seg.direction
    ref = spec.reference_pattern
    if spec.step == 1.0:
        ts = seg.t_min + np.arange(-2, n + 2, dtype=np.float64)
        stream = bilinear_many(current_image, ox + ts * dx, oy + ts * dy)
        errors = np.zeros(n)
        for k in range(5):
            diff = stream[k : k + n] - ref[k]
            errors += diff * diff
    else:
        ts = seg.t_min + spec.step * np.arange(n, dtype=np.float64)
        k = np.array(PATTERN_OFFSETS, dtype=np.float64)
        tt = ts[:, None] + k[None, :]
        windows = bilinear_many(current_image, ox + tt * dx, oy + tt * dy)
        errors = ((windows - ref) ** 2).sum(axis=1)
    return errors


def scan_epipolar(
    spec: SearchSpec,
    current_image: np.ndarray,
    ambiguity_ratio: float = 1.44,
    max_error: float = 5 * 20.0**2,
) -> MatchResult:
    """Slide the 5-point pattern along the segment and keep the two best SSDs."""
    seg = spec.segment
    n = spec.n_steps
    errors = scan_errors(spec, current_image)

    best = int(np.argmin(errors))
    best_err = float(errors[best])
    masked = errors.copy()
    r = SECOND_BEST_EXCLUSION
    masked[max(0, best - r) : best + r + 1] = np.inf
    second = float(masked.min()) if n > 0 else math.inf
    if not second >= best_err:
        second = math.inf

    if second == best_err:
        ratio = 1.0
    elif best_err == 0.0:
        ratio = math.inf
    else:
        ratio = second / best_err
    if ratio < ambiguity_ratio:
        status = MatchStatus.AMBIGUOUS
    elif best_err > max_error:
        status = MatchStatus.BIG_ERROR
    else:
        status = MatchStatus.GOOD

    best_t = seg.t_min + best * spec.step
    return MatchResult(
        best_t=best_t,
        best_err=best_err,
        second_best_err=second,
        steps_performed=n,
        subpixel_t=best_t,
        status=status,
        err_minus=float(errors[best - 1]) if best > 0 else math.inf,
        err_plus=float(errors[best + 1]) if best + 1 < n else math.inf,
    )


def naive_ssd(spec: SearchSpec, current_image: np.ndarray, i: int) -> float:
    """Five-term SSD at step ``i`` recomputed from scratch."""
    seg = spec.segment
    t = seg.t_min + i * spec.step
    total = 0.0
    for ref, k in zip(spec.reference_pattern, PATTERN_OFFSETS):
        p = seg.point(t + k)
        total += (sample_bilinear(current_image, p) - ref) ** 2
    return total


def subpixel_refine(err_minus: float, err_0: float, err_plus: float, step: float = 1.0) -> SubpixelResult:
    """Vertex of the parabola through three SSD samples, as an offset in pixels."""
    denom = err_minus - 2.0 * err_0 + err_plus
    if not (err_0 <= err_minus and err_0 <= err_plus) or not (denom > 0) or not math.isfinite(denom):
        return SubpixelResult(0.0, False)
    offset = 0.5 * (err_minus - err_plus) / denom * step
    half = 0.5 * step
    return SubpixelResult(min(max(offset, -half), half), True)


def refine_match(match: MatchResult, step: float = 1.0) -> MatchResult:
    res = subpixel_refine(match.err_minus, match.best_err, match.err_plus, step)
    return replace(match, subpixel_t=match.best_t + res.offset, refined=res.refined)


# --- depth, variance, fusion ----------------------------------------------


def compute_variance(
    keypoint,
    segment: EpipolarSegment,
    match: MatchResult,
    image_gradient_at_match,
    rel_pose: Pose,
    intrinsics: CameraIntrinsics,
    params: SearchParams | None = None,
    step: float = 1.0,
) -> VarianceResult:
    """Inverse-depth variance of a good match.

    Geometric (epipolar-line misalignment) and photometric (image noise along
    the line) disparity errors are mapped to inverse depth through the local
    slope ``alpha`` of inverse depth with respect to position along the line.
    """
    if match.status != MatchStatus.GOOD:
        raise ValueError("variance is only defined for GOOD matches")
    p = params or SearchParams()
    gx, gy = (float(c) for c in image_gradient_at_match)
    lx, ly = segment.direction
    gnorm = math.hypot(gx, gy)
    lnorm = math.hypot(lx, ly)
    g_l = gx * lx + gy * ly
    cos = abs(g_l) / (gnorm * lnorm) if gnorm > 0 else 0.0
    geo_den = max(GRADIENT_EPS, cos) ** 2
    photo_den = max(GRADIENT_EPS, g_l * g_l)
    if cos <= GRADIENT_EPS and g_l * g_l <= GRADIENT_EPS:
        return VarianceResult(p.sigma_max**2, math.inf, math.inf, math.nan, degenerate=True)
    geometric = p.sigma_l**2 / geo_den
    photometric = 2.0 * p.sigma_i**2 / photo_den

    t = match.subpixel_t
    d0 = triangulate_inverse_depth(keypoint, segment.point(t), rel_pose, intrinsics, segment.direction)
    try:
        d1 = triangulate_inverse_depth(keypoint, segment.point(t + step), rel_pose, intrinsics, segment.direction)
    except TriangulationError:
        d1 = triangulate_inverse_depth(keypoint, segment.point(t - step), rel_pose, intrinsics, segment.direction)
    alpha = abs(d1 - d0) / step
    return VarianceResult(alpha**2 * (geometric + photometric), geometric, photometric, alpha)


def fuse_hypothesis(prior: Observation, obs: Observation, gate: float = 2.0) -> tuple[Observation, FusionVerdict]:
    """Product of two Gaussians in inverse depth, gated against outliers."""
    if not (prior.variance > 0 and obs.variance > 0):
        raise NonPositiveVariance("fusion requires positive variances")
    gap = abs(prior.idepth - obs.idepth)
    if gap > gate * (math.sqrt(prior.variance) + math.sqrt(obs.variance)):
        return prior, FusionVerdict.REJECTED_OUTLIER
    vp, vo = prior.variance, obs.variance
    s = vp + vo
    mean = (vo * prior.idepth + vp * obs.idepth) / s
    return Observation(mean, vp * vo / s), FusionVerdict.FUSED


# --- map update -----------------------------------------------------------


@dataclass
class UpdateTrace:
    """What happened to every keyframe pixel during one map update."""

    verdict: np.ndarray
    steps: np.ndarray
    best_err: np.ndarray
    second_best_err: np.ndarray
    status: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = self.verdict.shape
        if self.status is None:
            self.status = np.full(shape, MatchStatus.SKIPPED, dtype=np.uint8)
        for name in ("steps", "best_err", "second_best_err", "status"):
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"trace field {name} has shape {getattr(self, name).shape}")

    @classmethod
    def empty(cls, height: int, width: int) -> "UpdateTrace":
        return cls(
            np.full((height, width), Verdict.UNSET, dtype=np.uint8),
            np.zeros((height, width), dtype=np.int32),
            np.full((height, width), np.nan),
            np.full((height, width), np.nan),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.verdict.shape

    def scan_mask(self) -> np.ndarray:
        return self.verdict == Verdict.SCAN

    def to_csv(self, path) -> None:
        h, w = self.shape
        names = {v.value: v.name for v in Verdict}
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["x", "y", "verdict", "steps", "best_err", "second_best_err"])
            for y in range(h):
                vrow, srow = self.verdict[y], self.steps[y]
                brow, sbrow = self.best_err[y], self.second_best_err[y]
                for x in range(w):
                    wr.writerow(
                        [x, y, names[int(vrow[x])], int(srow[x]), repr(float(brow[x])), repr(float(sbrow[x]))]
                    )

    @classmethod
    def from_csv(cls, path) -> "UpdateTrace":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise DimensionMismatch(f"empty trace file {path}")
        xs = np.array([int(r["x"]) for r in rows])
        ys = np.array([int(r["y"]) for r in rows])
        trace = cls.empty(int(ys.max()) + 1, int(xs.max()) + 1)
        trace.verdict[ys, xs] = [Verdict[r["verdict"]] for r in rows]
        trace.steps[ys, xs] = [int(r["steps"]) for r in rows]
        trace.best_err[ys, xs] = [float(r["best_err"]) for r in rows]
        trace.second_best_err[ys, xs] = [float(r["second_best_err"]) for r in rows]
        return trace

    def equals(self, other: "UpdateTrace") -> bool:
        return (
            np.array_equal(self.verdict, other.verdict)
            and np.array_equal(self.steps, other.steps)
            and np.array_equal(self.best_err, other.best_err, equal_nan=True)
            and np.array_equal(self.second_best_err, other.second_best_err, equal_nan=True)
        )


def _search_prior(rec, params: SearchParams):
    if not rec["flags"] & Flag.VALID or rec["validity"] < params.prior_min_validity:
        return None
    sigma = math.sqrt(float(rec["variance"]))
    if sigma >= params.sigma_max:
        return None
    return float(rec["idepth"]), sigma


def _mark_failure(rec, params: SearchParams) -> None:
    rec["failures"] = min(255, int(rec["failures"]) + 1)
    if rec["failures"] >= params.blacklist_failures:
        rec["flags"] = (int(rec["flags"]) | Flag.BLACKLISTED) & ~int(Flag.VALID)


def _observe(keypoint, kf_image, image, rel_pose, K, prior, p: SearchParams):
    """Match one keypoint; returns (verdict, match, observation-or-None)."""
    try:
        seg = epipolar_segment(
            keypoint, rel_pose, K, prior, p.max_steps,
            idepth_min=p.idepth_min, idepth_max=p.idepth_max,
            min_epl_length=p.min_epl_length, border=p.border, step=p.step,
        )
        spec = build_search_spec(kf_image, keypoint, seg, rel_pose, K, p.step)
    except OutsideFrame:
        return Verdict.SKIP_OUT_OF_FRAME, None, None
    except GeometryRejection:
        return Verdict.SKIP_GEOMETRY, None, None

    match = scan_epipolar(spec, image, p.ambiguity_ratio, p.max_error)
    if match.status != MatchStatus.GOOD:
        return Verdict.SCAN, match, None
    match = refine_match(match, p.step)
    try:
        grad = image_gradient(image, seg.point(match.subpixel_t))
        idepth = triangulate_inverse_depth(keypoint, seg.point(match.subpixel_t), rel_pose, K, seg.direction)
        var = compute_variance(keypoint, seg, match, grad, rel_pose, K, p, p.step)
    except TriangulationError:
        return Verdict.SCAN, match, None
    if var.degenerate or not (math.isfinite(idepth) and var.variance > 0 and math.isfinite(var.variance)):
        return Verdict.SCAN, match, None
    return Verdict.SCAN, match, Observation(idepth, var.variance)


def update_map(
    keyframe: Keyframe,
    image: np.ndarray,
    rel_pose: Pose,
    intrinsics: CameraIntrinsics,
    params: SearchParams | None = None,
    filter_params: "regularize.FilterParams | None" = None,
) -> tuple[Keyframe, UpdateTrace]:
    """Match every keyframe pixel against ``image`` and update its hypothesis.

    ``rel_pose`` maps keyframe camera coordinates to current-frame camera
    coordinates.  Returns a new keyframe; the input is not modified.
    """
    p = params or SearchParams()
    fp = filter_params or regularize.FilterParams()
    image = np.asarray(image)
    if image.shape != keyframe.image.shape:
        raise DimensionMismatch(f"frame {image.shape} vs keyframe {keyframe.image.shape}")
    if image.shape != (intrinsics.height, intrinsics.width):
        raise DimensionMismatch("intrinsics do not match the image size")

    out = keyframe.copy()
    hyps = out.hypotheses
    kf_image = keyframe.image
    h, w = image.shape
    trace = UpdateTrace.empty(h, w)

    grad = max_gradient_map(kf_image)
    inner = np.zeros((h, w), dtype=bool)
    m = KEYPOINT_MARGIN
    inner[m : h - m, m : w - m] = True
    blacklisted = (hyps["flags"] & Flag.BLACKLISTED) != 0

    trace.verdict[:] = Verdict.SKIP_OUT_OF_FRAME
    trace.verdict[inner & (grad < p.gradient_threshold)] = Verdict.SKIP_LOW_GRADIENT
    trace.verdict[inner & blacklisted] = Verdict.SKIP_BLACKLISTED
    candidates = inner & ~blacklisted & (grad >= p.gradient_threshold)

    for y, x in zip(*np.nonzero(candidates)):
        rec = hyps[y, x]
        keypoint = (float(x), float(y))
        prior = _search_prior(rec, p)
        verdict, match, obs = _observe(keypoint, kf_image, image, rel_pose, intrinsics, prior, p)
        trace.verdict[y, x] = verdict
        if match is None:
            continue
        trace.steps[y, x] = match.steps_performed
        trace.best_err[y, x] = match.best_err
        trace.second_best_err[y, x] = match.second_best_err
        trace.status[y, x] = match.status
        if obs is None:
            _mark_failure(rec, p)
            continue

        flags = int(rec["flags"])
        replaceable = not flags & Flag.VALID or (flags & Flag.FILLED_BY_NEIGHBOUR and rec["validity"] == 0)
        if replaceable:
            rec["idepth"] = obs.idepth
            rec["variance"] = obs.variance * p.new_variance_inflation
            rec["validity"] = 1
            rec["flags"] = (flags | Flag.VALID) & ~int(Flag.FILLED_BY_NEIGHBOUR)
            continue
        fused, fv = fuse_hypothesis(Observation(float(rec["idepth"]), float(rec["variance"])), obs, p.fusion_gate)
        if fv == FusionVerdict.FUSED:
            rec["idepth"] = fused.idepth
            rec["variance"] = fused.variance
            rec["validity"] = min(255, int(rec["validity"]) + 1)
            rec["failures"] = max(0, int(rec["failures"]) - 1)
            rec["flags"] = flags & ~int(Flag.FILLED_BY_NEIGHBOUR)
        else:
            _mark_failure(rec, p)

    if fp.hole_fill_enabled:
        out = regularize.hole_fill(out, fp)
    if fp.smooth_enabled:
        out = regularize.smooth(out, fp)
    return out, trace
