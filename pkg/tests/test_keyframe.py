import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semidense.errors import BadMagic, BorderPixel, DimensionMismatch, SizeMismatch
from semidense.geometry import Pose
from semidense.keyframe import (
    HEADER,
    HYPOTHESIS_DTYPE,
    DepthHypothesis,
    Flag,
    Keyframe,
    Verdict,
    deserialize,
    gradient_check,
    load_keyframe,
    max_gradient_map,
    save_keyframe,
    serialize,
    serialized_size,
)


def naive_max_gradient(image, x, y):
    h, w = image.shape

    def px(xx, yy):
        return float(image[min(max(yy, 0), h - 1), min(max(xx, 0), w - 1)])

    best = 0.0
    for ny in (y - 1, y, y + 1):
        for nx in (x - 1, x, x + 1):
            gx = (px(nx + 1, ny) - px(nx - 1, ny)) / 2
            gy = (px(nx, ny + 1) - px(nx, ny - 1)) / 2
            best = max(best, (gx * gx + gy * gy) ** 0.5)
    return best


def random_keyframe(rng, h, w):
    kf = Keyframe.create(rng.integers(0, 256, (h, w), dtype=np.uint8))
    hy = kf.hypotheses
    hy["idepth"] = rng.uniform(0.01, 5, (h, w))
    hy["variance"] = rng.uniform(1e-4, 1, (h, w))
    hy["idepth_smoothed"] = rng.uniform(0.01, 5, (h, w))
    hy["variance_smoothed"] = rng.uniform(1e-4, 1, (h, w))
    hy["validity"] = rng.integers(0, 256, (h, w))
    hy["failures"] = rng.integers(0, 256, (h, w))
    hy["flags"] = rng.integers(0, 8, (h, w))
    return kf


def test_record_is_24_bytes():
    assert HYPOTHESIS_DTYPE.itemsize == 24
    assert len(DepthHypothesis().to_record().tobytes()) == 24


def test_full_resolution_sizes():
    kf = Keyframe.create(np.zeros((480, 640), dtype=np.uint8))
    assert kf.image.nbytes == 307_200
    assert kf.hypotheses.nbytes == 7_372_800
    data = serialize(kf)
    assert len(data) == 16 + 307_200 + 7_372_800 == serialized_size(640, 480)


def test_small_round_trip_bit_exact():
    kf = random_keyframe(np.random.default_rng(0), 2, 2)
    back = deserialize(serialize(kf))
    assert back == kf
    assert serialize(back) == serialize(kf)


def test_header_layout():
    kf = Keyframe.create(np.zeros((3, 5), dtype=np.uint8))
    assert HEADER.unpack_from(serialize(kf)) == (5, 3, 1, 0)


def test_truncated_stream():
    data = serialize(random_keyframe(np.random.default_rng(1), 4, 4))
    with pytest.raises(SizeMismatch):
        deserialize(data[:-1])
    with pytest.raises(SizeMismatch):
        deserialize(data[:10])


def test_bad_version():
    data = bytearray(serialize(Keyframe.create(np.zeros((2, 2), dtype=np.uint8))))
    data[8] = 9
    with pytest.raises(BadMagic):
        deserialize(bytes(data))


@settings(max_examples=50, deadline=None)
@given(
    h=st.integers(1, 12),
    w=st.integers(1, 12),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip_property(h, w, seed):
    kf = random_keyframe(np.random.default_rng(seed), h, w)
    data = serialize(kf)
    assert deserialize(data) == kf
    assert serialize(deserialize(data)) == data


@settings(max_examples=30, deadline=None)
@given(blob=st.binary(min_size=0, max_size=200))
def test_deserialize_rejects_garbage_cleanly(blob):
    try:
        kf = deserialize(blob)
    except (SizeMismatch, BadMagic, DimensionMismatch):
        return
    assert serialize(kf) == blob


def test_file_round_trip(tmp_path):
    kf = random_keyframe(np.random.default_rng(3), 6, 7)
    pose = Pose(np.eye(3), [1.0, 2.0, 3.0])
    kf.pose = pose
    save_keyframe(tmp_path / "k.kfd", kf)
    assert load_keyframe(tmp_path / "k.kfd", pose) == kf


def test_hypothesis_record_view():
    kf = Keyframe.create(np.zeros((3, 3), dtype=np.uint8))
    hyp = DepthHypothesis(0.5, 0.01, 0.5, 0.01, 3, 1, Flag.VALID)
    kf.set_hypothesis(1, 2, hyp)
    got = kf.hypothesis(1, 2)
    assert got.valid and got.validity_counter == 3 and got.failure_counter == 1
    assert got.idepth == pytest.approx(0.5)
    assert kf.valid_mask.sum() == 1


def test_gradient_check_constant_image():
    img = np.full((10, 10), 7, dtype=np.uint8)
    d = gradient_check(img, (5, 5))
    assert d.verdict == Verdict.SKIP_LOW_GRADIENT and d.max_neighbourhood_gradient == 0


def test_gradient_check_step_edge():
    img = np.zeros((10, 10), dtype=np.uint8)
    img[:, 6:] = 100
    d = gradient_check(img, (5, 5))
    assert d.max_neighbourhood_gradient >= 50
    assert d.verdict == Verdict.SCAN


def test_gradient_check_blacklisted_and_border():
    img = np.zeros((10, 10), dtype=np.uint8)
    img[:, 6:] = 100
    assert gradient_check(img, (5, 5), blacklisted=True).verdict == Verdict.SKIP_BLACKLISTED
    with pytest.raises(BorderPixel):
        gradient_check(img, (0, 5))
    with pytest.raises(BorderPixel):
        gradient_check(img, (5, 9))


def test_gradient_check_matches_naive_oracle():
    rng = np.random.default_rng(7)
    img = rng.integers(0, 256, (60, 80), dtype=np.uint8)
    full = max_gradient_map(img)
    xs = rng.integers(1, 79, 10_000)
    ys = rng.integers(1, 59, 10_000)
    for x, y in zip(xs, ys):
        expect = naive_max_gradient(img, x, y)
        d = gradient_check(img, (x, y), threshold=40.0)
        assert d.max_neighbourhood_gradient == pytest.approx(expect, abs=1e-9)
        assert full[y, x] == pytest.approx(expect, abs=1e-9)
        assert (d.verdict == Verdict.SCAN) == (expect >= 40.0)


@given(arrays(np.uint8, (8, 8)), st.floats(0, 200))
def test_scan_implies_threshold(img, thr):
    d = gradient_check(img, (3, 4), threshold=thr)
    if d.verdict == Verdict.SCAN:
        assert d.max_neighbourhood_gradient >= thr
