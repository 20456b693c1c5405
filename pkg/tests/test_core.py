import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aztr.core import (BBox, FrameBuffer, KeyFrameSchedule, Provenance, Track, TrackEntry, ValidationError,
                       center_distance, schedule_keyframes)

coords = st.floats(-1e4, 1e4, allow_nan=False)


def box(cx, cy, w=10.0, h=10.0, score=1.0):
    return BBox(cx, cy, w, h, score)


class TestBBox:
    def test_area_exact(self):
        b = BBox(5.0, 5.0, 3.5, 2.25, 0.9)
        assert b.area() == 3.5 * 2.25

    @pytest.mark.parametrize("kwargs", [
        dict(w=0.0), dict(h=-1.0), dict(score=1.5), dict(score=-0.1), dict(cx=math.nan), dict(w=math.inf),
    ])
    def test_invalid(self, kwargs):
        base = dict(cx=1.0, cy=1.0, w=2.0, h=2.0, score=0.5)
        base.update(kwargs)
        with pytest.raises(ValidationError):
            BBox(**base)

    def test_frozen(self):
        b = box(1, 1)
        with pytest.raises(Exception):
            b.cx = 3


class TestCenterDistance:
    def test_identity(self):
        assert center_distance(box(100, 100), box(100, 100)) == 0

    def test_345(self):
        assert center_distance(box(0, 0), box(3, 4)) == 5

    def test_sqrt5(self):
        assert center_distance(box(102, 101), box(100, 100)) == pytest.approx(2.2360679775, abs=1e-9)

    @given(coords, coords, coords, coords, coords, coords)
    def test_triangle_inequality(self, ax, ay, bx, by, cx, cy):
        a, b, c = box(ax, ay), box(bx, by), box(cx, cy)
        assert center_distance(a, c) <= center_distance(a, b) + center_distance(b, c) + 1e-9
        assert center_distance(a, b) == center_distance(b, a)
        assert center_distance(a, b) >= 0


class TestSchedule:
    def test_ten_percent(self):
        s = schedule_keyframes(100, 0.10)
        assert s.stride == 10
        assert s.key_indices == (0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 99)

    def test_single_frame(self):
        assert schedule_keyframes(1, 0.5).key_indices == (0,)

    def test_twenty_percent(self):
        s = schedule_keyframes(20, 0.20)
        assert s.stride == 5
        assert s.key_indices == (0, 5, 10, 15, 19)

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.01, math.nan])
    def test_rejects_fraction(self, fraction):
        with pytest.raises(ValidationError):
            schedule_keyframes(10, fraction)

    def test_rejects_empty_video(self):
        with pytest.raises(ValidationError):
            schedule_keyframes(0, 0.1)

    def test_deterministic(self):
        assert schedule_keyframes(57, 0.2) == schedule_keyframes(57, 0.2)

    @given(st.integers(1, 2000), st.floats(0.01, 1.0))
    def test_every_frame_bracketed(self, n, fraction):
        s = schedule_keyframes(n, fraction)
        keys = s.key_indices
        assert keys[0] == 0 and keys[-1] == n - 1
        assert list(keys) == sorted(set(keys))
        # stride fixed, last key forced
        assert all(b - a == s.stride for a, b in zip(keys[:-2], keys[1:-1]))
        for f in range(n):
            assert any(k <= f for k in keys) and any(k >= f for k in keys)

    @given(st.integers(1, 2000), st.sampled_from([0.1, 0.2, 0.25, 0.5, 1.0]))
    def test_fraction_within_one_frame(self, n, fraction):
        s = schedule_keyframes(n, fraction)
        assert abs(len(s.key_indices) - fraction * n) <= 2

    def test_inconsistent_indices_rejected(self):
        with pytest.raises(ValidationError):
            KeyFrameSchedule(10, 5, (0, 4, 9))


class TestTrack:
    def test_sorted_unique(self):
        e = [TrackEntry(1, box(5, 5), Provenance.DETECTED), TrackEntry(1, box(5, 5), Provenance.DETECTED)]
        with pytest.raises(ValidationError):
            Track(tuple(e), 3, (10, 10))

    def test_center_in_frame(self):
        with pytest.raises(ValidationError):
            Track((TrackEntry(0, box(11, 5), Provenance.DETECTED),), 1, (10, 10))

    def test_finalized(self):
        e = tuple(TrackEntry(i, box(5, 5), Provenance.DETECTED) for i in range(3))
        assert Track(e, 3, (10, 10)).is_finalized
        partial = Track(e[:2], 3, (10, 10))
        assert not partial.is_finalized
        with pytest.raises(ValidationError, match="1 missing"):
            partial.require_finalized()


class TestFrameBuffer:
    def test_shape_and_readonly(self):
        f = FrameBuffer(np.zeros((4, 6, 3)))
        assert (f.width, f.height, f.channels) == (6, 4, 3)
        assert f.data.size == f.width * f.height * f.channels
        with pytest.raises(ValueError):
            f.data[0, 0, 0] = 1.0

    def test_gray_promoted(self):
        assert FrameBuffer(np.zeros((4, 6))).channels == 1

    def test_bad_channels(self):
        with pytest.raises(ValidationError):
            FrameBuffer(np.zeros((4, 6, 2)))
