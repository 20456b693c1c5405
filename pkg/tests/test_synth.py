import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aztr.core import Provenance, Track, TrackEntry, ValidationError, schedule_keyframes
from aztr.locator import DetectionSet
from aztr.synth import (TOY_CLASSES, Lcg64, ToySpec, TrajectorySpec, actor_rect, actor_size_for_occupancy,
                        gen_trajectory, make_toy_dataset, measure_occupancy, perturb_detections, render_clip,
                        track_error)


class TestLcg:
    def test_known_sequence(self):
        # state_1 = a*0 + c
        assert Lcg64(0).next_u64() == 1442695040888963407
        assert Lcg64(1).next_u64() == (6364136223846793005 + 1442695040888963407) % 2 ** 64

    @given(st.integers(0, 2 ** 64 - 1), st.integers(0, 300))
    def test_vectorized_matches_scalar(self, seed, n):
        a, b = Lcg64(seed), Lcg64(seed)
        scalar = [a.uniform(-2.0, 3.0) for _ in range(n)]
        assert b.uniform_array(n, -2.0, 3.0).tolist() == scalar
        assert a.state == b.state

    def test_random_range(self):
        r = Lcg64(7)
        xs = [r.random() for _ in range(2000)]
        assert min(xs) >= 0 and max(xs) < 1
        assert abs(sum(xs) / len(xs) - 0.5) < 0.05

    def test_sample_distinct(self):
        s = Lcg64(3).sample(range(20), 10)
        assert len(set(s)) == 10 and all(0 <= v < 20 for v in s)

    def test_forks_differ(self):
        r = Lcg64(5)
        assert r.fork(0).next_u64() != r.fork(1).next_u64()
        assert Lcg64(5).fork(3).next_u64() == Lcg64(5).fork(3).next_u64()


class TestTrajectory:
    def test_linear(self):
        pts = gen_trajectory(TrajectorySpec("linear", (0, 0), 4, velocity=(10, 0)))
        assert pts.tolist() == [[0, 0], [10, 0], [20, 0], [30, 0]]

    def test_circular_equal_chords(self):
        pts = gen_trajectory(TrajectorySpec("circular", (500, 500), 12, radius=100, angular_step=math.pi / 6))
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        assert np.allclose(chords, 2 * 100 * math.sin(math.pi / 12), atol=1e-9)
        assert chords[0] == pytest.approx(51.76380902050415, abs=1e-9)
        assert pts[0].tolist() == pytest.approx([500, 500])

    def test_sinusoid_zero_amplitude(self):
        a = gen_trajectory(TrajectorySpec("sinusoidal", (5, 6), 9, velocity=(2, 1), amplitude=0, period=4))
        b = gen_trajectory(TrajectorySpec("linear", (5, 6), 9, velocity=(2, 1)))
        assert np.array_equal(a, b)

    def test_sinusoid_perpendicular(self):
        pts = gen_trajectory(TrajectorySpec("sinusoidal", (0, 0), 5, velocity=(1, 0), amplitude=3, period=4))
        assert pts[1].tolist() == pytest.approx([1, 3])

    def test_leaves_bounds(self):
        with pytest.raises(ValidationError, match="step 3"):
            gen_trajectory(TrajectorySpec("linear", (90, 10), 5, velocity=(5, 0), bounds=(100, 100)))

    @pytest.mark.parametrize("kw", [dict(kind="zigzag"), dict(n_frames=0), dict(kind="circular", radius=0)])
    def test_invalid(self, kw):
        base = dict(kind="linear", start=(0, 0), n_frames=3)
        base.update(kw)
        with pytest.raises(ValidationError):
            TrajectorySpec(**base)


class TestRender:
    def test_two_percent_occupancy(self):
        assert actor_size_for_occupancy(0.02, (1920, 1080)) == (288, 144)
        clip = render_clip(np.array([[960.0, 540.0]]), (288, 144), (1920, 1080))
        assert measure_occupancy(clip.frames[0]) == pytest.approx(0.02, abs=1e-12)
        assert int(np.sum(clip.frames[0].data == 1.0)) == 288 * 144

    @given(st.floats(0.02, 0.05))
    def test_occupancy_within_one_row(self, frac):
        w, h = actor_size_for_occupancy(frac, (1920, 1080))
        assert abs(w * h - frac * 1920 * 1080) <= max(w, h)

    def test_static_frames_identical(self):
        traj = np.tile([[50.0, 40.0]], (5, 1))
        clip = render_clip(traj, (10, 6), (100, 80))
        assert all(f == clip.frames[0] for f in clip.frames)

    @given(st.floats(0, 100), st.floats(0, 80), st.integers(1, 20), st.integers(1, 20))
    def test_pixel_count(self, cx, cy, w, h):
        x0, y0, x1, y1 = actor_rect((cx, cy), (w, h))
        if x0 < 0 or y0 < 0 or x1 > 100 or y1 > 80:
            with pytest.raises(ValidationError):
                render_clip(np.array([[cx, cy]]), (w, h), (100, 80))
            return
        clip = render_clip(np.array([[cx, cy]]), (w, h), (100, 80))
        assert int(np.sum(clip.frames[0].data[:, :, 0] == 1.0)) == w * h

    def test_gt_track(self):
        clip = render_clip(np.array([[10.0, 10.0], [12.0, 11.0]]), (4, 4), (40, 30))
        assert clip.gt_track.frame_size == (40, 30)
        assert all(e.provenance is Provenance.DETECTED and e.bbox.score == 1.0 for e in clip.gt_track.entries)

    def test_noise_deterministic_and_bounded(self):
        traj = np.array([[20.0, 15.0]] * 2)
        a = render_clip(traj, (4, 4), (40, 30), noise=0.6, seed=4, channels=3)
        b = render_clip(traj, (4, 4), (40, 30), noise=0.6, seed=4, channels=3)
        assert a.frames == b.frames
        assert a.frames[0] != a.frames[1]
        assert a.frames[0].data.min() >= 0 and a.frames[0].data.max() <= 1


def gt_track(n=20, frame=(200, 200)):
    traj = gen_trajectory(TrajectorySpec("linear", (20, 30), n, velocity=(5, 3), bounds=frame))
    return render_clip(traj, (10, 10), frame).gt_track


class TestPerturb:
    def test_identity(self):
        gt = gt_track()
        assert perturb_detections(gt) == DetectionSet.from_track(gt)

    def test_outliers(self):
        gt = gt_track()
        dets = perturb_detections(gt, outliers=3, threshold=10, seed=2)
        far = [k for k in dets.frames() if math.dist(dets.get(k)[0].center, gt[k].bbox.center) >= 50 - 1e-9]
        assert len(far) == 3
        assert all(k >= 3 for k in far)
        near = set(dets.frames()) - set(far)
        assert all(dets.get(k)[0] == gt[k].bbox for k in near)

    def test_dropout_half(self):
        gt = gt_track()
        assert len(perturb_detections(gt, dropout=0.5, seed=9)) == 10

    def test_key_frames_only(self):
        gt = gt_track(n=41, frame=(400, 400))
        keys = schedule_keyframes(41, 0.2).key_indices
        dets = perturb_detections(gt, key_indices=keys)
        assert dets.frames() == list(keys)

    def test_jitter_bounded(self):
        gt = gt_track()
        dets = perturb_detections(gt, jitter=2.0, seed=1)
        for k in dets.frames():
            b = dets.get(k)[0]
            assert abs(b.cx - gt[k].bbox.cx) <= 2 and abs(b.cy - gt[k].bbox.cy) <= 2

    def test_deterministic(self):
        gt = gt_track()
        kw = dict(dropout=0.2, jitter=1.0, outliers=2, seed=5)
        assert perturb_detections(gt, **kw) == perturb_detections(gt, **kw)

    def test_too_many_outliers(self):
        with pytest.raises(ValidationError):
            perturb_detections(gt_track(n=5), outliers=3)


class TestTrackError:
    def test_zero(self):
        gt = gt_track()
        assert track_error(gt, gt) == (0.0, 0.0)

    def test_three_four_five(self):
        gt = gt_track()
        moved = Track(tuple(TrackEntry(e.frame_index, e.bbox.moved_to(e.bbox.cx + 3, e.bbox.cy + 4), e.provenance)
                            for e in gt.entries), gt.frame_count, gt.frame_size)
        assert track_error(moved, gt) == pytest.approx((5.0, 5.0))

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            track_error(gt_track(n=10), gt_track(n=11))


class TestToy:
    def test_balance(self):
        ds = make_toy_dataset(40, seed=1)
        clips = ds.train + ds.test
        assert [sum(c.label == i for c in clips) for i in range(4)] == [10] * 4
        assert [sum(c.label == i for c in ds.test) for i in range(4)] == [2] * 4

    def test_deterministic(self):
        a, b = make_toy_dataset(8, seed=3), make_toy_dataset(8, seed=3)
        for x, y in zip(a.train + a.test, b.train + b.test):
            assert x.frames == y.frames and x.label == y.label

    def test_seed_changes_data(self):
        a, b = make_toy_dataset(4, seed=3), make_toy_dataset(4, seed=4)
        assert a.train[0].frames != b.train[0].frames

    def test_directions(self):
        ds = make_toy_dataset(16, seed=0)
        for c in ds.train + ds.test:
            x, y = c.trajectory[:, 0], c.trajectory[:, 1]
            name = TOY_CLASSES[c.label]
            if name == "left":
                assert np.all(np.diff(x) < 0) and np.all(np.diff(y) == 0)
            elif name == "right":
                assert np.all(np.diff(x) > 0)
            elif name == "up":
                assert np.all(np.diff(y) < 0)
            else:
                assert np.all(np.diff(y) > 0)

    def test_actor_inside(self):
        spec = ToySpec()
        for c in make_toy_dataset(12, seed=2).train:
            assert len(c.frames) == spec.n_frames
            assert (c.frames[0].width, c.frames[0].height) == spec.frame

    def test_too_few(self):
        with pytest.raises(ValidationError):
            make_toy_dataset(3)
