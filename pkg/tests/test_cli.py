import shlex
import sys

import numpy as np
import pytest

from aztr.cli import is_exactly_affine, main
from aztr.core import Provenance
from aztr.frames_io import ClipManifest, read_ppm
from aztr.locator import load_detections, load_track
from aztr.reason import load_checkpoint

SMALL = ["--width", "320", "--height", "180", "--frames", "21", "--velocity", "3,1", "--actor", "40x20"]
SMALL_ZOOM = ["--crop-sizes", "64,80,96,128", "--input-size", "32"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def clip(tmp_path, capsys):
    d = tmp_path / "clip"
    code, out, _ = run(capsys, "synth", "--out", d, *SMALL, "--seed", 3)
    assert code == 0, out
    return d


class TestSynth:
    def test_outputs(self, clip):
        m = ClipManifest.load(clip / "manifest.txt")
        assert (m.width, m.height, len(m)) == (320, 180, 21)
        gt = load_track(clip / "gt_track.txt")
        assert gt.frame_count == 21
        # 10% -> stride 10 -> keys 0, 10, 20
        assert load_detections(clip / "detections.txt").frames() == [0, 10, 20]
        frame = read_ppm(m.frame_paths[0], gray=True)
        assert int(np.sum(frame.data == 1.0)) == 40 * 20

    def test_two_percent(self, tmp_path, capsys):
        code, out, _ = run(capsys, "synth", "--out", tmp_path / "c", "--frames", 2, "--velocity", "0,0")
        assert code == 0
        assert "288x144" in out and "2.0000% of frame" in out

    def test_byte_identical(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert run(capsys, "synth", "--out", tmp_path / name, *SMALL, "--seed", 5, "--noise", 0.1,
                       "--dropout", 0.3)[0] == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_invalid_spec(self, tmp_path, capsys):
        code, _, err = run(capsys, "synth", "--out", tmp_path / "c", "--width", 100, "--height", 100,
                           "--actor", "400x10", "--frames", 3)
        assert code == 2 and "error" in err
        assert not (tmp_path / "c").exists()

    def test_bad_flag(self, tmp_path, capsys):
        assert run(capsys, "synth", "--out", tmp_path / "c", "--frames", "many")[0] == 2

    def test_outliers_clear_default_gate(self, tmp_path, capsys):
        # 353x176 actor: adaptive gate = diagonal / 2 ~ 197 px, well above the 20 px floor
        d = tmp_path / "c"
        assert run(capsys, "synth", "--out", d, "--frames", 41, "--occupancy", 0.03, "--outliers", 2,
                   "--seed", 3)[0] == 0
        gt, dets = load_track(d / "gt_track.txt"), load_detections(d / "detections.txt")
        gate = 0.5 * np.hypot(353, 176)
        far = [k for k in dets.frames() if np.hypot(*np.subtract(dets.get(k)[0].center, gt[k].bbox.center))
               >= 5 * gate - 1e-6]
        assert len(far) == 2
        code, out, _ = run(capsys, "track", "--manifest", d / "manifest.txt", "--detector",
                           f"file:{d / 'detections.txt'}", "--out", tmp_path / "t.txt")
        assert code == 0 and "D=3 P=2" in out


class TestTrack:
    def test_clean(self, clip, tmp_path, capsys):
        code, out, _ = run(capsys, "track", "--manifest", clip / "manifest.txt",
                           "--detector", f"file:{clip / 'detections.txt'}", "--out", tmp_path / "t.txt")
        assert code == 0
        assert "detector invocations: 3 (key frames: 3)" in out
        assert "D=3 P=0 I=18" in out
        t = load_track(tmp_path / "t.txt")
        assert [t[k].provenance for k in (0, 10, 20)] == [Provenance.DETECTED] * 3

    def test_dropout_becomes_predicted(self, tmp_path, capsys):
        d = tmp_path / "c"
        assert run(capsys, "synth", "--out", d, *SMALL[:4], "--frames", 61, "--velocity", "2,1", "--actor", "20x10",
                   "--dropout", 0.3, "--seed", 1)[0] == 0
        dets = load_detections(d / "detections.txt")
        code, out, _ = run(capsys, "track", "--manifest", d / "manifest.txt", "--detector",
                           f"file:{d / 'detections.txt'}", "--out", tmp_path / "t.txt")
        assert code == 0
        t = load_track(tmp_path / "t.txt")
        keys = range(0, 61, 10)
        present = [k for k in keys if dets.get(k)]
        boot_end = present[2]
        missing = [k for k in keys if not dets.get(k)]
        # after bootstrap a missing key falls back to prediction; before it, the key is skipped
        assert any(k > boot_end for k in missing)
        for k in missing:
            want = Provenance.PREDICTED if k > boot_end else Provenance.INTERPOLATED
            assert t[k].provenance is want
        assert all(t[k].provenance is Provenance.DETECTED for k in present)

    def test_exec_matches_file(self, clip, tmp_path, capsys):
        cmd = shlex.join([sys.executable, "-m", "aztr.stub_detector", str(clip / "detections.txt")])
        assert run(capsys, "track", "--manifest", clip / "manifest.txt", "--detector", f"exec:{cmd}",
                   "--out", tmp_path / "a.txt")[0] == 0
        assert run(capsys, "track", "--manifest", clip / "manifest.txt", "--detector",
                   f"file:{clip / 'detections.txt'}", "--out", tmp_path / "b.txt")[0] == 0
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_bootstrap_failure(self, clip, tmp_path, capsys):
        (tmp_path / "few.txt").write_text("0 10 10 4 4 0.9\n")
        code, _, err = run(capsys, "track", "--manifest", clip / "manifest.txt", "--detector",
                           f"file:{tmp_path / 'few.txt'}", "--out", tmp_path / "t.txt")
        assert code == 2 and "found 1" in err
        assert not (tmp_path / "t.txt").exists()

    def test_empty_manifest(self, tmp_path, capsys):
        (tmp_path / "m.txt").write_text("")
        code, _, _ = run(capsys, "track", "--manifest", tmp_path / "m.txt", "--detector", "file:x",
                         "--out", tmp_path / "t.txt")
        assert code == 1

    def test_missing_detection_file(self, clip, tmp_path, capsys):
        assert run(capsys, "track", "--manifest", clip / "manifest.txt", "--detector",
                   f"file:{tmp_path / 'nope.txt'}", "--out", tmp_path / "t.txt")[0] == 1

    def test_bad_detector_spec(self, clip, tmp_path, capsys):
        assert run(capsys, "track", "--manifest", clip / "manifest.txt", "--detector", "camera:0",
                   "--out", tmp_path / "t.txt")[0] == 2


@pytest.fixture
def tracked(clip, tmp_path, capsys):
    assert run(capsys, "track", "--manifest", clip / "manifest.txt",
               "--detector", f"file:{clip / 'detections.txt'}", "--out", tmp_path / "t.txt")[0] == 0
    return tmp_path / "t.txt"


class TestZoom:
    def test_round_trip(self, clip, tracked, tmp_path, capsys):
        code, out, _ = run(capsys, "zoom", "--manifest", clip / "manifest.txt", "--track", tracked,
                           "--out", tmp_path / "z", *SMALL_ZOOM)
        assert code == 0
        m = ClipManifest.load(tmp_path / "z" / "manifest.txt")
        assert (m.width, m.height, len(m)) == (32, 32, 21)
        rows = (tmp_path / "z" / "occupancy.csv").read_text().splitlines()
        assert rows[0] == "frame,x0,y0,crop_w,crop_h,occupancy" and len(rows) == 22
        occ = [float(r.split(",")[-1]) for r in rows[1:]]
        assert all(0.15 <= v <= 0.20 for v in occ)
        assert "100.0% of frames inside" in out

    def test_rerun_identical(self, clip, tracked, tmp_path, capsys):
        for name in ("a", "b"):
            assert run(capsys, "zoom", "--manifest", clip / "manifest.txt", "--track", tracked,
                       "--out", tmp_path / name, *SMALL_ZOOM)[0] == 0
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_coverage_gap(self, clip, tracked, tmp_path, capsys):
        lines = tracked.read_text().splitlines()
        gap = tmp_path / "gap.txt"
        gap.write_text("\n".join(l for l in lines if not l.startswith("7 ")) + "\n")
        code, _, err = run(capsys, "zoom", "--manifest", clip / "manifest.txt", "--track", gap,
                           "--out", tmp_path / "z", *SMALL_ZOOM)
        assert code == 2 and "missing" in err
        assert not (tmp_path / "z").exists()


class TestConfig:
    def test_file_and_override(self, clip, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# zoom settings\ncrop-sizes = 64,80,96,128\ninput_size = 24\n")
        assert run(capsys, "--config", cfg, "zoom", "--manifest", clip / "manifest.txt", "--track",
                   clip / "gt_track.txt", "--out", tmp_path / "a")[0] == 0
        assert ClipManifest.load(tmp_path / "a" / "manifest.txt").width == 24
        assert run(capsys, "--config", cfg, "zoom", "--manifest", clip / "manifest.txt", "--track",
                   clip / "gt_track.txt", "--out", tmp_path / "b", "--input-size", 16)[0] == 0
        assert ClipManifest.load(tmp_path / "b" / "manifest.txt").width == 16

    def test_unknown_key(self, clip, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("zoom_factor = 3\n")
        assert run(capsys, "--config", cfg, "bench")[0] == 2

    def test_invalid_value(self, clip, tmp_path, capsys):
        code, _, err = run(capsys, "zoom", "--manifest", clip / "manifest.txt", "--track", clip / "gt_track.txt",
                           "--out", tmp_path / "z", "--occupancy-low", 0.3)
        assert code == 2 and "occupancy" in err

    def test_missing_config(self, tmp_path, capsys):
        assert run(capsys, "--config", tmp_path / "none.cfg", "bench")[0] == 1


class TestBench:
    def test_sweep(self, tmp_path, capsys):
        code, out, _ = run(capsys, "bench", "--csv", tmp_path / "b.csv")
        assert code == 0
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == "sweep,T,L,measured_macs,closed_form_macs,wall_seconds"
        rows = [l.split(",") for l in lines[1:]]
        assert len(rows) == 6
        assert all(r[3] == r[4] for r in rows)
        assert "# T: affine=True slope=320" in out
        assert "# L: affine=True slope=1280" in out

    def test_affine_helper(self):
        assert is_exactly_affine([4, 8, 16], [10, 18, 34])
        assert not is_exactly_affine([4, 8, 16], [10, 18, 35])
        assert is_exactly_affine([1], [7])


class TestReason:
    def test_train_eval(self, tmp_path, capsys):
        ckpt = tmp_path / "m.ckpt"
        code, out, _ = run(capsys, "reason", "train", "--toy", 40, "--checkpoint", ckpt, "--epochs", 30,
                           "--loss-curve", tmp_path / "loss.csv")
        assert code == 0
        curve = (tmp_path / "loss.csv").read_text().splitlines()
        # header, the initial loss, then one row per epoch
        assert curve[0] == "epoch,loss" and len(curve) == 32
        assert float(curve[-1].split(",")[1]) < float(curve[1].split(",")[1])
        assert load_checkpoint(ckpt).cfg.T == 8
        code, out, _ = run(capsys, "reason", "eval", "--toy", 40, "--checkpoint", ckpt)
        assert code == 0 and out.startswith("top-1 accuracy: ")

    def test_checkpoint_reproducible(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert run(capsys, "reason", "train", "--toy", 8, "--checkpoint", tmp_path / name, "--epochs", 3)[0] == 0
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_config_mismatch(self, tmp_path, capsys):
        ckpt = tmp_path / "m.ckpt"
        assert run(capsys, "reason", "train", "--toy", 20, "--checkpoint", ckpt, "--epochs", 1)[0] == 0
        code, _, err = run(capsys, "reason", "eval", "--toy", 20, "--checkpoint", ckpt, "--layers", 3)
        assert code == 2 and "L=1" in err
        code, _, _ = run(capsys, "reason", "eval", "--toy", 20, "--checkpoint", ckpt, "--variant", "conv3d")
        assert code == 2

    def test_missing_checkpoint(self, tmp_path, capsys):
        assert run(capsys, "reason", "eval", "--toy", 20, "--checkpoint", tmp_path / "none")[0] == 1

    def test_dataset_file(self, clip, tracked, tmp_path, capsys):
        assert run(capsys, "zoom", "--manifest", clip / "manifest.txt", "--track", tracked,
                   "--out", tmp_path / "z", "--crop-sizes", "64,80,96,128", "--input-size", 8)[0] == 0
        ds = tmp_path / "ds.txt"
        ds.write_text("1 z/manifest.txt\n0 z/manifest.txt\n")
        ckpt = tmp_path / "m.ckpt"
        assert run(capsys, "reason", "train", "--dataset", ds, "--checkpoint", ckpt, "--epochs", 2,
                   "--variant", "conv2plus1")[0] == 0
        cfg = load_checkpoint(ckpt).cfg
        assert (cfg.T, cfg.channels, cfg.height) == (21, 3, 8)
        code, out, _ = run(capsys, "reason", "eval", "--dataset", ds, "--checkpoint", ckpt)
        assert code == 0 and out.startswith("top-1 accuracy: ") and "/2)" in out

    def test_empty_split(self, tmp_path, capsys):
        ckpt = tmp_path / "m.ckpt"
        assert run(capsys, "reason", "train", "--toy", 20, "--checkpoint", ckpt, "--epochs", 1)[0] == 0
        code, _, err = run(capsys, "reason", "eval", "--toy", 8, "--checkpoint", ckpt)
        assert code == 2 and "empty" in err
