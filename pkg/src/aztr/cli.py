"""Command line entry point: ``aztr {synth,track,zoom,reason,bench}``.

Exit codes: 0 success, 1 I/O or environment failure, 2 validation/domain error.
Options may also come from ``--config FILE`` (flat ``key = value`` lines, keys
named like the long flags); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import reason as rs
from .core import BBox, FrameBuffer, Provenance, ValidationError, schedule_keyframes
from .frames_io import AtomicDir, ClipManifest, manifest_text, read_ppm, write_clip, write_ppm
from .locator import (CountingDetector, DetectorHandle, atomic_write_text, load_track,
                      save_detections, save_track)
from .synth import (TrajectorySpec, actor_size_for_occupancy, gen_trajectory, make_toy_dataset,
                    perturb_detections, render_clip)
from .tensor import FlopCounter, Tensor
from .train import TOY_ZOOM, accuracy, clips_to_arrays, fit
from .zoom import ZoomParams, build_track, resize_bilinear, zoom_windows

log = logging.getLogger("aztr")


class UsageError(ValidationError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace("x", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace("x", ",").split(",") if v.strip())


def read_config(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _add_zoom_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("auto zoom")
    g.add_argument("--keyframe-fraction", type=float, default=0.10)
    g.add_argument("--score-threshold", type=float, default=0.8)
    g.add_argument("--distance-threshold", type=float, default=None,
                   help="gate radius in px (default: half the last box diagonal, min 20)")
    g.add_argument("--crop-sizes", type=_ints, default=(480, 640, 720, 960))
    g.add_argument("--occupancy-low", type=float, default=0.15)
    g.add_argument("--occupancy-high", type=float, default=0.20)
    g.add_argument("--input-size", type=int, default=172)
    g.add_argument("--square-crops", action="store_true", default=False)


def zoom_params(args) -> ZoomParams:
    return ZoomParams(
        keyframe_fraction=args.keyframe_fraction,
        score_threshold=args.score_threshold,
        distance_threshold=args.distance_threshold,
        crop_candidates=tuple(args.crop_sizes),
        occupancy_range=(args.occupancy_low, args.occupancy_high),
        input_size=args.input_size,
        square_crops=bool(args.square_crops),
    )


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("temporal model")
    g.add_argument("--variant", default=None, help="attention | conv2plus1 | conv3d")
    g.add_argument("--embed-dim", type=int, default=None, help="D")
    g.add_argument("--latents", type=int, default=None, help="N")
    g.add_argument("--latent-dim", type=int, default=None, help="M")
    g.add_argument("--proj-dim", type=int, default=None, help="S")
    g.add_argument("--layers", type=int, default=None, help="L")
    g.add_argument("--conv-filters", type=int, default=None)


_MODEL_FLAG_FIELDS = {"embed_dim": "D", "latents": "N", "latent_dim": "M", "proj_dim": "S", "layers": "L",
                      "conv_filters": "conv_filters"}


def _model_overrides(args) -> dict:
    out = {}
    for flag, fld in _MODEL_FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            out[fld] = int(v)
    if getattr(args, "variant", None):
        out["variant"] = rs.Variant.parse(args.variant)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aztr", description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None, help="flat key = value file; flags override")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic clip with ground truth and detections")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--width", type=int, default=1920)
    p.add_argument("--height", type=int, default=1080)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--occupancy", type=float, default=0.02, help="actor area as a fraction of the frame")
    p.add_argument("--actor", type=_ints, default=None, help="WxH actor size (overrides --occupancy)")
    p.add_argument("--aspect", type=float, default=2.0, help="actor w/h when sized by occupancy")
    p.add_argument("--motion", choices=("linear", "circular", "sinusoidal"), default="linear")
    p.add_argument("--start", type=_floats, default=None, help="x,y start (default: path centered)")
    p.add_argument("--velocity", type=_floats, default=(6.0, 2.0))
    p.add_argument("--radius", type=float, default=200.0)
    p.add_argument("--angular-step", type=float, default=0.05)
    p.add_argument("--amplitude", type=float, default=0.0)
    p.add_argument("--period", type=float, default=20.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--outliers", type=int, default=0)
    p.add_argument("--outlier-threshold", type=float, default=None,
                   help="outliers are placed 5x this far from the truth (default: the tracker's adaptive gate)")
    p.add_argument("--keyframe-fraction", type=float, default=0.10)

    p = sub.add_parser("track", help="build a per-frame track from key-frame detections")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detector", required=True, help="file:<path> | exec:<command>")
    p.add_argument("--out", required=True)
    _add_zoom_flags(p)

    p = sub.add_parser("zoom", help="crop and scale every frame around the tracked actor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--track", required=True)
    p.add_argument("--out", required=True)
    _add_zoom_flags(p)

    p = sub.add_parser("reason", help="train or evaluate the temporal model")
    p.add_argument("mode", choices=("train", "eval"))
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--toy", type=int, default=None, metavar="N_CLIPS",
                     help="generate the 4-direction toy dataset (train split for train, test split for eval)")
    src.add_argument("--dataset", default=None,
                     help="text file: '<label> <zoomed manifest>' per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--loss-curve", default=None, help="CSV written in train mode")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    _add_model_flags(p)

    p = sub.add_parser("bench", help="FLOP sweep over T and L with exact affinity check")
    p.add_argument("--T", dest="T_values", type=_ints, default=(4, 8, 16))
    p.add_argument("--L", dest="L_values", type=_ints, default=(1, 2, 3))
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--latents", type=int, default=4)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--proj-dim", type=int, default=8)
    p.add_argument("--csv", default=None)
    p.add_argument("--seed", type=int, default=0)
    return ap


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    used = set()
    for sp in set(subparsers.choices.values()):
        for action in sp._actions:
            if action.dest in values:
                raw = values[action.dest]
                if isinstance(action, argparse._StoreTrueAction):
                    value = raw.lower() in ("1", "true", "yes", "on")
                elif action.type is not None:
                    value = action.type(raw)
                else:
                    value = raw
                sp.set_defaults(**{action.dest: value})
                used.add(action.dest)
    unknown = set(values) - used
    if unknown:
        raise UsageError(f"{known.config}: unknown config keys {sorted(unknown)}")


# --- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    frame = (args.width, args.height)
    actor = tuple(args.actor) if args.actor else actor_size_for_occupancy(args.occupancy, frame, args.aspect)
    if len(actor) != 2:
        raise UsageError("--actor needs WxH")
    n = args.frames
    if args.start is not None:
        start = tuple(args.start)
    elif args.motion == "circular":
        start = (args.width / 2 + args.radius, args.height / 2)
    else:
        vx, vy = args.velocity
        start = (args.width / 2 - vx * (n - 1) / 2, args.height / 2 - vy * (n - 1) / 2)
    spec = TrajectorySpec(args.motion, start, n, velocity=tuple(args.velocity), radius=args.radius,
                          angular_step=args.angular_step, amplitude=args.amplitude, period=args.period,
                          bounds=frame)
    traj = gen_trajectory(spec)
    clip = render_clip(traj, actor, frame, noise=args.noise, seed=args.seed)
    sched = schedule_keyframes(n, args.keyframe_fraction)
    threshold = args.outlier_threshold
    if threshold is None:
        threshold = ZoomParams().gate_for(BBox(0.0, 0.0, float(actor[0]), float(actor[1])))
    dets = perturb_detections(clip.gt_track, args.dropout, args.jitter, args.outliers, seed=args.seed,
                              key_indices=sched.key_indices, threshold=threshold)
    with AtomicDir(args.out) as tmp:
        write_clip(tmp, clip.frames, args.fps)
        save_track(clip.gt_track, tmp / "gt_track.txt")
        save_detections(dets, tmp / "detections.txt")
    print(f"wrote {n} frames ({args.width}x{args.height}), actor {actor[0]}x{actor[1]} "
          f"({actor[0] * actor[1] / (args.width * args.height):.4%} of frame), "
          f"{len(dets)} key-frame detections -> {args.out}")
    return 0


def cmd_track(args) -> int:
    params = zoom_params(args)
    manifest = ClipManifest.load(args.manifest)
    handle = DetectorHandle.parse(args.detector, params.score_threshold)
    if handle.kind == "file" and not Path(handle.target).is_file():
        raise FileNotFoundError(f"detection file {handle.target} not found")
    sched = schedule_keyframes(len(manifest), params.keyframe_fraction)
    backend = handle.open()
    counter = CountingDetector(backend)
    try:
        track = build_track(counter, sched, params, (manifest.width, manifest.height), manifest.frame_paths)
    finally:
        if hasattr(backend, "close"):
            backend.close()
    save_track(track, args.out)
    hist = track.provenance_counts()
    print(f"detector invocations: {counter.calls} (key frames: {len(sched)})")
    print("provenance: " + " ".join(f"{p.value}={hist[p]}" for p in Provenance))
    return 0


def cmd_zoom(args) -> int:
    params = zoom_params(args)
    manifest = ClipManifest.load(args.manifest)
    track = load_track(args.track, frame_count=len(manifest), frame_size=(manifest.width, manifest.height))
    windows = zoom_windows(track, params)  # raises on coverage gaps
    rows = []
    with AtomicDir(args.out) as tmp:
        (tmp / "frames").mkdir()
        rel = []
        for i, (path, win, entry) in enumerate(zip(manifest.frame_paths, windows, track.entries)):
            frame = read_ppm(path)
            crop = FrameBuffer(frame.data[win.y0:win.y1, win.x0:win.x1])
            out = resize_bilinear(crop, params.input_size, params.input_size)
            name = f"frames/frame_{i:05d}.ppm"
            write_ppm(out, tmp / name)
            rel.append(name)
            rows.append((i, win.x0, win.y0, win.width, win.height, entry.bbox.area() / win.area))
        (tmp / "manifest.txt").write_text(
            manifest_text(params.input_size, params.input_size, manifest.fps, rel), encoding="utf-8")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "x0", "y0", "crop_w", "crop_h", "occupancy"])
        for r in rows:
            w.writerow([*r[:5], repr(r[5])])
        (tmp / "occupancy.csv").write_text(buf.getvalue(), encoding="ascii")
    occ = np.array([r[5] for r in rows])
    low, high = params.occupancy_range
    inside = np.mean((occ >= low) & (occ <= high))
    print(f"zoomed {len(rows)} frames to {params.input_size}x{params.input_size} -> {args.out}")
    print(f"occupancy min {occ.min():.4f} mean {occ.mean():.4f} max {occ.max():.4f}; "
          f"{inside:.1%} of frames inside [{low}, {high}]")
    return 0


def _load_dataset_file(path):
    base = Path(path).parent
    X, y = [], []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise UsageError(f"{path}:{lineno}: expected '<label> <manifest>'")
        mpath = Path(parts[1])
        manifest = ClipManifest.load(mpath if mpath.is_absolute() else base / mpath)
        frames = manifest.read_frames()
        X.append(np.stack([f.data for f in frames]).transpose(3, 0, 1, 2).astype(np.float64))
        y.append(int(parts[0]))
    if not X:
        raise OSError(f"{path}: no clips listed")
    shapes = {x.shape for x in X}
    if len(shapes) != 1:
        raise UsageError(f"{path}: clips have different shapes {sorted(shapes)}")
    return np.stack(X), np.array(y, dtype=np.intp)


def _reason_data(args):
    if args.toy is not None:
        ds = make_toy_dataset(args.toy, seed=args.seed)
        split = ds.train if args.mode == "train" else ds.test
        if not split:
            raise UsageError(f"--toy {args.toy} leaves the {args.mode} split empty")
        return clips_to_arrays(split, TOY_ZOOM)
    return _load_dataset_file(args.dataset)


def cmd_reason(args) -> int:
    overrides = _model_overrides(args)
    if args.mode == "eval":
        return _reason_eval(args, overrides)
    X, y = _reason_data(args)
    _, C, T, H, W = X.shape
    base = dict(T=T, channels=C, height=H, width=W, num_classes=max(4, int(y.max()) + 1))
    base.update(overrides)
    cfg = rs.ReasonConfig(**base)
    model = rs.init_model(cfg, seed=args.seed)
    t0 = time.perf_counter()
    result = fit(model, X, y, epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed)
    rs.save_checkpoint(model, args.checkpoint)
    if args.loss_curve:
        atomic_write_text(args.loss_curve, "epoch,loss\n" + "".join(
            f"{i},{loss!r}\n" for i, loss in enumerate(result.losses)))
    print(f"trained {cfg.variant.name.lower()} on {len(X)} clips in {time.perf_counter() - t0:.1f}s: "
          f"loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}, train accuracy {result.train_accuracy:.3f}")
    return 0


def _reason_eval(args, overrides) -> int:
    model = rs.load_checkpoint(args.checkpoint)
    cfg = model.cfg
    for fld, v in overrides.items():
        if getattr(cfg, fld) != v:
            raise ValidationError(f"checkpoint has {fld}={getattr(cfg, fld)}, requested {v}")
    X, y = _reason_data(args)
    _, C, T, H, W = X.shape
    if (C, T, H, W) != (cfg.channels, cfg.T, cfg.height, cfg.width):
        raise ValidationError(f"data clips are (C,T,H,W)={(C, T, H, W)}, checkpoint expects "
                              f"{(cfg.channels, cfg.T, cfg.height, cfg.width)}")
    acc = accuracy(model, X, y)
    print(f"top-1 accuracy: {acc:.4f} ({int(round(acc * len(X)))}/{len(X)})")
    return 0


def is_exactly_affine(xs: Sequence[int], ys: Sequence[int]) -> bool:
    """Every consecutive triple has zero second divided difference (integer cross-multiplication)."""
    for (x0, y0), (x1, y1), (x2, y2) in zip(zip(xs, ys), zip(xs[1:], ys[1:]), zip(xs[2:], ys[2:])):
        if (y2 - y1) * (x1 - x0) != (y1 - y0) * (x2 - x1):
            return False
    return True


def measure_flops(cfg: rs.ReasonConfig, seed: int = 0) -> tuple[int, float]:
    model = rs.init_model(cfg, seed)
    emb = Tensor(np.random.default_rng(seed).standard_normal((cfg.T, cfg.D)))
    weights = model.attention_weights()
    t0 = time.perf_counter()
    with FlopCounter() as fc:
        rs.temporal_reason(emb, cfg, weights)
    return fc.total, time.perf_counter() - t0


def cmd_bench(args) -> int:
    T_values, L_values = sorted(args.T_values), sorted(args.L_values)
    base = dict(D=args.embed_dim, N=args.latents, M=args.latent_dim, S=args.proj_dim)
    rows = []
    for sweep, values in (("T", T_values), ("L", L_values)):
        for v in values:
            T = v if sweep == "T" else T_values[0]
            L = v if sweep == "L" else L_values[0]
            cfg = rs.ReasonConfig(T=T, L=L, **base)
            measured, secs = measure_flops(cfg, args.seed)
            rows.append((sweep, T, L, measured, rs.model_flops(cfg), secs))
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["sweep", "T", "L", "measured_macs", "closed_form_macs", "wall_seconds"])
    for r in rows:
        w.writerow([*r[:5], f"{r[5]:.6f}"])
    text = out.getvalue()
    print(text, end="")
    if args.csv:
        atomic_write_text(args.csv, text)
    ok = True
    for sweep in ("T", "L"):
        sel = [r for r in rows if r[0] == sweep]
        xs = [r[1] if sweep == "T" else r[2] for r in sel]
        ys = [r[3] for r in sel]
        affine = is_exactly_affine(xs, ys)
        if len(xs) >= 2:
            slope = Fraction(ys[-1] - ys[0], xs[-1] - xs[0]) if xs[-1] != xs[0] else Fraction(0)
            print(f"# {sweep}: affine={affine} slope={slope} MACs per unit {sweep}")
        ok &= affine
    ok &= all(r[3] == r[4] for r in rows)
    print(f"# closed form matches measurement: {all(r[3] == r[4] for r in rows)}")
    if not ok:
        raise ValidationError("FLOP counts are not exactly affine or disagree with the closed form")
    return 0


COMMANDS = {"synth": cmd_synth, "track": cmd_track, "zoom": cmd_zoom, "reason": cmd_reason, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except ValidationError as exc:
        print(f"aztr: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"aztr: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"aztr: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        # ValueError here comes from malformed numbers in files/flags
        print(f"aztr: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1


if __name__ == "__main__":
    sys.exit(main())
