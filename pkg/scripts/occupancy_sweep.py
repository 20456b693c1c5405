"""Sweep actor occupancy over 1080p clips and report occupancy inside the auto-zoom crop."""

import argparse
import csv
import sys

import numpy as np

from aztr.core import schedule_keyframes
from aztr.synth import (TrajectorySpec, actor_size_for_occupancy, gen_trajectory, measure_occupancy,
                        perturb_detections, render_clip)
from aztr.zoom import ZoomParams, auto_zoom_clip, build_track, zoom_windows


def sweep(fractions, n_frames: int, params: ZoomParams, frame=(1920, 1080)):
    for frac in fractions:
        actor = actor_size_for_occupancy(float(frac), frame)
        traj = gen_trajectory(TrajectorySpec("linear", (600.0, 400.0), n_frames, velocity=(20.0, 8.0),
                                             bounds=frame))
        clip = render_clip(traj, actor, frame)
        sched = schedule_keyframes(n_frames, params.keyframe_fraction)
        track = build_track(perturb_detections(clip.gt_track, key_indices=sched.key_indices), sched, params, frame)
        zoomed = auto_zoom_clip(clip.frames, track, params)
        crop = [measure_occupancy(f, w) for f, w in zip(clip.frames, zoom_windows(track, params))]
        out = [measure_occupancy(z, threshold=0.75) for z in zoomed]
        yield float(frac), actor, min(crop), max(crop), min(out), max(out)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lo", type=float, default=0.02)
    ap.add_argument("--hi", type=float, default=0.05)
    ap.add_argument("--steps", type=int, default=31)
    ap.add_argument("--frames", type=int, default=21)
    ap.add_argument("--square-crops", action="store_true")
    args = ap.parse_args(argv)
    params = ZoomParams(square_crops=args.square_crops)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["fraction", "actor_w", "actor_h", "crop_min", "crop_max", "output_min", "output_max", "in_band"])
    all_in = True
    for frac, (aw, ah), c0, c1, o0, o1 in sweep(np.linspace(args.lo, args.hi, args.steps), args.frames, params):
        ok = 0.15 <= min(c0, o0) and max(c1, o1) <= 0.22
        all_in &= ok
        w.writerow([f"{frac:.4f}", aw, ah, f"{c0:.4f}", f"{c1:.4f}", f"{o0:.4f}", f"{o1:.4f}", int(ok)])
    print(f"# every frame in [0.15, 0.22]: {all_in}")
    return 0 if all_in else 1


if __name__ == "__main__":
    sys.exit(main())
