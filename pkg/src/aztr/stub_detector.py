"""Stand-in detector process that answers the line-delimited JSON protocol from a detection file.

    python -m aztr.stub_detector detections.txt [--die-after N] [--garble-at N]

Each stdin line ``{"frame_index": i, "image_path": p}`` gets one stdout line
``{"frame_index": i, "bboxes": [...]}``. The failure flags exist for tests.
"""

import argparse
import json
import sys

from .locator import load_detections


def main(argv=None):
    ap = argparse.ArgumentParser(prog="aztr.stub_detector")
    ap.add_argument("detections")
    ap.add_argument("--die-after", type=int, default=None, help="exit after answering N requests")
    ap.add_argument("--garble-at", type=int, default=None, help="send a non-JSON reply to request N (0-based)")
    args = ap.parse_args(argv)
    dets = load_detections(args.detections)
    served = 0
    for line in sys.stdin:
        if not line.strip():
            continue
        if args.die_after is not None and served >= args.die_after:
            return 3
        req = json.loads(line)
        frame = int(req["frame_index"])
        if args.garble_at is not None and served == args.garble_at:
            sys.stdout.write("not json\n")
        else:
            boxes = [{"cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h, "score": b.score} for b in dets.get(frame)]
            sys.stdout.write(json.dumps({"frame_index": frame, "bboxes": boxes}) + "\n")
        sys.stdout.flush()
        served += 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
