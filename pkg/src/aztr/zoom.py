"""Auto zoom: key-frame bbox prediction, detection gating, interpolation, crop sizing and crop+scale."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    BBox,
    FrameBuffer,
    KeyFrameSchedule,
    Provenance,
    Track,
    TrackEntry,
    ValidationError,
)
from .locator import DetectorUnavailable, best_detection, filter_by_score

log = logging.getLogger(__name__)

CropSize = Union[int, tuple[int, int]]


class BootstrapError(ValidationError):
    def __init__(self, found: int):
        self.found = found
        super().__init__(
            f"track bootstrap needs 3 key frames with valid detections, found {found}"
        )


@dataclass(frozen=True)
class ZoomParams:
    keyframe_fraction: float = 0.10
    score_threshold: float = 0.8
    # None -> adaptive: half the diagonal of the last accepted detection, at least distance_floor
    distance_threshold: Optional[float] = None
    distance_floor: float = 20.0
    crop_candidates: tuple[int, ...] = (480, 640, 720, 960)
    occupancy_range: tuple[float, float] = (0.15, 0.20)
    input_size: int = 172
    # False: crop width and height are picked independently from crop_candidates
    square_crops: bool = False

    def __post_init__(self):
        object.__setattr__(self, "crop_candidates", tuple(int(c) for c in self.crop_candidates))
        object.__setattr__(self, "occupancy_range", tuple(float(v) for v in self.occupancy_range))
        low, high = self.occupancy_range
        if not 0.0 < low < high < 1.0:
            raise ValidationError(f"occupancy range needs 0 < low < high < 1, got {self.occupancy_range}")
        cands = self.crop_candidates
        if not cands or any(c <= 0 for c in cands) or any(b <= a for a, b in zip(cands, cands[1:])):
            raise ValidationError(f"crop candidates must be positive and strictly increasing, got {cands}")
        if self.input_size < 1:
            raise ValidationError("input_size must be >= 1")
        if not 0.0 < self.keyframe_fraction <= 1.0:
            raise ValidationError(f"keyframe_fraction must lie in (0, 1], got {self.keyframe_fraction}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValidationError(f"score_threshold must lie in [0, 1], got {self.score_threshold}")
        if self.distance_threshold is not None and self.distance_threshold <= 0:
            raise ValidationError("distance_threshold must be positive")

    def gate_for(self, reference: BBox) -> float:
        if self.distance_threshold is not None:
            return self.distance_threshold
        return max(self.distance_floor, 0.5 * reference.diagonal())


def _wrap_angle(a: float) -> float:
    """Map to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class PredictionState:
    """Three consecutive key-frame centers, oldest first.

    ``gaps`` holds the frame spacing (oldest->middle, middle->latest,
    latest->target). With equal gaps the extrapolation is exactly the
    three-point distance/heading rule; unequal gaps rescale the per-frame
    speed and heading change so that constant-velocity motion stays exact.
    """

    centers: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    gaps: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.centers) != 3:
            raise ValidationError("PredictionState needs exactly three centers")
        object.__setattr__(self, "centers", tuple((float(x), float(y)) for x, y in self.centers))
        if any(g <= 0 for g in self.gaps):
            raise ValidationError("key frame gaps must be positive")

    @property
    def dist_last(self) -> float:
        (_, _), (x1, y1), (x2, y2) = self.centers
        return math.hypot(x2 - x1, y2 - y1)

    @property
    def dist_prev(self) -> float:
        (x0, y0), (x1, y1), _ = self.centers
        return math.hypot(x1 - x0, y1 - y0)

    def _raw_headings(self):
        (x0, y0), (x1, y1), (x2, y2) = self.centers
        old = math.atan2(y1 - y0, x1 - x0) if (x1, y1) != (x0, y0) else None
        new = math.atan2(y2 - y1, x2 - x1) if (x2, y2) != (x1, y1) else None
        return old, new

    @property
    def heading_last(self) -> float:
        old, new = self._raw_headings()
        if new is None:
            return old if old is not None else 0.0
        return new

    @property
    def heading_prev(self) -> float:
        old, new = self._raw_headings()
        if old is None:
            return new if new is not None else 0.0
        return old

    @property
    def dist_change(self) -> float:
        return self.dist_last - self.dist_prev

    @property
    def heading_change(self) -> float:
        return _wrap_angle(self.heading_last - self.heading_prev)


def predict_next(state: PredictionState) -> tuple[float, float]:
    g_prev, g_last, horizon = state.gaps
    speed_last = state.dist_last / g_last
    speed_prev = state.dist_prev / g_prev
    # chord midpoints are (g_prev+g_last)/2 apart; the next chord's midpoint is (g_last+horizon)/2 ahead
    scale = (g_last + horizon) / (g_prev + g_last)
    step = (speed_last + (speed_last - speed_prev) * scale) * horizon
    heading = state.heading_last + state.heading_change * scale
    x, y = state.centers[2]
    return (x + step * math.cos(heading), y + step * math.sin(heading))


def validate(predicted: tuple[float, float], detected: Optional[BBox], threshold: float,
             fallback_size: tuple[float, float]) -> tuple[BBox, Provenance]:
    """Accept the detection if it lies within ``threshold`` of the prediction, else keep the prediction."""
    if detected is not None:
        px, py = predicted
        if math.hypot(detected.cx - px, detected.cy - py) <= threshold:
            return detected, Provenance.DETECTED
    w, h = fallback_size
    return BBox(predicted[0], predicted[1], w, h, 0.0), Provenance.PREDICTED


def interpolate(before: TrackEntry, after: TrackEntry, frame_index: int) -> BBox:
    lo, hi = before.frame_index, after.frame_index
    if not lo < frame_index < hi:
        raise ValidationError(f"frame {frame_index} not strictly between {lo} and {hi}")
    t = (frame_index - lo) / (hi - lo)
    a, b = before.bbox, after.bbox

    def lerp(u, v):
        return u + (v - u) * t

    return BBox(lerp(a.cx, b.cx), lerp(a.cy, b.cy), lerp(a.w, b.w), lerp(a.h, b.h), min(a.score, b.score))


def _clamp_center(x, y, frame_size):
    w, h = frame_size
    return (min(max(x, 0.0), float(w)), min(max(y, 0.0), float(h)))


def build_track(source, schedule: KeyFrameSchedule, params: ZoomParams,
                frame_size: tuple[int, int], frame_paths: Optional[Sequence[str]] = None) -> Track:
    """Run the detector on key frames only, gate each detection against the
    motion prediction, and fill the remaining frames by interpolation.

    ``source`` is anything with ``detect(frame_index, frame_path)``; a
    :class:`~aztr.locator.DetectionSet` works directly.
    """
    keyed: list[TrackEntry] = []
    last_detected: Optional[BBox] = None
    for k in schedule.key_indices:
        path = frame_paths[k] if frame_paths is not None else None
        try:
            boxes = source.detect(k, path)
        except DetectorUnavailable as exc:
            log.warning("detector unavailable on frame %d (%s); using prediction", k, exc)
            boxes = []
        det = best_detection(filter_by_score(boxes, params.score_threshold))
        if len(keyed) < 3:
            if det is not None:
                det = det.moved_to(*_clamp_center(det.cx, det.cy, frame_size))
                keyed.append(TrackEntry(k, det, Provenance.DETECTED))
                last_detected = det
            continue
        a, b, c = keyed[-3:]
        state = PredictionState(
            (a.bbox.center, b.bbox.center, c.bbox.center),
            (b.frame_index - a.frame_index, c.frame_index - b.frame_index, k - c.frame_index),
        )
        pred = _clamp_center(*predict_next(state), frame_size)
        box, prov = validate(pred, det, params.gate_for(last_detected), (last_detected.w, last_detected.h))
        if prov is Provenance.DETECTED:
            box = box.moved_to(*_clamp_center(box.cx, box.cy, frame_size))
            last_detected = box
        keyed.append(TrackEntry(k, box, prov))

    if len(keyed) < 3:
        raise BootstrapError(len(keyed))
    return fill_track(keyed, schedule.frame_count, frame_size)


def fill_track(keyed: Sequence[TrackEntry], frame_count: int, frame_size: tuple[int, int]) -> Track:
    """Expand sparse key entries to one entry per frame.

    Frames before the first key entry hold its box; frames after the last
    hold the last box. Both are marked interpolated.
    """
    entries = []
    j = 0
    for f in range(frame_count):
        while j < len(keyed) and keyed[j].frame_index < f:
            j += 1
        if j < len(keyed) and keyed[j].frame_index == f:
            entries.append(keyed[j])
        elif j == 0:
            entries.append(TrackEntry(f, keyed[0].bbox, Provenance.INTERPOLATED))
        elif j == len(keyed):
            entries.append(TrackEntry(f, keyed[-1].bbox, Provenance.INTERPOLATED))
        else:
            entries.append(TrackEntry(f, interpolate(keyed[j - 1], keyed[j], f), Provenance.INTERPOLATED))
    return Track(tuple(entries), frame_count, frame_size)


def _distance_to_band(ratio: float, low: float, high: float) -> float:
    if ratio < low:
        return low - ratio
    if ratio > high:
        return ratio - high
    return 0.0


def select_crop_size(bbox_area: float, candidates: Sequence[int],
                     occupancy_range: tuple[float, float] = (0.15, 0.20)) -> int:
    """Smallest square side whose occupancy ``bbox_area / side**2`` falls in the band.

    Falls back to the side whose occupancy is nearest the band (smaller side on ties).
    """
    if bbox_area <= 0:
        raise ValidationError("bbox_area must be positive")
    if not candidates:
        raise ValidationError("no crop candidates")
    low, high = occupancy_range
    sides = sorted(candidates)
    for c in sides:
        if low <= bbox_area / (c * c) <= high:
            return c
    return min(sides, key=lambda c: (_distance_to_band(bbox_area / (c * c), low, high), c))


def select_crop_shape(bbox_area: float, candidates: Sequence[int],
                      occupancy_range: tuple[float, float] = (0.15, 0.20),
                      landscape: bool = True) -> tuple[int, int]:
    """Like :func:`select_crop_size` but width and height are chosen independently.

    Shapes are tried by increasing area, squarer first on equal area. The long
    side goes horizontal when ``landscape``. Returns ``(width, height)``.
    """
    if bbox_area <= 0:
        raise ValidationError("bbox_area must be positive")
    if not candidates:
        raise ValidationError("no crop candidates")
    low, high = occupancy_range
    sides = sorted(candidates)
    shapes = sorted(((a, b) for i, a in enumerate(sides) for b in sides[i:]),
                    key=lambda s: (s[0] * s[1], s[1] - s[0]))
    chosen = None
    for a, b in shapes:
        if low <= bbox_area / (a * b) <= high:
            chosen = (a, b)
            break
    if chosen is None:
        chosen = min(shapes, key=lambda s: _distance_to_band(bbox_area / (s[0] * s[1]), low, high))
    short, long_ = chosen
    return (long_, short) if landscape else (short, long_)


def crop_shape_for(bbox: BBox, params: ZoomParams) -> tuple[int, int]:
    if params.square_crops:
        side = select_crop_size(bbox.area(), params.crop_candidates, params.occupancy_range)
        return (side, side)
    return select_crop_shape(bbox.area(), params.crop_candidates, params.occupancy_range,
                             landscape=bbox.w >= bbox.h)


@dataclass(frozen=True)
class CropWindow:
    """Half-open pixel window ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height


def _round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


def crop_window(frame_width: int, frame_height: int, center: tuple[float, float], size: CropSize) -> CropWindow:
    cw, ch = (size, size) if isinstance(size, (int, np.integer)) else size
    cw, ch = min(int(cw), frame_width), min(int(ch), frame_height)
    cx, cy = _round_half_up(center[0]), _round_half_up(center[1])
    x0 = min(max(cx - cw // 2, 0), frame_width - cw)
    y0 = min(max(cy - ch // 2, 0), frame_height - ch)
    return CropWindow(x0, y0, x0 + cw, y0 + ch)


def crop_region(frame: FrameBuffer, center: tuple[float, float], size: CropSize) -> FrameBuffer:
    """Window of ``size`` centered on ``center``, shifted (never shrunk) to stay in the frame.

    A side larger than the frame is clamped to the frame dimension.
    """
    win = crop_window(frame.width, frame.height, center, size)
    return FrameBuffer(frame.data[win.y0:win.y1, win.x0:win.x1])


def _bilinear_axis(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(frame: FrameBuffer, out_w: int, out_h: int) -> FrameBuffer:
    if out_w < 1 or out_h < 1:
        raise ValidationError("output size must be at least 1x1")
    if (out_w, out_h) == (frame.width, frame.height):
        return FrameBuffer(frame.data)
    src = frame.data.astype(np.float64)
    y0, y1, fy = _bilinear_axis(frame.height, out_h)
    x0, x1, fx = _bilinear_axis(frame.width, out_w)
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    fy = fy[:, None, None]
    out = top * (1 - fy) + bot * fy
    return FrameBuffer(np.clip(out, 0.0, 1.0).astype(frame.data.dtype))


def zoom_windows(track: Track, params: ZoomParams) -> list[CropWindow]:
    """Crop window per frame: occupancy-driven size centered on the track box."""
    track.require_finalized()
    fw, fh = track.frame_size
    return [crop_window(fw, fh, e.bbox.center, crop_shape_for(e.bbox, params)) for e in track.entries]


def auto_zoom_clip(frames: Sequence[FrameBuffer], track: Track, params: ZoomParams) -> list[FrameBuffer]:
    track.require_finalized()
    if len(frames) != track.frame_count:
        raise ValidationError(f"clip has {len(frames)} frames, track covers {track.frame_count}")
    out = []
    for frame, win in zip(frames, zoom_windows(track, params)):
        if (frame.width, frame.height) != track.frame_size:
            raise ValidationError(f"frame is {frame.width}x{frame.height}, track expects "
                                  f"{track.frame_size[0]}x{track.frame_size[1]}")
        crop = FrameBuffer(frame.data[win.y0:win.y1, win.x0:win.x1])
        out.append(resize_bilinear(crop, params.input_size, params.input_size))
    return out
