"""Synthetic trajectories, clips and detection files with known ground truth.

All randomness comes from :class:`Lcg64` (64-bit LCG, Knuth MMIX constants)
so generated data is reproducible from the seed alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import BBox, FrameBuffer, Provenance, Track, TrackEntry, ValidationError
from .locator import DetectionSet

_MASK = (1 << 64) - 1


class Lcg64:
    """``state <- a * state + c (mod 2**64)``; floats use the top 53 bits."""

    MULT = 6364136223846793005
    INC = 1442695040888963407

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.MULT * self.state + self.INC) & _MASK
        return self.state

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randbelow(self, n: int) -> int:
        return min(int(self.random() * n), n - 1)

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, items: Sequence, k: int) -> list:
        pool = list(items)
        if k > len(pool):
            raise ValueError(f"cannot sample {k} from {len(pool)}")
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def uniform_array(self, n: int, lo: float, hi: float) -> np.ndarray:
        """The next ``n`` draws of :meth:`uniform`, vectorized via the closed-form LCG jump."""
        if n == 0:
            return np.empty(0)
        a = np.full(n, self.MULT, dtype=np.uint64)
        powers = np.multiply.accumulate(a)  # a^1 .. a^n (mod 2**64)
        geo = np.empty(n, dtype=np.uint64)
        geo[0] = 1
        geo[1:] = powers[:-1]
        geo = np.cumsum(geo, dtype=np.uint64)  # sum_{j<k} a^j
        states = powers * np.uint64(self.state) + geo * np.uint64(self.INC)
        self.state = int(states[-1])
        u = (states >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return lo + (hi - lo) * u

    def fork(self, index: int) -> "Lcg64":
        """Independent stream for item ``index`` (e.g. one clip of a dataset)."""
        mix = Lcg64(self.state ^ ((index + 1) * 0x9E3779B97F4A7C15 & _MASK))
        mix.next_u64()
        return Lcg64(mix.next_u64())


@dataclass(frozen=True)
class TrajectorySpec:
    """``kind`` is ``linear``, ``circular`` or ``sinusoidal``.

    linear:     ``velocity`` px/frame.
    circular:   ``radius`` px, ``angular_step`` rad/frame, starting at ``phase`` on the circle.
    sinusoidal: linear drift at ``velocity`` plus ``amplitude * sin(2 pi t / period)``
                perpendicular to it.
    """

    kind: str
    start: tuple[float, float]
    n_frames: int
    velocity: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    angular_step: float = 0.0
    phase: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0
    bounds: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in ("linear", "circular", "sinusoidal"):
            raise ValidationError(f"unknown trajectory kind {self.kind!r}")
        if self.n_frames < 1:
            raise ValidationError("n_frames must be >= 1")
        if self.kind == "circular" and self.radius <= 0:
            raise ValidationError("circular trajectory needs radius > 0")
        if self.kind == "sinusoidal" and self.period <= 0:
            raise ValidationError("sinusoidal trajectory needs period > 0")


def gen_trajectory(spec: TrajectorySpec) -> np.ndarray:
    """Centers as an ``n_frames x 2`` array."""
    t = np.arange(spec.n_frames, dtype=np.float64)
    x0, y0 = spec.start
    if spec.kind == "linear":
        pts = np.stack([x0 + spec.velocity[0] * t, y0 + spec.velocity[1] * t], axis=1)
    elif spec.kind == "circular":
        cx = x0 - spec.radius * math.cos(spec.phase)
        cy = y0 - spec.radius * math.sin(spec.phase)
        ang = spec.phase + spec.angular_step * t
        pts = np.stack([cx + spec.radius * np.cos(ang), cy + spec.radius * np.sin(ang)], axis=1)
    else:
        vx, vy = spec.velocity
        speed = math.hypot(vx, vy)
        nx, ny = (-vy / speed, vx / speed) if speed > 0 else (0.0, 1.0)
        off = spec.amplitude * np.sin(2 * math.pi * t / spec.period)
        pts = np.stack([x0 + vx * t + nx * off, y0 + vy * t + ny * off], axis=1)
    if spec.bounds is not None:
        w, h = spec.bounds
        bad = np.flatnonzero((pts[:, 0] < 0) | (pts[:, 0] > w) | (pts[:, 1] < 0) | (pts[:, 1] > h))
        if bad.size:
            i = int(bad[0])
            raise ValidationError(f"trajectory leaves the {w}x{h} frame at step {i}: {tuple(pts[i])}")
    return pts


@dataclass
class SyntheticClip:
    frames: list[FrameBuffer]
    gt_track: Track
    label: int = -1
    trajectory: Optional[np.ndarray] = None


def _round_half_up(v: float) -> int:
    return math.floor(v + 0.5)


def actor_rect(center: tuple[float, float], actor: tuple[int, int]) -> tuple[int, int, int, int]:
    """Integer pixel rectangle ``(x0, y0, x1, y1)`` covering exactly ``w*h`` pixels."""
    w, h = actor
    x0 = _round_half_up(center[0] - w / 2)
    y0 = _round_half_up(center[1] - h / 2)
    return x0, y0, x0 + w, y0 + h


def _background(width: int, height: int, channels: int, kind: str) -> np.ndarray:
    if kind == "gray":
        return np.full((height, width, channels), 0.5, dtype=np.float32)
    if kind == "ramp":
        if channels != 3:
            raise ValidationError("ramp background needs 3 channels")
        xs = np.linspace(0.1, 0.8, width, dtype=np.float32)
        ys = np.linspace(0.1, 0.8, height, dtype=np.float32)
        bg = np.empty((height, width, 3), dtype=np.float32)
        bg[:, :, 0] = xs[None, :]
        bg[:, :, 1] = ys[:, None]
        bg[:, :, 2] = 0.5
        return bg
    raise ValidationError(f"unknown background {kind!r}")


def render_clip(traj: np.ndarray, actor: tuple[int, int], frame: tuple[int, int], noise: float = 0.0,
                seed: int = 0, channels: int = 1, background: str = "gray", label: int = -1) -> SyntheticClip:
    """Solid actor rectangle (value 1.0) moving over a static background.

    ``background`` is ``gray`` (0.5) or ``ramp`` (RGB encodes x and y).
    Uniform noise in ``[-noise, noise]`` is added before clipping to [0, 1].
    """
    width, height = frame
    aw, ah = int(actor[0]), int(actor[1])
    if aw < 1 or ah < 1:
        raise ValidationError("actor size must be at least 1x1")
    bg = _background(width, height, channels, background)
    rng = Lcg64(seed)
    frames, entries = [], []
    for i, (cx, cy) in enumerate(np.asarray(traj, dtype=np.float64)):
        x0, y0, x1, y1 = actor_rect((cx, cy), (aw, ah))
        if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
            raise ValidationError(f"actor leaves the frame at step {i} (rect {x0},{y0}-{x1},{y1})")
        img = bg.copy()
        if noise > 0:
            img += rng.uniform_array(img.size, -noise, noise).astype(np.float32).reshape(img.shape)
        img[y0:y1, x0:x1, :] = 1.0
        if noise > 0:
            np.clip(img, 0.0, 1.0, out=img)
        frames.append(FrameBuffer(img))
        entries.append(TrackEntry(i, BBox(float(cx), float(cy), float(aw), float(ah), 1.0), Provenance.DETECTED))
    track = Track(tuple(entries), len(entries), (width, height))
    return SyntheticClip(frames, track, label, np.asarray(traj, dtype=np.float64))


def actor_size_for_occupancy(fraction: float, frame: tuple[int, int], aspect: float = 2.0) -> tuple[int, int]:
    """Integer ``(w, h)`` with ``w/h ~ aspect`` whose area is closest to ``fraction`` of the frame."""
    target = fraction * frame[0] * frame[1]
    h0 = math.sqrt(target / aspect)
    best = None
    for h in range(max(1, int(h0) - 2), int(h0) + 3):
        for w in (math.floor(target / h), math.ceil(target / h)):
            if w < 1:
                continue
            key = (abs(w * h - target), abs(w / h - aspect))
            if best is None or key < best[0]:
                best = (key, (w, h))
    return best[1]


def measure_occupancy(frame: FrameBuffer, window=None, threshold: float = 0.999) -> float:
    """Fraction of pixels (in ``window`` if given) at actor brightness in every channel."""
    data = frame.data
    if window is not None:
        data = data[window.y0:window.y1, window.x0:window.x1]
    mask = np.all(data >= threshold, axis=2)
    return float(mask.mean())


def perturb_detections(gt: Track, dropout: float = 0.0, jitter: float = 0.0, outliers: int = 0,
                       seed: int = 0, key_indices: Optional[Sequence[int]] = None,
                       threshold: float = 20.0, protect: int = 3) -> DetectionSet:
    """Detections on key frames derived from ground truth.

    ``dropout``: fraction of key frames left without a detection.
    ``jitter``: surviving true boxes move by up to +-jitter px per axis.
    ``outliers``: that many key frames get a single wrong box (score 0.9)
    exactly ``5 * threshold`` px from the truth. The first ``protect`` key
    frames never get outliers (they seed the motion model unchecked).
    """
    if not 0.0 <= dropout <= 1.0:
        raise ValidationError("dropout must lie in [0, 1]")
    if jitter < 0 or outliers < 0:
        raise ValidationError("jitter and outliers must be non-negative")
    by_index = {e.frame_index: e.bbox for e in gt.entries}
    keys = list(key_indices) if key_indices is not None else sorted(by_index)
    rng = Lcg64(seed)
    dropped = set(rng.sample(keys, round(dropout * len(keys))))
    eligible = [k for k in keys[protect:] if k not in dropped]
    if outliers > len(eligible):
        raise ValidationError(f"cannot place {outliers} outliers on {len(eligible)} eligible key frames")
    outlier_frames = set(rng.sample(eligible, outliers))
    width, height = gt.frame_size
    offset = 5.0 * threshold
    out: dict[int, list[BBox]] = {}
    for k in keys:
        if k in dropped:
            continue
        box = by_index[k]
        if k in outlier_frames:
            for _ in range(256):
                ang = rng.uniform(-math.pi, math.pi)
                x, y = box.cx + offset * math.cos(ang), box.cy + offset * math.sin(ang)
                if 0 <= x <= width and 0 <= y <= height:
                    break
            else:
                raise ValidationError(f"no in-frame outlier position {offset} px from frame {k} truth")
            out[k] = [BBox(x, y, box.w, box.h, 0.9)]
        elif jitter > 0:
            x = min(max(box.cx + rng.uniform(-jitter, jitter), 0.0), float(width))
            y = min(max(box.cy + rng.uniform(-jitter, jitter), 0.0), float(height))
            out[k] = [box.moved_to(x, y)]
        else:
            out[k] = [box]
    return DetectionSet(out)


def track_error(pred: Track, gt: Track) -> tuple[float, float]:
    """(mean, max) per-frame center distance in pixels."""
    if pred.frame_count != gt.frame_count or len(pred) != len(gt):
        raise ValidationError(f"track lengths differ: {len(pred)} vs {len(gt)}")
    if len(gt) == 0:
        return (0.0, 0.0)
    d = np.linalg.norm(pred.centers() - gt.centers(), axis=1)
    return (float(d.mean()), float(d.max()))


TOY_CLASSES = ("left", "right", "up", "down")
_DIRECTIONS = {"left": (-1.0, 0.0), "right": (1.0, 0.0), "up": (0.0, -1.0), "down": (0.0, 1.0)}


@dataclass(frozen=True)
class ToySpec:
    frame: tuple[int, int] = (96, 72)
    actor: tuple[int, int] = (8, 8)
    n_frames: int = 8
    speed: tuple[float, float] = (1.5, 3.0)
    noise: float = 0.03
    margin: int = 6


@dataclass
class ToyDataset:
    train: list[SyntheticClip]
    test: list[SyntheticClip]
    classes: tuple[str, ...] = TOY_CLASSES


def make_toy_dataset(n_clips: int, seed: int = 0, spec: ToySpec = ToySpec(),
                     test_fraction: float = 0.2) -> ToyDataset:
    """Balanced 4-direction motion clips on a ramp background, split per class 80/20."""
    k = len(TOY_CLASSES)
    if n_clips < k:
        raise ValidationError(f"need at least {k} clips, got {n_clips}")
    root = Lcg64(seed)
    width, height = spec.frame
    aw, ah = spec.actor
    per_class: dict[int, list[SyntheticClip]] = {i: [] for i in range(k)}
    for i in range(n_clips):
        label = i % k
        rng = root.fork(i)
        dx, dy = _DIRECTIONS[TOY_CLASSES[label]]
        speed = rng.uniform(*spec.speed)
        travel = speed * (spec.n_frames - 1)
        lo_x, hi_x = spec.margin + aw / 2, width - spec.margin - aw / 2
        lo_y, hi_y = spec.margin + ah / 2, height - spec.margin - ah / 2
        # keep the whole path inside [lo, hi] on the moving axis
        sx = rng.uniform(lo_x + max(0.0, -dx) * travel, hi_x - max(0.0, dx) * travel)
        sy = rng.uniform(lo_y + max(0.0, -dy) * travel, hi_y - max(0.0, dy) * travel)
        traj = gen_trajectory(TrajectorySpec("linear", (sx, sy), spec.n_frames, velocity=(dx * speed, dy * speed),
                                             bounds=spec.frame))
        clip = render_clip(traj, spec.actor, spec.frame, noise=spec.noise, seed=rng.next_u64(), channels=3,
                           background="ramp", label=label)
        per_class[label].append(clip)
    train, test = [], []
    for label in range(k):
        clips = per_class[label]
        n_test = round(test_fraction * len(clips))
        train.extend(clips[:len(clips) - n_test])
        test.extend(clips[len(clips) - n_test:])
    return ToyDataset(train, test)
