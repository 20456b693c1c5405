"""Geometric and video domain types shared by the tracking, zoom and synth code."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ValidationError(ValueError):
    """Input violates a domain rule (maps to CLI exit code 2)."""


class Provenance(enum.Enum):
    DETECTED = "D"
    PREDICTED = "P"
    INTERPOLATED = "I"

    @classmethod
    def from_code(cls, code: str) -> "Provenance":
        try:
            return cls(code)
        except ValueError:
            raise ValidationError(f"unknown provenance code {code!r}") from None


@dataclass(frozen=True)
class BBox:
    """Axis-aligned, center-parameterized box in pixel units."""

    cx: float
    cy: float
    w: float
    h: float
    score: float = 1.0

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h", "score"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"BBox.{name} must be finite, got {v}")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"BBox needs w > 0 and h > 0, got w={self.w} h={self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"BBox.score must lie in [0, 1], got {self.score}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    def area(self) -> float:
        return self.w * self.h

    def diagonal(self) -> float:
        return math.hypot(self.w, self.h)

    def moved_to(self, cx: float, cy: float) -> "BBox":
        return BBox(cx, cy, self.w, self.h, self.score)


def center_distance(a: BBox, b: BBox) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


@dataclass(frozen=True)
class TrackEntry:
    frame_index: int
    bbox: BBox
    provenance: Provenance

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValidationError(f"frame_index must be >= 0, got {self.frame_index}")


@dataclass(frozen=True)
class Track:
    """Per-frame bbox sequence for a single actor.

    A track is *finalized* when it holds exactly one entry for every frame in
    ``[0, frame_count)``. Partial tracks are allowed (detection files, key-frame
    only tracks) but the zoom stage requires a finalized one.
    """

    entries: tuple[TrackEntry, ...]
    frame_count: int
    frame_size: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        width, height = self.frame_size
        prev = -1
        for e in self.entries:
            if e.frame_index <= prev:
                raise ValidationError("track entries must be strictly ascending by frame_index")
            if e.frame_index >= self.frame_count:
                raise ValidationError(
                    f"entry frame {e.frame_index} outside frame_count {self.frame_count}"
                )
            if not (0 <= e.bbox.cx <= width and 0 <= e.bbox.cy <= height):
                raise ValidationError(
                    f"frame {e.frame_index}: center ({e.bbox.cx}, {e.bbox.cy}) "
                    f"outside {width}x{height} frame"
                )
            prev = e.frame_index

    @property
    def is_finalized(self) -> bool:
        return len(self.entries) == self.frame_count and all(
            e.frame_index == i for i, e in enumerate(self.entries)
        )

    def require_finalized(self) -> None:
        if not self.is_finalized:
            have = {e.frame_index for e in self.entries}
            missing = [i for i in range(self.frame_count) if i not in have]
            raise ValidationError(
                f"track does not cover all {self.frame_count} frames; "
                f"{len(missing)} missing (first: {missing[:5]})"
            )

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> TrackEntry:
        return self.entries[i]

    def centers(self) -> np.ndarray:
        return np.array([[e.bbox.cx, e.bbox.cy] for e in self.entries], dtype=float)

    def provenance_counts(self) -> dict[Provenance, int]:
        counts = {p: 0 for p in Provenance}
        for e in self.entries:
            counts[e.provenance] += 1
        return counts


@dataclass(frozen=True, eq=False)
class FrameBuffer:
    """Dense H x W x C image, values in [0, 1].

    The pixel array is stored read-only; operations return new buffers.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValidationError(f"frame data must be HxWx1 or HxWx3, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        arr = np.array(arr, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def filled(cls, width: int, height: int, value: float, channels: int = 1,
               dtype=np.float32) -> "FrameBuffer":
        return cls(np.full((height, width, channels), value, dtype=dtype))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrameBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class KeyFrameSchedule:
    frame_count: int
    stride: int
    key_indices: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValidationError("frame_count must be >= 1")
        if self.stride < 1:
            raise ValidationError("stride must be >= 1")
        expected = tuple(range(0, self.frame_count, self.stride))
        if expected[-1] != self.frame_count - 1:
            expected = expected + (self.frame_count - 1,)
        if self.key_indices and tuple(self.key_indices) != expected:
            raise ValidationError("key_indices inconsistent with stride/frame_count")
        object.__setattr__(self, "key_indices", expected)

    def __contains__(self, frame_index: int) -> bool:
        return frame_index in set(self.key_indices)

    def __len__(self) -> int:
        return len(self.key_indices)

    @property
    def fraction(self) -> float:
        return len(self.key_indices) / self.frame_count


def schedule_keyframes(frame_count: int, fraction: float) -> KeyFrameSchedule:
    """Uniform key frames at ``stride = round(1/fraction)``; the last frame is always a key frame."""
    if not (0.0 < fraction <= 1.0) or not math.isfinite(fraction):
        raise ValidationError(f"keyframe fraction must lie in (0, 1], got {fraction}")
    if frame_count < 1:
        raise ValidationError(f"frame_count must be >= 1, got {frame_count}")
    stride = max(1, round(1.0 / fraction))
    return KeyFrameSchedule(frame_count, stride)


def as_bboxes(rows: Iterable[Sequence[float]]) -> list[BBox]:
    return [BBox(*map(float, r)) for r in rows]
