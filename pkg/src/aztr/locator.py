"""Detection ingestion: track/detection text files and an external detector process.

Track file format, one record per line::

    frame_index cx cy w h score [provenance]

Blank lines and ``#`` comments are ignored. Detection files may repeat a
frame index (several boxes in one frame); track files use the 7-field form
with a provenance code in {D, P, I}.
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Protocol, Sequence

from .core import BBox, Provenance, Track, TrackEntry, ValidationError

DEFAULT_SCORE_THRESHOLD = 0.8


class TrackFormatError(ValidationError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class DetectorUnavailable(RuntimeError):
    """The detector backend could not answer (process died, garbled reply)."""


class Detector(Protocol):
    def detect(self, frame_index: int, frame_path: Optional[str] = None) -> list[BBox]: ...


@dataclass(frozen=True)
class DetectionSet:
    """Boxes per frame index; frames without detections are simply absent."""

    by_frame: Mapping[int, tuple[BBox, ...]] = field(default_factory=dict)

    def __post_init__(self):
        frozen = {int(k): tuple(v) for k, v in sorted(self.by_frame.items()) if len(v) > 0}
        object.__setattr__(self, "by_frame", frozen)

    def __len__(self) -> int:
        return len(self.by_frame)

    def frames(self) -> list[int]:
        return list(self.by_frame)

    def get(self, frame_index: int) -> list[BBox]:
        return list(self.by_frame.get(frame_index, ()))

    def detect(self, frame_index: int, frame_path: Optional[str] = None) -> list[BBox]:
        return self.get(frame_index)

    @classmethod
    def from_track(cls, track: Track) -> "DetectionSet":
        return cls({e.frame_index: (e.bbox,) for e in track.entries})


def _parse_lines(path, text: str, with_provenance: bool):
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        want = (7,) if with_provenance else (6, 7)
        if len(parts) not in want:
            raise TrackFormatError(path, lineno, f"expected {' or '.join(map(str, want))} fields, got {len(parts)}")
        try:
            frame = int(parts[0])
            values = [float(p) for p in parts[1:6]]
        except ValueError as exc:
            raise TrackFormatError(path, lineno, str(exc)) from None
        try:
            box = BBox(*values)
            prov = Provenance.from_code(parts[6]) if len(parts) == 7 else None
            if frame < 0:
                raise ValidationError(f"negative frame index {frame}")
        except ValidationError as exc:
            raise TrackFormatError(path, lineno, str(exc)) from None
        records.append((frame, box, prov))
    return records


def load_detections(path) -> DetectionSet:
    text = Path(path).read_text(encoding="ascii")
    by_frame: dict[int, list[BBox]] = {}
    for frame, box, _ in _parse_lines(path, text, with_provenance=False):
        by_frame.setdefault(frame, []).append(box)
    return DetectionSet(by_frame)


def format_bbox_line(frame_index: int, box: BBox, provenance: Optional[Provenance] = None) -> str:
    fields = [str(frame_index)] + [repr(float(v)) for v in (box.cx, box.cy, box.w, box.h, box.score)]
    if provenance is not None:
        fields.append(provenance.value)
    return " ".join(fields)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="ascii") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_detections(dets: DetectionSet, path) -> None:
    lines = ["# frame_index cx cy w h score"]
    for frame, boxes in dets.by_frame.items():
        lines.extend(format_bbox_line(frame, b) for b in boxes)
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_track(track: Track, path) -> None:
    w, h = track.frame_size
    lines = [
        f"# frame_count={track.frame_count} frame_size={w}x{h}",
        "# frame_index cx cy w h score provenance",
    ]
    lines.extend(format_bbox_line(e.frame_index, e.bbox, e.provenance) for e in track.entries)
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_track(path, frame_count: Optional[int] = None,
               frame_size: Optional[tuple[int, int]] = None) -> Track:
    """Read a 7-field track file.

    ``frame_count`` and ``frame_size`` default to the values recorded in the
    header comment written by :func:`save_track`.
    """
    text = Path(path).read_text(encoding="ascii")
    for line in text.splitlines():
        if line.startswith("# frame_count="):
            head = dict(tok.split("=", 1) for tok in line[1:].split())
            if frame_count is None:
                frame_count = int(head["frame_count"])
            if frame_size is None:
                w, h = head["frame_size"].split("x")
                frame_size = (int(w), int(h))
            break
    records = _parse_lines(path, text, with_provenance=True)
    if frame_count is None:
        frame_count = max((r[0] for r in records), default=-1) + 1
    if frame_size is None:
        raise ValidationError(f"{path}: frame size unknown (no header and none given)")
    entries = [TrackEntry(f, b, p) for f, b, p in records]
    return Track(tuple(entries), frame_count, frame_size)


def filter_by_score(dets: Iterable[BBox], threshold: float) -> list[BBox]:
    """Keep boxes whose score is strictly greater than ``threshold``."""
    return [b for b in dets if b.score > threshold]


def best_detection(dets: Sequence[BBox]) -> Optional[BBox]:
    """Highest score wins; ties go to the larger box, then to the earlier entry."""
    best = None
    for b in dets:
        if best is None or (b.score, b.area()) > (best.score, best.area()):
            best = b
    return best


class TrackFileDetector:
    def __init__(self, path):
        self.path = str(path)
        self.detections = load_detections(path)

    def detect(self, frame_index, frame_path=None):
        return self.detections.get(frame_index)


class SubprocessDetector:
    """Line-delimited JSON request/response channel to a child detector process.

    One request in flight at a time; callers must not share an instance
    across threads without external locking.
    """

    def __init__(self, command, cwd=None):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.command = argv
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
            text=True, bufsize=1, cwd=cwd,
        )

    def detect(self, frame_index, frame_path=None):
        proc = self._proc
        if proc.poll() is not None:
            raise DetectorUnavailable(f"detector exited with code {proc.returncode}")
        request = json.dumps({"frame_index": int(frame_index), "image_path": str(frame_path or "")})
        try:
            proc.stdin.write(request + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise DetectorUnavailable(f"detector pipe failed: {exc}") from None
        if not line:
            raise DetectorUnavailable("detector closed its output")
        try:
            reply = json.loads(line)
            if reply["frame_index"] != frame_index:
                raise DetectorUnavailable(
                    f"reply for frame {reply['frame_index']} while waiting for {frame_index}"
                )
            return [BBox(float(b["cx"]), float(b["cy"]), float(b["w"]), float(b["h"]), float(b["score"]))
                    for b in reply["bboxes"]]
        except DetectorUnavailable:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise DetectorUnavailable(f"malformed detector reply {line.strip()!r}: {exc}") from None

    def close(self):
        proc = self._proc
        if proc.poll() is None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class CountingDetector:
    """Wraps a backend and records every frame it was asked about."""

    def __init__(self, inner: Detector):
        self.inner = inner
        self.queried: list[int] = []

    @property
    def calls(self) -> int:
        return len(self.queried)

    def detect(self, frame_index, frame_path=None):
        self.queried.append(frame_index)
        return self.inner.detect(frame_index, frame_path)


@dataclass(frozen=True)
class DetectorHandle:
    """``kind`` is ``"file"`` (target = track file path) or ``"exec"`` (target = command line)."""

    kind: str
    target: str
    score_threshold: float = DEFAULT_SCORE_THRESHOLD

    def __post_init__(self):
        if self.kind not in ("file", "exec"):
            raise ValidationError(f"detector kind must be 'file' or 'exec', got {self.kind!r}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValidationError(f"score_threshold must lie in [0, 1], got {self.score_threshold}")

    @classmethod
    def parse(cls, spec: str, score_threshold: float = DEFAULT_SCORE_THRESHOLD) -> "DetectorHandle":
        """Parse ``file:<path>`` or ``exec:<command>``."""
        kind, sep, target = spec.partition(":")
        if not sep or not target:
            raise ValidationError(f"detector spec must be file:<path> or exec:<cmd>, got {spec!r}")
        return cls(kind, target, score_threshold)

    def open(self):
        if self.kind == "file":
            return TrackFileDetector(self.target)
        return SubprocessDetector(self.target)


def query_detector(backend: Detector, frame_index: int, frame_path=None) -> list[BBox]:
    """Unfiltered boxes for one frame. ``backend`` may be a :class:`DetectorHandle`."""
    if isinstance(backend, DetectorHandle):
        opened = backend.open()
        try:
            return opened.detect(frame_index, frame_path)
        finally:
            if hasattr(opened, "close"):
                opened.close()
    return backend.detect(frame_index, frame_path)
