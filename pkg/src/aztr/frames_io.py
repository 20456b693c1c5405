"""Binary PPM frames and plain-text clip manifests.

Manifest layout::

    <width> <height> <fps>
    frames/frame_00000.ppm
    frames/frame_00001.ppm
    ...

Relative frame paths resolve against the manifest's directory.
"""

from __future__ import annotations

import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FrameBuffer, ValidationError


def write_ppm(frame: FrameBuffer, path) -> None:
    data = frame.data
    if data.shape[2] == 1:
        data = np.repeat(data, 3, axis=2)
    pixels = np.clip(np.floor(data.astype(np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def _tokens(raw: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        out.append(raw[start:pos])
    return out, pos


def read_ppm(path, gray: bool = False) -> FrameBuffer:
    """Read P6 (or P5) 8-bit; ``gray`` collapses identical RGB channels to one."""
    raw = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(raw, 4, 0)
    if magic not in (b"P6", b"P5") or int(maxval) != 255:
        raise ValidationError(f"{path}: only 8-bit P6/P5 images are supported")
    w, h = int(w), int(h)
    ch = 3 if magic == b"P6" else 1
    body = raw[pos + 1: pos + 1 + w * h * ch]
    if len(body) != w * h * ch:
        raise ValidationError(f"{path}: truncated pixel data")
    data = np.frombuffer(body, dtype=np.uint8).reshape(h, w, ch).astype(np.float32) / 255.0
    if gray and ch == 3:
        data = data[:, :, :1]
    return FrameBuffer(data)


@dataclass(frozen=True)
class ClipManifest:
    width: int
    height: int
    fps: float
    frame_paths: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.frame_paths)

    @classmethod
    def load(cls, path) -> "ClipManifest":
        path = Path(path)
        lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
        lines = [ln for ln in lines if ln and not ln.startswith("#")]
        if not lines:
            raise OSError(f"{path}: empty manifest")
        head = lines[0].split()
        if len(head) != 3:
            raise ValidationError(f"{path}: first line must be 'width height fps'")
        width, height, fps = int(head[0]), int(head[1]), float(head[2])
        frames = []
        for rel in lines[1:]:
            p = Path(rel)
            p = p if p.is_absolute() else path.parent / p
            if not p.is_file():
                raise FileNotFoundError(f"{path}: frame file {p} does not exist")
            frames.append(str(p))
        if not frames:
            raise OSError(f"{path}: manifest lists no frames")
        return cls(width, height, fps, tuple(frames))

    def read_frames(self, gray: bool = False) -> list[FrameBuffer]:
        frames = [read_ppm(p, gray=gray) for p in self.frame_paths]
        for p, f in zip(self.frame_paths, frames):
            if (f.width, f.height) != (self.width, self.height):
                raise ValidationError(f"{p}: {f.width}x{f.height} does not match manifest {self.width}x{self.height}")
        return frames


def manifest_text(width: int, height: int, fps: float, rel_paths: Sequence[str]) -> str:
    return "\n".join([f"{width} {height} {fps:g}", *rel_paths]) + "\n"


class AtomicDir:
    """Build a directory under a temporary name and swap it in on success."""

    def __init__(self, target):
        self.target = Path(target)

    def __enter__(self) -> Path:
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(dir=self.target.parent, prefix=f".{self.target.name}."))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.target.exists():
            shutil.rmtree(self.target)
        os.replace(self.tmp, self.target)
        return False


def write_clip(directory: Path, frames: Sequence[FrameBuffer], fps: float = 30.0,
               manifest_name: str = "manifest.txt") -> Path:
    """Write ``frames/frame_NNNNN.ppm`` plus a manifest into an existing directory."""
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    rel = []
    for i, f in enumerate(frames):
        name = f"frames/frame_{i:05d}.ppm"
        write_ppm(f, directory / name)
        rel.append(name)
    w, h = (frames[0].width, frames[0].height) if frames else (0, 0)
    mpath = directory / manifest_name
    mpath.write_text(manifest_text(w, h, fps, rel), encoding="utf-8")
    return mpath
