"""Toy end-to-end pipeline: synthetic clip -> key-frame track -> auto zoom -> temporal model."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .core import schedule_keyframes
from .reason import ReasonModel
from .synth import SyntheticClip, perturb_detections
from .tensor import Tensor
from .zoom import ZoomParams, auto_zoom_clip, build_track

log = logging.getLogger(__name__)

# scaled-down zoom settings for the 96x72 toy frames (8x8 actor)
TOY_ZOOM = ZoomParams(keyframe_fraction=0.5, distance_floor=4.0, crop_candidates=(16, 20, 24, 32), input_size=16)


def zoom_to_array(frames, track, params: ZoomParams) -> np.ndarray:
    """Zoomed clip as a float64 ``(C, T, H, W)`` array."""
    zoomed = auto_zoom_clip(frames, track, params)
    return np.stack([f.data for f in zoomed]).transpose(3, 0, 1, 2).astype(np.float64)


def zoom_synthetic(clip: SyntheticClip, params: ZoomParams = TOY_ZOOM) -> np.ndarray:
    """Track the clip's actor from key-frame detections, then zoom."""
    sched = schedule_keyframes(clip.gt_track.frame_count, params.keyframe_fraction)
    dets = perturb_detections(clip.gt_track, key_indices=sched.key_indices)
    track = build_track(dets, sched, params, clip.gt_track.frame_size)
    return zoom_to_array(clip.frames, track, params)


def clips_to_arrays(clips: Sequence[SyntheticClip], params: ZoomParams = TOY_ZOOM):
    X = np.stack([zoom_synthetic(c, params) for c in clips])
    y = np.array([c.label for c in clips], dtype=np.intp)
    return X, y


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-2, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad ** 2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    losses: list[float]
    train_accuracy: float


def loss_on(model: ReasonModel, X: np.ndarray, y: np.ndarray) -> Tensor:
    return tn.cross_entropy(model.logits(Tensor(X)), y)


def fit(model: ReasonModel, X: np.ndarray, y: np.ndarray, epochs: int = 200, lr: float = 1e-2,
        batch_size: int = 32, seed: int = 0) -> TrainResult:
    """Mini-batch Adam on cross-entropy. ``losses`` holds the full-set loss before each epoch and at the end."""
    opt = Adam(model.tensors(), lr=lr)
    order = np.random.default_rng(seed)
    losses = [loss_on(model, X, y).item()]
    for epoch in range(epochs):
        perm = order.permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = perm[start:start + batch_size]
            opt.zero_grad()
            loss_on(model, X[idx], y[idx]).backward()
            opt.step()
        losses.append(loss_on(model, X, y).item())
        if epoch % 25 == 0:
            log.info("epoch %d loss %.4f", epoch, losses[-1])
    return TrainResult(losses, accuracy(model, X, y))


def predict(model: ReasonModel, X: np.ndarray) -> np.ndarray:
    return np.argmax(model.logits(Tensor(X)).data, axis=-1)


def accuracy(model: ReasonModel, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(model, X) == y))
