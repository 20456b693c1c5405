"""Temporal reasoning over a clip: latent cross-attention + self-attention stack,
and the (2D+1)-conv / 3D-conv alternatives, all on :mod:`aztr.tensor`.

Shapes (single clip; a leading batch axis is accepted everywhere):

    frames_emb  T x D     per-frame embeddings (keys/values)
    latents     N x M     learned query array
    cross out   N x S     softmax(Q K^T / sqrt(S)) V
    stack out   N x M     after the output projection and L self-attention layers
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as tn
from .core import ValidationError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"AZTR"
CHECKPOINT_VERSION = 1


class Variant(enum.IntEnum):
    ATTENTION = 0
    CONV2PLUS1 = 1
    CONV3D = 2

    @classmethod
    def parse(cls, name: str) -> "Variant":
        key = name.strip().lower().replace("(", "").replace(")", "").replace("-", "").replace("_", "").replace("+", "plus")
        aliases = {"attention": cls.ATTENTION, "atten": cls.ATTENTION,
                   "conv2plus1": cls.CONV2PLUS1, "conv2d1": cls.CONV2PLUS1, "2plus1": cls.CONV2PLUS1,
                   "2dplus1": cls.CONV2PLUS1, "conv2dplus1": cls.CONV2PLUS1, "2plus1d": cls.CONV2PLUS1,
                   "conv3d": cls.CONV3D, "3d": cls.CONV3D}
        if key not in aliases:
            raise ValidationError(f"unknown variant {name!r} (attention, conv2plus1, conv3d)")
        return aliases[key]


@dataclass(frozen=True)
class ReasonConfig:
    T: int = 8
    D: int = 16
    N: int = 4
    M: int = 16
    S: int = 16
    L: int = 1
    variant: Variant = Variant.ATTENTION
    num_classes: int = 4
    # zoomed frame geometry (embedding input and conv input)
    channels: int = 3
    height: int = 16
    width: int = 16
    # conv variants
    conv_filters: int = 8
    spatial_kernel: int = 3
    temporal_kernel: int = 3
    residual: bool = True
    positional: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        for name in ("T", "D", "N", "M", "S", "num_classes", "channels", "height", "width",
                     "conv_filters", "spatial_kernel", "temporal_kernel"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"ReasonConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.L < 0:
            raise ValidationError(f"ReasonConfig.L must be >= 0, got {self.L}")

    @property
    def frame_features(self) -> int:
        return self.channels * self.height * self.width

    def header_values(self) -> list[int]:
        return [int(getattr(self, f.name)) for f in fields(self)]


@dataclass
class SelfAttentionWeights:
    wq: Tensor  # M x S
    wk: Tensor  # M x S
    wv: Tensor  # M x S
    wo: Tensor  # S x M


@dataclass
class AttentionWeights:
    latents: Tensor  # N x M
    wq: Tensor  # M x S
    wk: Tensor  # D x S
    wv: Tensor  # D x S
    wo: Tensor  # S x M, maps the cross-attention output back to the latent width
    layers: list[SelfAttentionWeights] = field(default_factory=list)


@dataclass
class HeadWeights:
    w: Tensor  # features x classes
    b: Tensor  # classes


def sinusoidal_encoding(T: int, D: int) -> np.ndarray:
    pos = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(D)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / D)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _attend(q: Tensor, k: Tensor, v: Tensor, S: int):
    scores = tn.matmul(q, tn.transpose(k)) * (1.0 / math.sqrt(S))
    attn = tn.softmax_rows(scores)
    return tn.matmul(attn, v), attn


def cross_attention(x_q: Tensor, x_kv: Tensor, w: AttentionWeights, return_attention: bool = False):
    """Latent queries (N x M) attend over frame rows (T x D); returns N x S."""
    if x_q.shape[-1] != w.wq.shape[0] or x_kv.shape[-1] != w.wk.shape[0]:
        raise ValidationError(
            f"cross_attention shape mismatch: x_q {x_q.shape}, x_kv {x_kv.shape}, "
            f"wq {w.wq.shape}, wk {w.wk.shape}"
        )
    S = w.wq.shape[1]
    out, attn = _attend(tn.matmul(x_q, w.wq), tn.matmul(x_kv, w.wk), tn.matmul(x_kv, w.wv), S)
    return (out, attn) if return_attention else out


def self_attention(x: Tensor, layer: SelfAttentionWeights, residual: bool = True,
                   return_attention: bool = False):
    """Single-head QKV attention among the N latents, projected back to M."""
    if x.shape[-1] != layer.wq.shape[0]:
        raise ValidationError(f"self_attention shape mismatch: x {x.shape}, wq {layer.wq.shape}")
    S = layer.wq.shape[1]
    h, attn = _attend(tn.matmul(x, layer.wq), tn.matmul(x, layer.wk), tn.matmul(x, layer.wv), S)
    out = tn.matmul(h, layer.wo)
    if residual:
        out = x + out
    return (out, attn) if return_attention else out


def temporal_reason(frames_emb: Tensor, cfg: ReasonConfig, weights: AttentionWeights) -> Tensor:
    if cfg.variant != Variant.ATTENTION:
        raise ValidationError(f"temporal_reason needs the attention variant, config has {cfg.variant.name}")
    if frames_emb.shape[-2:] != (cfg.T, cfg.D):
        raise ValidationError(f"frame embeddings must be (T={cfg.T}, D={cfg.D}), got {frames_emb.shape}")
    if len(weights.layers) != cfg.L:
        raise ValidationError(f"config has L={cfg.L} but weights hold {len(weights.layers)} layers")
    x_kv = frames_emb
    if cfg.positional:
        x_kv = x_kv + Tensor(sinusoidal_encoding(cfg.T, cfg.D))
    h = tn.matmul(cross_attention(weights.latents, x_kv, weights), weights.wo)
    if cfg.residual:
        h = h + weights.latents
    for layer in weights.layers:
        h = self_attention(h, layer, residual=cfg.residual)
    return h


def model_flops(cfg: ReasonConfig) -> int:
    """Exact MACs of one :func:`temporal_reason` forward pass (single clip)."""
    if cfg.variant != Variant.ATTENTION:
        raise ValidationError("model_flops is defined for the attention variant")
    T, D, N, M, S, L = cfg.T, cfg.D, cfg.N, cfg.M, cfg.S, cfg.L
    cross = N * M * S + 2 * T * D * S + 2 * N * T * S + N * S * M
    per_layer = 3 * N * M * S + 2 * N * N * S + N * S * M
    return cross + L * per_layer


@dataclass
class ConvWeights:
    spatial: Optional[Tensor] = None   # F x C x k x k       (2D+1)
    temporal: Optional[Tensor] = None  # F x F x kt          (2D+1)
    volume: Optional[Tensor] = None    # F x C x kt x k x k  (3D)


def _check_clip(clip: Tensor, C: int):
    if clip.ndim not in (4, 5) or clip.shape[-4] != C:
        raise ValidationError(f"clip must be (C={C}, T, H, W) or batched, got {clip.shape}")


def conv_2plus1_path(clip: Tensor, weights: ConvWeights) -> Tensor:
    """Per-frame 2D conv, spatial mean, 1D conv over time, temporal mean -> F features."""
    ks, kt = weights.spatial, weights.temporal
    _check_clip(clip, ks.shape[1])
    batched = clip.ndim == 5
    x = clip if batched else tn.reshape(clip, (1,) + clip.shape)
    B, C, T, H, W = x.shape
    frames = tn.reshape(tn.permute(x, (0, 2, 1, 3, 4)), (B * T, C, H, W))
    y = tn.conv2d(frames, ks, 1, ks.shape[-1] // 2)          # (B*T, F, H', W')
    y = tn.mean(tn.mean(y, -1), -1)                          # (B*T, F)
    F = ks.shape[0]
    y = tn.permute(tn.reshape(y, (B, T, F)), (0, 2, 1))     # (B, F, T)
    z = tn.conv1d_temporal(y, kt, 1, kt.shape[-1] // 2)     # (B, F, T')
    z = tn.mean(z, -1)
    return z if batched else tn.reshape(z, (z.shape[-1],))


def conv3d_path(clip: Tensor, weights: ConvWeights) -> Tensor:
    """3D conv over (T, H, W) then global mean -> F features."""
    k = weights.volume
    _check_clip(clip, k.shape[1])
    pad = (k.shape[2] // 2, k.shape[3] // 2, k.shape[4] // 2)
    y = tn.conv3d(clip, k, 1, pad)
    for _ in range(3):
        y = tn.mean(y, -1)
    return y


def separable_volume_kernel(spatial: np.ndarray, temporal: np.ndarray) -> np.ndarray:
    """3D kernel equal to a spatial conv (F x C x k x k) followed by a temporal conv (G x F x kt)."""
    return np.einsum("gft,fcij->gctij", np.asarray(temporal), np.asarray(spatial))


def classify(features: Tensor, head: HeadWeights, pool_latents: bool = False) -> Tensor:
    """Affine map to class logits; attention features (N x M) are mean-pooled over latents first."""
    if pool_latents:
        features = tn.mean(features, -2)
    if features.shape[-1] != head.w.shape[0]:
        raise ValidationError(f"feature width {features.shape[-1]} does not match head {head.w.shape}")
    if features.ndim == 1:
        return tn.reshape(tn.matmul(tn.reshape(features, (1, -1)), head.w), (-1,)) + head.b
    return tn.matmul(features, head.w) + head.b


class ReasonModel:
    """Frame embedding + temporal reasoning + classification head for one variant.

    Parameters are kept in a fixed declaration order; that order is the
    checkpoint layout.
    """

    def __init__(self, cfg: ReasonConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        shapes = param_shapes(cfg)
        if list(params) != list(shapes):
            raise ValidationError(f"parameter names {list(params)} do not match config layout {list(shapes)}")
        self.params = {}
        for name, shape in shapes.items():
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValidationError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"parameter {name} has non-finite entries")
            self.params[name] = Tensor(arr, requires_grad=True)

    def tensors(self) -> list[Tensor]:
        return list(self.params.values())

    def attention_weights(self) -> AttentionWeights:
        p = self.params
        layers = [SelfAttentionWeights(p[f"layer{i}.wq"], p[f"layer{i}.wk"], p[f"layer{i}.wv"], p[f"layer{i}.wo"])
                  for i in range(self.cfg.L)]
        return AttentionWeights(p["latents"], p["cross.wq"], p["cross.wk"], p["cross.wv"], p["cross.wo"], layers)

    def conv_weights(self) -> ConvWeights:
        p = self.params
        return ConvWeights(p.get("conv.spatial"), p.get("conv.temporal"), p.get("conv.volume"))

    def head(self) -> HeadWeights:
        return HeadWeights(self.params["head.w"], self.params["head.b"])

    def features(self, clips: Tensor) -> Tensor:
        """``clips``: (B, C, T, H, W) or (C, T, H, W)."""
        cfg = self.cfg
        if cfg.variant == Variant.ATTENTION:
            lead = clips.shape[:-4]
            frames = tn.permute(clips, tuple(range(len(lead))) + tuple(len(lead) + i for i in (1, 0, 2, 3)))
            frames = tn.reshape(frames, lead + (cfg.T, cfg.frame_features))
            emb = tn.matmul(frames, self.params["embed"])
            return temporal_reason(emb, cfg, self.attention_weights())
        if cfg.variant == Variant.CONV2PLUS1:
            return conv_2plus1_path(clips, self.conv_weights())
        return conv3d_path(clips, self.conv_weights())

    def logits(self, clips: Tensor) -> Tensor:
        return classify(self.features(clips), self.head(), pool_latents=self.cfg.variant == Variant.ATTENTION)


def param_shapes(cfg: ReasonConfig) -> dict[str, tuple[int, ...]]:
    F, C, k, kt = cfg.conv_filters, cfg.channels, cfg.spatial_kernel, cfg.temporal_kernel
    if cfg.variant == Variant.ATTENTION:
        shapes = {
            "embed": (cfg.frame_features, cfg.D),
            "latents": (cfg.N, cfg.M),
            "cross.wq": (cfg.M, cfg.S),
            "cross.wk": (cfg.D, cfg.S),
            "cross.wv": (cfg.D, cfg.S),
            "cross.wo": (cfg.S, cfg.M),
        }
        for i in range(cfg.L):
            shapes.update({f"layer{i}.wq": (cfg.M, cfg.S), f"layer{i}.wk": (cfg.M, cfg.S),
                           f"layer{i}.wv": (cfg.M, cfg.S), f"layer{i}.wo": (cfg.S, cfg.M)})
        feat = cfg.M
    elif cfg.variant == Variant.CONV2PLUS1:
        shapes = {"conv.spatial": (F, C, k, k), "conv.temporal": (F, F, kt)}
        feat = F
    else:
        shapes = {"conv.volume": (F, C, kt, k, k)}
        feat = F
    shapes.update({"head.w": (feat, cfg.num_classes), "head.b": (cfg.num_classes,)})
    return shapes


def init_model(cfg: ReasonConfig, seed: int = 0) -> ReasonModel:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name == "head.b":
            params[name] = np.zeros(shape)
        elif name == "latents":
            params[name] = rng.standard_normal(shape)
        else:
            fan_in = math.prod(shape[1:]) if name.startswith("conv.") else shape[0]
            params[name] = rng.standard_normal(shape) / math.sqrt(fan_in)
    return ReasonModel(cfg, params)


def separable_conv3d_from(model: ReasonModel) -> ReasonModel:
    """Conv3D model whose kernel factors exactly into ``model``'s (2D+1) kernels."""
    if model.cfg.variant != Variant.CONV2PLUS1:
        raise ValidationError("need a conv2plus1 model")
    cfg = ReasonConfig(**{**{f.name: getattr(model.cfg, f.name) for f in fields(model.cfg)},
                          "variant": Variant.CONV3D})
    p = model.params
    vol = separable_volume_kernel(p["conv.spatial"].data, p["conv.temporal"].data)
    return ReasonModel(cfg, {"conv.volume": vol, "head.w": p["head.w"].data, "head.b": p["head.b"].data})


def save_checkpoint(model: ReasonModel, path) -> None:
    """Header ``AZTR``, int32 version and config fields, then float64 weights; all little-endian."""
    values = model.cfg.header_values()
    blob = bytearray(CHECKPOINT_MAGIC)
    blob += struct.pack(f"<{len(values) + 1}i", CHECKPOINT_VERSION, *values)
    for t in model.params.values():
        blob += np.ascontiguousarray(t.data, dtype="<f8").tobytes()
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(path)


def load_checkpoint(path, expect: Optional[ReasonConfig] = None) -> ReasonModel:
    raw = Path(path).read_bytes()
    n_fields = len(fields(ReasonConfig))
    head_len = 4 + 4 * (n_fields + 1)
    if len(raw) < head_len or raw[:4] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not an AZTR checkpoint")
    version, *values = struct.unpack_from(f"<{n_fields + 1}i", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    kwargs = {}
    for f, v in zip(fields(ReasonConfig), values):
        kwargs[f.name] = bool(v) if f.type in ("bool", bool) else v
    cfg = ReasonConfig(**kwargs)
    if expect is not None and expect != cfg:
        raise ValidationError(f"{path}: checkpoint config {cfg} does not match requested {expect}")
    params, offset = {}, head_len
    for name, shape in param_shapes(cfg).items():
        n = math.prod(shape)
        if offset + 8 * n > len(raw):
            raise ValidationError(f"{path}: truncated at parameter {name}")
        params[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * n
    if offset != len(raw):
        raise ValidationError(f"{path}: {len(raw) - offset} trailing bytes")
    return ReasonModel(cfg, params)
