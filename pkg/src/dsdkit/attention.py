"""Lightweight self-attention with strided depthwise downsampling of keys and values."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from dsdkit.errors import ConfigError, DimensionError
from dsdkit.tensor import DTYPE, depthwise_conv2d, linear, softmax_rows


@dataclass(frozen=True)
class LsaParams:
    q_weight: np.ndarray
    q_bias: np.ndarray
    k_weight: np.ndarray
    k_bias: np.ndarray
    v_weight: np.ndarray
    v_bias: np.ndarray
    out_weight: np.ndarray
    out_bias: np.ndarray
    position_bias: np.ndarray          # (heads, HW, HW / stride**2)
    heads: int
    stride: int = 1
    dw_weight: Optional[np.ndarray] = None   # (stride, stride, c); absent when stride == 1
    dw_bias: Optional[np.ndarray] = None

    def __post_init__(self):
        width = self.q_weight.shape[1]
        if self.heads < 1 or width % self.heads:
            raise ConfigError(f"{width} channels cannot be split into {self.heads} heads")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.stride > 1 and self.dw_weight is None:
            raise ConfigError("stride > 1 requires a downsampling kernel")

    @property
    def width(self) -> int:
        return self.q_weight.shape[1]

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    @classmethod
    def from_weights(cls, w: Mapping[str, np.ndarray], prefix: str, heads: int, stride: int) -> "LsaParams":
        kw = {}
        if stride > 1:
            kw = dict(dw_weight=w[f"{prefix}.dw.weight"], dw_bias=w[f"{prefix}.dw.bias"])
        return cls(
            q_weight=w[f"{prefix}.q.weight"], q_bias=w[f"{prefix}.q.bias"],
            k_weight=w[f"{prefix}.k.weight"], k_bias=w[f"{prefix}.k.bias"],
            v_weight=w[f"{prefix}.v.weight"], v_bias=w[f"{prefix}.v.bias"],
            out_weight=w[f"{prefix}.out.weight"], out_bias=w[f"{prefix}.out.bias"],
            position_bias=w[f"{prefix}.position_bias"],
            heads=heads,
            stride=stride,
            **kw,
        )

    @staticmethod
    def shapes(prefix: str, channels: int, heads: int, stride: int, height: int, width: int) -> dict[str, tuple[int, ...]]:
        c = channels
        tokens = height * width
        out: dict[str, tuple[int, ...]] = {}
        for name in ("q", "k", "v", "out"):
            out[f"{prefix}.{name}.weight"] = (c, c)
            out[f"{prefix}.{name}.bias"] = (c,)
        if stride > 1:
            out[f"{prefix}.dw.weight"] = (stride, stride, c)
            out[f"{prefix}.dw.bias"] = (c,)
        out[f"{prefix}.position_bias"] = (heads, tokens, tokens // (stride * stride))
        return out


def downsample_kv(x: np.ndarray, dw_weight: Optional[np.ndarray], stride: int,
                  dw_bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Reduce an ``(H, W, d)`` map to ``(H/k, W/k, d)`` with a stride-k depthwise k x k conv."""
    if x.ndim != 3:
        raise DimensionError(f"downsample_kv expects HxWxd, got {x.shape}")
    h, w, _ = x.shape
    if h % stride or w % stride:
        raise DimensionError(f"{h}x{w} map is not divisible by stride {stride}")
    if stride == 1:
        return x
    if dw_weight.shape[:2] != (stride, stride):
        raise DimensionError(f"downsampling kernel {dw_weight.shape} does not match stride {stride}")
    return depthwise_conv2d(x, dw_weight, dw_bias, stride=stride, pad=0)


def _project(x: np.ndarray, params: LsaParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-head ``(q, k, v)``: ``(heads, HW, d_k)``, ``(heads, M, d_k)``, ``(heads, M, d_k)``."""
    h, w, c = x.shape
    if c != params.width:
        raise DimensionError(f"lsa expects {params.width} channels, got {c}")
    nh, dk = params.heads, params.head_dim
    kv_src = downsample_kv(x, params.dw_weight, params.stride, params.dw_bias)
    tokens = x.reshape(h * w, c)
    kv_tokens = kv_src.reshape(-1, c)
    if params.position_bias.shape != (nh, tokens.shape[0], kv_tokens.shape[0]):
        raise DimensionError(
            f"position bias {params.position_bias.shape} does not fit "
            f"{(nh, tokens.shape[0], kv_tokens.shape[0])}"
        )
    q = linear(tokens, params.q_weight, params.q_bias).reshape(-1, nh, dk).transpose(1, 0, 2)
    k = linear(kv_tokens, params.k_weight, params.k_bias).reshape(-1, nh, dk).transpose(1, 0, 2)
    v = linear(kv_tokens, params.v_weight, params.v_bias).reshape(-1, nh, dk).transpose(1, 0, 2)
    return q, k, v


def _weights(q, k, bias, scale) -> np.ndarray:
    return softmax_rows(np.matmul(q, k.transpose(0, 2, 1)) * scale + bias)


def attention_weights(x: np.ndarray, params: LsaParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(weights, values)``: ``(heads, HW, M)`` probabilities and ``(heads, M, d_k)``."""
    q, k, v = _project(x, params)
    return _weights(q, k, params.position_bias, DTYPE(1.0 / math.sqrt(params.head_dim))), v


def lsa(x: np.ndarray, params: LsaParams, *, block_rows: int = 128) -> np.ndarray:
    """Multi-head attention over an ``(H, W, c)`` map; output has the same shape.

    Queries are processed ``block_rows`` at a time so the score buffer stays
    ``heads x block_rows x M`` instead of ``heads x HW x M``; every row still
    attends to all keys, so the result equals the unblocked computation.
    """
    if block_rows < 1:
        raise ConfigError(f"block_rows must be >= 1, got {block_rows}")
    h, w, c = x.shape
    q, k, v = _project(x, params)
    scale = DTYPE(1.0 / math.sqrt(params.head_dim))
    heads = np.empty_like(q)                               # (nh, HW, dk)
    for start in range(0, q.shape[1], block_rows):
        rows = slice(start, start + block_rows)
        heads[:, rows] = np.matmul(_weights(q[:, rows], k, params.position_bias[:, rows], scale), v)
    merged = heads.transpose(1, 0, 2).reshape(h * w, c)
    out = linear(merged, params.out_weight, params.out_bias)
    return out.reshape(h, w, c)


def attention_flops(tokens: int, channels: int, stride: int = 1) -> int:
    """Multiply count of the score matrix ``Q K^T``."""
    return tokens * (tokens // (stride * stride)) * channels
