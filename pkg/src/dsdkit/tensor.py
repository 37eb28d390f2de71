"""Dense float32 numerics and the neural-network primitives the model is built from.

Feature maps are channels-last: a map is an ``(H, W, C)`` array and a token
sequence is ``(L, C)``. Weight layouts:

* linear: ``(in, out)`` so that ``y = x @ W + b``
* conv2d: ``(kh, kw, c_in, c_out)``
* depthwise conv: ``(kh, kw, c)``

Tensors travel on disk in the ``DSD1`` binary format (see :func:`save_tensor`).
"""

from __future__ import annotations

import struct
from os import PathLike
from typing import Optional

import numpy as np

from dsdkit.errors import DimensionError, NumericError, ParseError, ConfigError

DTYPE = np.float32
MAGIC = b"DSD1"
MAX_RANK = 4


def as_tensor(x) -> np.ndarray:
    """Coerce ``x`` to a C-contiguous float32 array of rank 1-4."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if not 1 <= arr.ndim <= MAX_RANK:
        raise DimensionError(f"tensor rank must be 1..{MAX_RANK}, got {arr.ndim}")
    if 0 in arr.shape:
        raise DimensionError(f"tensor dims must be >= 1, got {arr.shape}")
    return arr


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    return np.logaddexp(DTYPE(0.0), x).astype(DTYPE)


def silu(x: np.ndarray) -> np.ndarray:
    return (x * sigmoid(x)).astype(DTYPE)


def gelu(x: np.ndarray) -> np.ndarray:
    """Tanh approximation of GELU."""
    x = np.asarray(x, dtype=DTYPE)
    c = DTYPE(np.sqrt(2.0 / np.pi))
    return (0.5 * x * (1.0 + np.tanh(c * (x + DTYPE(0.044715) * x**3)))).astype(DTYPE)


# --------------------------------------------------------------------------
# dense algebra
# --------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects matrices, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return a @ b


def linear(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Apply ``x @ weight + bias`` over the last axis of ``x``."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input width {x.shape[-1]} does not match weight {weight.shape}"
        )
    y = np.matmul(x, weight)
    if bias is not None:
        y = y + bias
    return y.astype(DTYPE, copy=False)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    m = np.asarray(m, dtype=DTYPE)
    if not np.all(np.isfinite(m)):
        raise NumericError("softmax_rows received non-finite entries")
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Normalize over the channel (last) axis, then scale by gamma and shift by beta.

    Statistics are taken in float64: a float32 mean of a large constant row is
    off by an ulp, and dividing that residue by ``sqrt(eps)`` is not small.
    """
    x = np.asarray(x, dtype=DTYPE).astype(np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return ((x - mean) / np.sqrt(var + eps) * gamma + beta).astype(DTYPE)


# --------------------------------------------------------------------------
# convolutions and pooling
# --------------------------------------------------------------------------

def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    if stride < 1 or pad < 0:
        raise DimensionError(f"invalid stride {stride} / pad {pad}")
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < kh or wp < kw:
        raise DimensionError(f"input {h}x{w} (pad {pad}) smaller than kernel {kh}x{kw}")
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Return the (Ho, Wo, C, kh, kw) view of all kernel windows."""
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(0, 1))
    return view[::stride, ::stride]


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Dense 2-D convolution (cross-correlation) with zero padding."""
    if x.ndim != 3 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects HxWxC input and 4-D weight, got {x.shape}, {weight.shape}")
    kh, kw, cin, _ = weight.shape
    if x.shape[2] != cin:
        raise DimensionError(f"conv2d: input has {x.shape[2]} channels, weight expects {cin}")
    _conv_geometry(x.shape[0], x.shape[1], kh, kw, stride, pad)
    win = _windows(x, kh, kw, stride, pad)  # Ho, Wo, cin, kh, kw
    y = np.einsum("hwcij,ijco->hwo", win, weight, optimize=True)
    if bias is not None:
        y = y + bias
    return np.ascontiguousarray(y, dtype=DTYPE)


def depthwise_conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Per-channel 2-D convolution; the channel count is preserved."""
    if x.ndim != 3 or weight.ndim != 3:
        raise DimensionError(f"depthwise_conv2d expects HxWxC input and 3-D weight, got {x.shape}, {weight.shape}")
    kh, kw, c = weight.shape
    if x.shape[2] != c:
        raise DimensionError(f"depthwise_conv2d: input has {x.shape[2]} channels, weight has {c}")
    _conv_geometry(x.shape[0], x.shape[1], kh, kw, stride, pad)
    win = _windows(x, kh, kw, stride, pad)
    y = np.einsum("hwcij,ijc->hwc", win, weight, optimize=True)
    if bias is not None:
        y = y + bias
    return np.ascontiguousarray(y, dtype=DTYPE)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the two spatial axes of an ``(H, W, C)`` map."""
    if x.ndim != 3:
        raise DimensionError(f"global_avg_pool expects HxWxC, got {x.shape}")
    return x.mean(axis=(0, 1), dtype=np.float64).astype(DTYPE)


def se_gate(
    x: np.ndarray,
    fc1_weight: np.ndarray,
    fc1_bias: Optional[np.ndarray],
    fc2_weight: np.ndarray,
    fc2_bias: Optional[np.ndarray],
    *,
    use_sigmoid: bool = True,
) -> np.ndarray:
    """Squeeze-excitation: scale each channel by a gate computed from its global mean.

    ``fc1`` maps ``d -> d/r`` and ``fc2`` maps ``d/r -> d``. With ``use_sigmoid``
    the gate lies in (0, 1); without it the raw FC output is used as the scale.
    """
    d = x.shape[-1]
    if fc1_weight.shape[0] != d or fc2_weight.shape[1] != d or fc1_weight.shape[1] != fc2_weight.shape[0]:
        raise ConfigError(
            f"SE weights {fc1_weight.shape}, {fc2_weight.shape} do not fit {d} channels"
        )
    pooled = global_avg_pool(x)
    gate = linear(linear(pooled, fc1_weight, fc1_bias), fc2_weight, fc2_bias)
    if use_sigmoid:
        gate = sigmoid(gate)
    return (x * gate).astype(DTYPE)


# --------------------------------------------------------------------------
# DSD1 tensor files
# --------------------------------------------------------------------------

def tensor_to_bytes(x) -> bytes:
    """Serialize: magic, u32 rank, rank x u32 dims, f32 payload (all little-endian)."""
    arr = as_tensor(x)
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4").tobytes(order="C")


def tensor_from_bytes(buf: bytes, *, source=None) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise ParseError("missing DSD1 magic", path=source)
    (rank,) = struct.unpack_from("<I", buf, 4)
    if not 1 <= rank <= MAX_RANK:
        raise ParseError(f"unsupported rank {rank}", path=source)
    off = 8 + 4 * rank
    if len(buf) < off:
        raise ParseError("truncated header", path=source)
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    if any(d < 1 for d in dims):
        raise ParseError(f"zero-sized dim in {dims}", path=source)
    count = int(np.prod(dims))
    if len(buf) - off != 4 * count:
        raise ParseError(
            f"payload has {len(buf) - off} bytes, expected {4 * count} for shape {dims}",
            path=source,
        )
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    return data.astype(DTYPE).reshape(dims)


def save_tensor(path: str | PathLike, x) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(x))


def load_tensor(path: str | PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read(), source=path)
