"""State-space core: ZOH discretization, the selective scan, and the multi-direction Mamba branch.

The continuous system is diagonal. For a channel ``c`` with state size ``N``::

    h_k = exp(delta_k * A_c) * h_{k-1} + delta_k * B_k * x_k
    y_k = C_k . h_k + D_c * x_k

where ``delta_k = softplus(x_k W_delta + b_delta)`` and ``B_k``, ``C_k`` are linear
functions of the token ``x_k`` (the "selective" part). ``A = -exp(a_log)`` keeps
every pole strictly inside the unit circle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from dsdkit.errors import DimensionError, DomainError, NumericError
from dsdkit.tensor import (
    DTYPE,
    depthwise_conv2d,
    layer_norm,
    linear,
    silu,
    softplus,
)

NUM_DIRECTIONS = 4


@dataclass(frozen=True)
class SsmParams:
    """Selective-scan parameters for ``d_inner`` channels and state size ``N``."""

    a_log: np.ndarray          # (d_inner, N); A = -exp(a_log)
    delta_weight: np.ndarray   # (d_inner, d_inner)
    delta_bias: np.ndarray     # (d_inner,)
    b_weight: np.ndarray       # (d_inner, N)
    b_bias: np.ndarray         # (N,)
    c_weight: np.ndarray       # (d_inner, N)
    c_bias: np.ndarray         # (N,)
    d_skip: np.ndarray         # (d_inner,)

    @property
    def a(self) -> np.ndarray:
        return -np.exp(self.a_log).astype(DTYPE)

    @property
    def d_inner(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_size(self) -> int:
        return self.a_log.shape[1]

    @classmethod
    def from_weights(cls, w: Mapping[str, np.ndarray], prefix: str) -> "SsmParams":
        return cls(
            a_log=w[f"{prefix}.a_log"],
            delta_weight=w[f"{prefix}.delta.weight"],
            delta_bias=w[f"{prefix}.delta.bias"],
            b_weight=w[f"{prefix}.b.weight"],
            b_bias=w[f"{prefix}.b.bias"],
            c_weight=w[f"{prefix}.c.weight"],
            c_bias=w[f"{prefix}.c.bias"],
            d_skip=w[f"{prefix}.d"],
        )

    @staticmethod
    def shapes(prefix: str, d_inner: int, state_size: int) -> dict[str, tuple[int, ...]]:
        return {
            f"{prefix}.a_log": (d_inner, state_size),
            f"{prefix}.delta.weight": (d_inner, d_inner),
            f"{prefix}.delta.bias": (d_inner,),
            f"{prefix}.b.weight": (d_inner, state_size),
            f"{prefix}.b.bias": (state_size,),
            f"{prefix}.c.weight": (d_inner, state_size),
            f"{prefix}.c.bias": (state_size,),
            f"{prefix}.d": (d_inner,),
        }


def discretize_zoh(a_diag, b, delta, *, exact: bool = False):
    """Zero-order-hold discretization of a diagonal system.

    Returns ``(a_bar, b_bar)`` with ``a_bar = exp(delta * a)``. By default
    ``b_bar = delta * b`` (first-order approximation); ``exact=True`` uses
    ``(exp(delta * a) - 1) / a * b`` instead.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(~(delta > 0)):
        raise DomainError(f"ZOH step size must be positive, got {delta}")
    a_diag = np.asarray(a_diag, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a_bar = np.exp(delta * a_diag)
    if exact:
        b_bar = np.expm1(delta * a_diag) / a_diag * b
    else:
        b_bar = delta * b
    return a_bar, b_bar


def ssm_recurrence_oracle(x, a_bar, b_bar, c, d) -> list[float]:
    """Reference single-channel recurrence, stepped one token at a time in float64.

    ``x`` has length ``L``; ``a_bar``, ``b_bar``, ``c`` are length-``L`` sequences of
    ``N``-vectors (or a single ``N``-vector reused at every step); ``d`` is a scalar.
    """
    n_steps = len(x)

    def per_step(p):
        p = np.asarray(p, dtype=np.float64)
        return [p] * n_steps if p.ndim == 1 else list(p)

    a_bar, b_bar, c = per_step(a_bar), per_step(b_bar), per_step(c)
    state_size = len(a_bar[0])
    h = [0.0] * state_size
    out = []
    for k in range(n_steps):
        xk = float(x[k])
        h = [float(a_bar[k][s]) * h[s] + float(b_bar[k][s]) * xk for s in range(state_size)]
        out.append(math.fsum(float(c[k][s]) * h[s] for s in range(state_size)) + float(d) * xk)
    return out


def scan_projections(x: np.ndarray, params: SsmParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-token ``(delta, B, C)``: shapes ``(L, d_inner)``, ``(L, N)``, ``(L, N)``."""
    delta = softplus(linear(x, params.delta_weight, params.delta_bias))
    b = linear(x, params.b_weight, params.b_bias)
    c = linear(x, params.c_weight, params.c_bias)
    for name, arr in (("delta", delta), ("B", b), ("C", c)):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"selective scan projection {name} is not finite")
    return delta, b, c


def selective_scan(x: np.ndarray, params: SsmParams, *, exact_zoh: bool = False) -> np.ndarray:
    """Input-dependent scan over an ``(L, d_inner)`` sequence; cost is linear in ``L``."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != params.d_inner:
        raise DimensionError(f"selective_scan expects (L, {params.d_inner}), got {x.shape}")
    delta, b, c = scan_projections(x, params)
    a = params.a  # (D, N)
    delta_a = delta[:, :, None] * a[None, :, :]
    a_bar = np.exp(delta_a)
    if exact_zoh:
        b_bar = np.expm1(delta_a) / a[None] * b[:, None, :]
    else:
        b_bar = delta[:, :, None] * b[:, None, :]
    drive = b_bar * x[:, :, None]  # (L, D, N)

    # the only sequential part: one fused multiply-add per token
    states = np.empty_like(drive)
    h = np.zeros(drive.shape[1:], dtype=DTYPE)
    for t in range(x.shape[0]):
        h = a_bar[t] * h + drive[t]
        states[t] = h
    y = np.einsum("ldn,ln->ld", states, c) + x * params.d_skip
    return y.astype(DTYPE)


# --------------------------------------------------------------------------
# multi-direction flattening
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionalSequences:
    """Four token orderings of an ``(H, W, C)`` map.

    ``orders[k][t]`` is the row-major flat index of the cell visited at step ``t``
    of direction ``k``; ``sequences[k]`` is the ``(HW, C)`` token sequence.
    """

    height: int
    width: int
    orders: tuple[np.ndarray, ...]
    sequences: tuple[np.ndarray, ...]

    def unflatten(self, direction: int, seq: np.ndarray) -> np.ndarray:
        out = np.empty((self.height * self.width, seq.shape[-1]), dtype=seq.dtype)
        out[self.orders[direction]] = seq
        return out.reshape(self.height, self.width, -1)


def direction_orders(height: int, width: int) -> tuple[np.ndarray, ...]:
    """Row-major, reversed row-major, column-major, reversed column-major."""
    grid = np.arange(height * width).reshape(height, width)
    rows = grid.ravel()
    cols = grid.T.ravel()
    return (rows, rows[::-1].copy(), cols, cols[::-1].copy())


def multi_direction_flatten(x: np.ndarray) -> DirectionalSequences:
    if x.ndim != 3:
        raise DimensionError(f"multi_direction_flatten expects HxWxC, got {x.shape}")
    h, w, c = x.shape
    flat = x.reshape(h * w, c)
    orders = direction_orders(h, w)
    return DirectionalSequences(h, w, orders, tuple(flat[o] for o in orders))


def vssm(x: np.ndarray, params: SsmParams, *, exact_zoh: bool = False) -> np.ndarray:
    """Scan the map along four directions with shared params and average the results."""
    seqs = multi_direction_flatten(np.asarray(x, dtype=DTYPE))
    total = np.zeros(x.shape, dtype=DTYPE)
    for k, seq in enumerate(seqs.sequences):
        total += seqs.unflatten(k, selective_scan(seq, params, exact_zoh=exact_zoh))
    return total / DTYPE(NUM_DIRECTIONS)


# --------------------------------------------------------------------------
# multi-direction Mamba
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MdmParams:
    gate_weight: np.ndarray    # (c, c)
    gate_bias: np.ndarray
    in_weight: np.ndarray      # (c, c)
    in_bias: np.ndarray
    dw_weight: np.ndarray      # (3, 3, c)
    dw_bias: np.ndarray
    ssm: SsmParams
    norm_gamma: np.ndarray
    norm_beta: np.ndarray

    @classmethod
    def from_weights(cls, w: Mapping[str, np.ndarray], prefix: str) -> "MdmParams":
        return cls(
            gate_weight=w[f"{prefix}.gate.weight"],
            gate_bias=w[f"{prefix}.gate.bias"],
            in_weight=w[f"{prefix}.in_proj.weight"],
            in_bias=w[f"{prefix}.in_proj.bias"],
            dw_weight=w[f"{prefix}.dw.weight"],
            dw_bias=w[f"{prefix}.dw.bias"],
            ssm=SsmParams.from_weights(w, f"{prefix}.ssm"),
            norm_gamma=w[f"{prefix}.norm.gamma"],
            norm_beta=w[f"{prefix}.norm.beta"],
        )

    @staticmethod
    def shapes(prefix: str, channels: int, state_size: int) -> dict[str, tuple[int, ...]]:
        c = channels
        out = {
            f"{prefix}.gate.weight": (c, c),
            f"{prefix}.gate.bias": (c,),
            f"{prefix}.in_proj.weight": (c, c),
            f"{prefix}.in_proj.bias": (c,),
            f"{prefix}.dw.weight": (3, 3, c),
            f"{prefix}.dw.bias": (c,),
        }
        out.update(SsmParams.shapes(f"{prefix}.ssm", c, state_size))
        out[f"{prefix}.norm.gamma"] = (c,)
        out[f"{prefix}.norm.beta"] = (c,)
        return out


def mdm(
    x: np.ndarray,
    params: MdmParams,
    *,
    gate_silu: bool = False,
    exact_zoh: bool = False,
) -> np.ndarray:
    """``gate(x) * LN(VSSM(DW(in_proj(x))))`` on an ``(H, W, c)`` map."""
    if x.ndim != 3 or x.shape[2] != params.gate_weight.shape[0]:
        raise DimensionError(
            f"mdm expects HxWx{params.gate_weight.shape[0]}, got {x.shape}"
        )
    gate = linear(x, params.gate_weight, params.gate_bias)
    if gate_silu:
        gate = silu(gate)
    branch = linear(x, params.in_weight, params.in_bias)
    branch = depthwise_conv2d(branch, params.dw_weight, params.dw_bias, stride=1, pad=1)
    branch = vssm(branch, params.ssm, exact_zoh=exact_zoh)
    branch = layer_norm(branch, params.norm_gamma, params.norm_beta)
    return (gate * branch).astype(DTYPE)


def scan_flops(length: int, state_size: int, channels: int) -> int:
    """Multiply count of the recurrence: one per (token, channel, state) cell."""
    return length * state_size * channels
