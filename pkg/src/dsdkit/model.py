"""DSDFormer forward inference: stem, four stages of hybrid blocks, projection head.

Weights live in a flat ``dict`` keyed by dotted component path, e.g.
``stages.1.blocks.0.dsda.lsa.q.weight``. :func:`param_shapes` is the single
source of truth for which paths exist; :func:`count_params` derives the same
total analytically.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from os import PathLike
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np

from dsdkit.attention import LsaParams, lsa
from dsdkit.errors import ConfigError, DimensionError, ValidationError
from dsdkit.ssm import MdmParams, mdm
from dsdkit.tensor import (
    DTYPE,
    as_tensor,
    conv2d,
    depthwise_conv2d,
    gelu,
    global_avg_pool,
    layer_norm,
    linear,
    load_tensor,
    save_tensor,
    se_gate,
    softmax_rows,
)

Weights = dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    image_size: tuple[int, int] = (64, 64)
    in_channels: int = 3
    num_classes: int = 10
    widths: tuple[int, ...] = (16, 32, 64, 128)
    depths: tuple[int, ...] = (1, 1, 2, 1)
    heads: tuple[int, ...] = (2, 4, 8, 16)
    strides: tuple[int, ...] = (8, 4, 2, 1)
    state_sizes: tuple[int, ...] = (16, 16, 16, 16)
    se_ratio: int = 4
    ffn_ratio: int = 4
    downsample: int = 2
    stem_width: Optional[int] = None
    head_hidden: Optional[int] = None
    se_sigmoid: bool = True
    gate_silu: bool = False
    exact_zoh: bool = False

    def __post_init__(self):
        for name in ("image_size", "widths", "depths", "heads", "strides", "state_sizes"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    @property
    def stem_channels(self) -> int:
        return self.stem_width if self.stem_width is not None else self.widths[0]

    @property
    def head_channels(self) -> int:
        return self.head_hidden if self.head_hidden is not None else self.widths[-1]

    @property
    def num_stages(self) -> int:
        return len(self.widths)

    def stage_resolution(self, stage: int) -> tuple[int, int]:
        # stem halves once, every stage entry halves again
        f = self.downsample ** (stage + 2)
        return self.image_size[0] // f, self.image_size[1] // f

    def validate(self) -> None:
        n = len(self.widths)
        if n < 1:
            raise ConfigError("at least one stage is required")
        for name in ("depths", "heads", "strides", "state_sizes"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} has {len(getattr(self, name))} entries, expected {n}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.in_channels < 1 or self.se_ratio < 1 or self.ffn_ratio < 1 or self.downsample < 1:
            raise ConfigError("channel counts and ratios must be positive")
        total = self.downsample ** (n + 1)
        h0, w0 = self.image_size
        if h0 % total or w0 % total:
            raise ConfigError(f"image {h0}x{w0} is not divisible by the cumulative stride {total}")
        for i, d in enumerate(self.widths):
            if d < 2 or d % 2:
                raise ConfigError(f"stage {i} width {d} must be even (channels are split in half)")
            if d % self.se_ratio:
                raise ConfigError(f"stage {i} width {d} is not divisible by se_ratio {self.se_ratio}")
            if (d // 2) % self.heads[i]:
                raise ConfigError(f"stage {i}: {d // 2} attention channels not divisible by {self.heads[i]} heads")
            if self.depths[i] < 0 or self.state_sizes[i] < 1 or self.strides[i] < 1:
                raise ConfigError(f"stage {i}: invalid depth/state size/stride")
            h, w = self.stage_resolution(i)
            if h % self.strides[i] or w % self.strides[i]:
                raise ConfigError(f"stage {i} resolution {h}x{w} not divisible by stride {self.strides[i]}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**dict(d))


def load_config(path: str | PathLike) -> ModelConfig:
    with open(path, encoding="utf-8") as fh:
        return ModelConfig.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# parameter layout
# --------------------------------------------------------------------------

def _conv_shapes(prefix: str, k: int, cin: int, cout: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.weight": (k, k, cin, cout), f"{prefix}.bias": (cout,)}


def _dw_shapes(prefix: str, k: int, c: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.weight": (k, k, c), f"{prefix}.bias": (c,)}


def _linear_shapes(prefix: str, cin: int, cout: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.weight": (cin, cout), f"{prefix}.bias": (cout,)}


def _se_shapes(prefix: str, d: int, r: int) -> dict[str, tuple[int, ...]]:
    out = _linear_shapes(f"{prefix}.fc1", d, d // r)
    out.update(_linear_shapes(f"{prefix}.fc2", d // r, d))
    return out


def _norm_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.gamma": (d,), f"{prefix}.beta": (d,)}


def block_shapes(prefix: str, cfg: ModelConfig, stage: int) -> dict[str, tuple[int, ...]]:
    d = cfg.widths[stage]
    half = d // 2
    inner = d * cfg.ffn_ratio
    h, w = cfg.stage_resolution(stage)
    out: dict[str, tuple[int, ...]] = {}
    out.update(_conv_shapes(f"{prefix}.scem.conv1", 3, d, d))
    out.update(_dw_shapes(f"{prefix}.scem.dw", 3, d))
    out.update(_se_shapes(f"{prefix}.scem.se", d, cfg.se_ratio))
    out.update(_conv_shapes(f"{prefix}.scem.conv2", 3, d, d))
    out.update(_norm_shapes(f"{prefix}.norm1", d))
    out.update(MdmParams.shapes(f"{prefix}.dsda.mdm", half, cfg.state_sizes[stage]))
    out.update(LsaParams.shapes(f"{prefix}.dsda.lsa", half, cfg.heads[stage], cfg.strides[stage], h, w))
    out.update(_dw_shapes(f"{prefix}.mbem.dw", 3, d))
    out.update(_se_shapes(f"{prefix}.mbem.se", d, cfg.se_ratio))
    out.update(_norm_shapes(f"{prefix}.norm2", d))
    out.update(_conv_shapes(f"{prefix}.lffn.conv1", 3, d, inner))
    out.update(_dw_shapes(f"{prefix}.lffn.dw", 3, inner))
    out.update(_conv_shapes(f"{prefix}.lffn.conv2", 3, inner, d))
    return out


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every weight path in allocation order, with its shape."""
    s = cfg.stem_channels
    out: dict[str, tuple[int, ...]] = {}
    out.update(_conv_shapes("stem.conv0", 3, cfg.in_channels, s))
    out.update(_conv_shapes("stem.conv1", 3, s, s))
    out.update(_conv_shapes("stem.conv2", 3, s, s))
    prev = s
    for i, d in enumerate(cfg.widths):
        out.update(_conv_shapes(f"stages.{i}.down", 3, prev, d))
        for b in range(cfg.depths[i]):
            out.update(block_shapes(f"stages.{i}.blocks.{b}", cfg, i))
        prev = d
    out.update(_linear_shapes("head.fc1", prev, cfg.head_channels))
    out.update(_linear_shapes("head.fc2", cfg.head_channels, cfg.num_classes))
    return out


def count_params(cfg: ModelConfig) -> int:
    """Closed-form parameter count (independent of :func:`param_shapes`)."""
    def conv(k, ci, co):
        return k * k * ci * co + co

    def dw(k, c):
        return k * k * c + c

    def lin(ci, co):
        return ci * co + co

    def se(d, r):
        return lin(d, d // r) + lin(d // r, d)

    s = cfg.stem_channels
    total = conv(3, cfg.in_channels, s) + 2 * conv(3, s, s)
    prev = s
    for i, d in enumerate(cfg.widths):
        total += conv(3, prev, d)
        c = d // 2
        n = cfg.state_sizes[i]
        k = cfg.strides[i]
        h, w = cfg.stage_resolution(i)
        tokens = h * w
        mdm_count = 2 * lin(c, c) + dw(3, c) + (c * n + lin(c, c) + 2 * lin(c, n) + c) + 2 * c
        lsa_count = 4 * lin(c, c) + (dw(k, c) if k > 1 else 0) + cfg.heads[i] * tokens * (tokens // (k * k))
        e = d * cfg.ffn_ratio
        block = (
            2 * conv(3, d, d) + dw(3, d) + se(d, cfg.se_ratio)      # SCEM
            + 2 * d                                                  # norm1
            + mdm_count + lsa_count                                  # DSDA
            + dw(3, d) + se(d, cfg.se_ratio)                         # MBEM
            + 2 * d                                                  # norm2
            + conv(3, d, e) + dw(3, e) + conv(3, e, d)               # LFFN
        )
        total += cfg.depths[i] * block
        prev = d
    total += lin(prev, cfg.head_channels) + lin(cfg.head_channels, cfg.num_classes)
    return total


def _fan_in(path: str, shapes: Mapping[str, tuple[int, ...]]) -> int:
    if path.endswith(".bias"):
        sibling = path[: -len(".bias")] + ".weight"
        if sibling in shapes:
            path = sibling
        else:
            return shapes[path][0]
    shape = shapes[path]
    if path.endswith("position_bias"):
        return shape[-1]
    if len(shape) == 4:       # conv: kh, kw, cin, cout
        return shape[0] * shape[1] * shape[2]
    if len(shape) == 3:       # depthwise: kh, kw, c
        return shape[0] * shape[1]
    return shape[0]


def init_weights(cfg: ModelConfig, seed: int = 0) -> Weights:
    """Seeded uniform(+-1/sqrt(fan_in)) init; LN gamma=1, beta=0; S4D-real A; D=1."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(cfg)
    out: Weights = {}
    for path, shape in shapes.items():
        if path.endswith(".gamma"):
            arr = np.ones(shape)
        elif path.endswith(".beta"):
            arr = np.zeros(shape)
        elif path.endswith(".a_log"):
            arr = np.broadcast_to(np.log(np.arange(1, shape[1] + 1)), shape)
        elif path.endswith(".ssm.d"):
            arr = np.ones(shape)
        else:
            bound = 1.0 / math.sqrt(_fan_in(path, shapes))
            arr = rng.uniform(-bound, bound, size=shape)
        out[path] = np.ascontiguousarray(arr, dtype=DTYPE)
    return out


def validate_weights(cfg: ModelConfig, weights: Mapping[str, np.ndarray]) -> None:
    expected = param_shapes(cfg)
    problems = []
    for path, shape in expected.items():
        if path not in weights:
            problems.append(f"missing {path} {shape}")
        elif tuple(weights[path].shape) != shape:
            problems.append(f"shape mismatch at {path}: got {tuple(weights[path].shape)}, expected {shape}")
    for path in weights:
        if path not in expected:
            problems.append(f"unexpected {path}")
    if problems:
        raise ValidationError("weights do not match config: " + "; ".join(problems))


# --------------------------------------------------------------------------
# block components
# --------------------------------------------------------------------------

def _se(x: np.ndarray, w: Mapping[str, np.ndarray], prefix: str, use_sigmoid: bool) -> np.ndarray:
    return se_gate(
        x,
        w[f"{prefix}.fc1.weight"], w[f"{prefix}.fc1.bias"],
        w[f"{prefix}.fc2.weight"], w[f"{prefix}.fc2.bias"],
        use_sigmoid=use_sigmoid,
    )


def _conv3(x, w, prefix, stride=1):
    return conv2d(x, w[f"{prefix}.weight"], w[f"{prefix}.bias"], stride=stride, pad=1)


def _dw3(x, w, prefix):
    return depthwise_conv2d(x, w[f"{prefix}.weight"], w[f"{prefix}.bias"], stride=1, pad=1)


def _ln(x, w, prefix):
    return layer_norm(x, w[f"{prefix}.gamma"], w[f"{prefix}.beta"])


def scem(x: np.ndarray, w: Mapping[str, np.ndarray], prefix: str = "scem", *, se_sigmoid: bool = True) -> np.ndarray:
    """Spatial-channel enhancement: ``Conv(SE(DW(Conv(x)))) + x``."""
    y = _conv3(x, w, f"{prefix}.conv1")
    y = _dw3(y, w, f"{prefix}.dw")
    y = _se(y, w, f"{prefix}.se", se_sigmoid)
    y = _conv3(y, w, f"{prefix}.conv2")
    return y + x


def mbem(x: np.ndarray, w: Mapping[str, np.ndarray], prefix: str = "mbem", *, se_sigmoid: bool = True) -> np.ndarray:
    """Multi-branch enhancement: ``DW(x) + SE(x) + x``."""
    return _dw3(x, w, f"{prefix}.dw") + _se(x, w, f"{prefix}.se", se_sigmoid) + x


def lffn(x: np.ndarray, w: Mapping[str, np.ndarray], prefix: str = "lffn") -> np.ndarray:
    """Lightweight FFN: ``Conv(F(Conv(x)))`` with ``F(z) = DW(z) + z``."""
    y = _conv3(x, w, f"{prefix}.conv1")
    y = _dw3(y, w, f"{prefix}.dw") + y
    return _conv3(y, w, f"{prefix}.conv2")


def dsda(
    x: np.ndarray,
    w: Mapping[str, np.ndarray],
    prefix: str = "dsda",
    *,
    heads: int,
    stride: int,
    gate_silu: bool = False,
    exact_zoh: bool = False,
) -> np.ndarray:
    """Channel-split hybrid: first half through MDM, second half through LSA, concatenated."""
    d = x.shape[-1]
    if d % 2:
        raise ConfigError(f"DSDA needs an even channel count, got {d}")
    half = d // 2
    left = mdm(
        np.ascontiguousarray(x[..., :half]),
        MdmParams.from_weights(w, f"{prefix}.mdm"),
        gate_silu=gate_silu,
        exact_zoh=exact_zoh,
    )
    right = lsa(
        np.ascontiguousarray(x[..., half:]),
        LsaParams.from_weights(w, f"{prefix}.lsa", heads, stride),
    )
    return np.concatenate([left, right], axis=-1)


def dsdformer_block(
    x: np.ndarray,
    w: Mapping[str, np.ndarray],
    prefix: str,
    *,
    heads: int,
    stride: int,
    se_sigmoid: bool = True,
    gate_silu: bool = False,
    exact_zoh: bool = False,
) -> np.ndarray:
    y = scem(x, w, f"{prefix}.scem", se_sigmoid=se_sigmoid)
    z = dsda(
        _ln(y, w, f"{prefix}.norm1"), w, f"{prefix}.dsda",
        heads=heads, stride=stride, gate_silu=gate_silu, exact_zoh=exact_zoh,
    ) + mbem(y, w, f"{prefix}.mbem", se_sigmoid=se_sigmoid)
    return lffn(_ln(z, w, f"{prefix}.norm2"), w, f"{prefix}.lffn") + z


def stem(image: np.ndarray, w: Mapping[str, np.ndarray], prefix: str = "stem") -> np.ndarray:
    """Stride-2 conv then two stride-1 convs, each followed by GELU."""
    x = gelu(_conv3(image, w, f"{prefix}.conv0", stride=2))
    x = gelu(_conv3(x, w, f"{prefix}.conv1"))
    return gelu(_conv3(x, w, f"{prefix}.conv2"))


def projection_head(x: np.ndarray, w: Mapping[str, np.ndarray], prefix: str = "head") -> np.ndarray:
    """Per-pixel linear, global average pool, final linear -> logits."""
    y = linear(x, w[f"{prefix}.fc1.weight"], w[f"{prefix}.fc1.bias"])
    return linear(global_avg_pool(y), w[f"{prefix}.fc2.weight"], w[f"{prefix}.fc2.bias"])


Trace = Callable[[str, tuple[int, ...]], None]


def forward(
    image: np.ndarray,
    cfg: ModelConfig,
    weights: Mapping[str, np.ndarray],
    *,
    trace: Optional[Trace] = None,
    validate: bool = True,
) -> np.ndarray:
    """Class probabilities for one ``(H0, W0, C)`` image."""
    if validate:
        validate_weights(cfg, weights)
    image = as_tensor(image)
    expected = (*cfg.image_size, cfg.in_channels)
    if image.shape != expected:
        raise DimensionError(f"image shape {image.shape} does not match config {expected}")

    def note(label, arr):
        if trace is not None:
            trace(label, tuple(arr.shape))

    x = stem(image, weights)
    note("stem", x)
    for i in range(cfg.num_stages):
        x = gelu(_conv3(x, weights, f"stages.{i}.down", stride=cfg.downsample))
        note(f"stages.{i}.down", x)
        for b in range(cfg.depths[i]):
            x = dsdformer_block(
                x, weights, f"stages.{i}.blocks.{b}",
                heads=cfg.heads[i], stride=cfg.strides[i],
                se_sigmoid=cfg.se_sigmoid, gate_silu=cfg.gate_silu, exact_zoh=cfg.exact_zoh,
            )
            note(f"stages.{i}.blocks.{b}", x)
    logits = projection_head(x, weights)
    note("head", logits)
    return softmax_rows(logits)


# --------------------------------------------------------------------------
# weight directories
# --------------------------------------------------------------------------

MANIFEST = "manifest.json"


def save_weights(directory: str | PathLike, weights: Mapping[str, np.ndarray]) -> None:
    """Write one DSD1 file per path plus a manifest of paths and shapes."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for path, arr in weights.items():
        fname = f"{path}.dsd"
        save_tensor(root / fname, arr)
        entries.append({"path": path, "shape": list(arr.shape), "file": fname})
    (root / MANIFEST).write_text(json.dumps({"format": "DSD1", "params": entries}, indent=1) + "\n", encoding="utf-8")


def load_weights(directory: str | PathLike) -> Weights:
    root = Path(directory)
    manifest = json.loads((root / MANIFEST).read_text(encoding="utf-8"))
    out: Weights = {}
    for entry in manifest["params"]:
        arr = load_tensor(root / entry["file"])
        if list(arr.shape) != list(entry["shape"]):
            raise ValidationError(f"{entry['path']}: file shape {arr.shape} != manifest {entry['shape']}")
        out[entry["path"]] = arr
    return out
