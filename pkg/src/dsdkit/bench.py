"""Wall-clock scaling of the selective scan against full self-attention.

Both operators see the same token count ``L`` and channel width. The scan
consumes an ``(L, d)`` sequence; attention runs with stride 1 (no key/value
downsampling) on an ``H x W`` map with ``H * W = L``, using the most nearly
square factorization when ``L`` is not a perfect square.

Each timed sample loops the call enough times to last ``min_sample_s`` so that
sub-millisecond calls are not dominated by timer and scheduler jitter, and the
repeats are interleaved round-robin across all (op, length) cells so that a
slow stretch of the machine hits every cell instead of one. Timing runs under a
single BLAS thread.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from dsdkit.attention import LsaParams, attention_flops, lsa
from dsdkit.errors import ConfigError
from dsdkit.ssm import SsmParams, scan_flops, selective_scan
from dsdkit.tensor import DTYPE

WARMUP = 2
MIN_REPEATS = 5


@dataclass(frozen=True)
class Timing:
    op: str
    length: int
    grid: tuple[int, int]
    median_s: float
    min_s: float
    calls_per_sample: int
    flops: int


@dataclass
class BenchReport:
    timings: list[Timing]
    exponents: dict[str, float]
    doubling_ratios: dict[str, list[float]]
    width: int
    heads: int
    state_size: int
    repeats: int
    targets: dict[str, float] = field(default_factory=lambda: {"scan": 1.0, "attention": 2.0})

    def times(self, op: str) -> list[float]:
        return [t.median_s for t in self.timings if t.op == op]

    def to_dict(self) -> dict:
        return {
            "timings": [asdict(t) for t in self.timings],
            "exponents": self.exponents,
            "targets": self.targets,
            "doubling_ratios": self.doubling_ratios,
            "width": self.width,
            "heads": self.heads,
            "state_size": self.state_size,
            "repeats": self.repeats,
        }


def near_square(length: int) -> tuple[int, int]:
    """``(h, w)`` with ``h * w = length``, ``h <= w`` and ``w - h`` minimal."""
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}")
    h = math.isqrt(length)
    while length % h:
        h -= 1
    return h, length // h


def fit_exponent(lengths: Sequence[int], times: Sequence[float]) -> float:
    """Slope of the least-squares line through ``(log L, log t)``."""
    slope, _ = np.polyfit(np.log(lengths), np.log(times), 1)
    return float(slope)


def doubling_ratios(lengths: Sequence[int], times: Sequence[float]) -> list[float]:
    """Time growth per doubling of ``L`` between consecutive lengths."""
    return [
        (t1 / t0) ** (1.0 / math.log2(l1 / l0))
        for (l0, t0), (l1, t1) in zip(zip(lengths, times), zip(lengths[1:], times[1:]))
    ]


def _calibrate(fn: Callable[[], object], min_sample_s: float) -> int:
    for _ in range(WARMUP):
        fn()
    start = time.perf_counter()
    fn()
    once = time.perf_counter() - start
    return max(1, math.ceil(min_sample_s / max(once, 1e-9)))


def _sample(fn: Callable[[], object], calls: int) -> float:
    start = time.perf_counter()
    for _ in range(calls):
        fn()
    return (time.perf_counter() - start) / calls


def time_calls(
    fns: Sequence[Callable[[], object]], repeats: int, min_sample_s: float = 0.02
) -> list[tuple[float, float, int]]:
    """``(median, min, calls_per_sample)`` seconds per call for each function.

    Every function gets ``WARMUP`` untimed calls first; the timed repeats then
    cycle through all functions once per round.
    """
    calls = [_calibrate(fn, min_sample_s) for fn in fns]
    samples: list[list[float]] = [[] for _ in fns]
    for _ in range(repeats):
        for fn, n_calls, out in zip(fns, calls, samples):
            out.append(_sample(fn, n_calls))
    return [(float(np.median(s)), float(np.min(s)), c) for s, c in zip(samples, calls)]


def _scan_params(rng: np.random.Generator, width: int, state_size: int) -> SsmParams:
    def rnd(*shape):
        return (0.1 * rng.standard_normal(shape)).astype(DTYPE)

    a_log = np.log(np.tile(np.arange(1, state_size + 1, dtype=DTYPE), (width, 1)))
    return SsmParams(
        a_log=a_log,
        delta_weight=rnd(width, width), delta_bias=rnd(width),
        b_weight=rnd(width, state_size), b_bias=rnd(state_size),
        c_weight=rnd(width, state_size), c_bias=rnd(state_size),
        d_skip=np.ones(width, dtype=DTYPE),
    )


def _attention_params(rng: np.random.Generator, width: int, heads: int, length: int) -> LsaParams:
    def rnd(*shape):
        return (0.1 * rng.standard_normal(shape)).astype(DTYPE)

    return LsaParams(
        q_weight=rnd(width, width), q_bias=rnd(width),
        k_weight=rnd(width, width), k_bias=rnd(width),
        v_weight=rnd(width, width), v_bias=rnd(width),
        out_weight=rnd(width, width), out_bias=rnd(width),
        position_bias=rnd(heads, length, length),
        heads=heads, stride=1,
    )


def bench_scan_vs_attention(
    lengths: Sequence[int] = (256, 512, 1024),
    repeats: int = 9,
    *,
    width: int = 16,
    heads: int = 2,
    state_size: int = 16,
    seed: int = 0,
    min_sample_s: float = 0.05,
) -> BenchReport:
    lengths = [int(v) for v in lengths]
    if len(lengths) < 2:
        raise ConfigError("need at least two lengths to fit a growth exponent")
    if any(b <= a for a, b in zip(lengths, lengths[1:])) or lengths[0] < 1:
        raise ConfigError(f"lengths must be positive and strictly ascending, got {lengths}")
    if repeats < MIN_REPEATS:
        raise ConfigError(f"repeats must be >= {MIN_REPEATS}, got {repeats}")
    rng = np.random.default_rng(seed)
    scan_p = _scan_params(rng, width, state_size)
    cells = []
    for length in lengths:
        h, w = near_square(length)
        seq = rng.standard_normal((length, width)).astype(DTYPE)
        attn_p = _attention_params(rng, width, heads, length)
        cells.append((Timing("scan", length, (h, w), 0.0, 0.0, 0, scan_flops(length, state_size, width)),
                      lambda seq=seq: selective_scan(seq, scan_p)))
        cells.append((Timing("attention", length, (h, w), 0.0, 0.0, 0, attention_flops(length, width, 1)),
                      lambda grid=seq.reshape(h, w, width), p=attn_p: lsa(grid, p)))
    with threadpool_limits(limits=1):
        measured = time_calls([fn for _, fn in cells], repeats, min_sample_s)
    timings = [
        replace(cell, median_s=med, min_s=lo, calls_per_sample=calls)
        for (cell, _), (med, lo, calls) in zip(cells, measured)
    ]
    exponents, ratios = {}, {}
    for op in ("scan", "attention"):
        times = [t.median_s for t in timings if t.op == op]
        exponents[op] = fit_exponent(lengths, times)
        ratios[op] = doubling_ratios(lengths, times)
    return BenchReport(timings, exponents, ratios, width, heads, state_size, repeats)
