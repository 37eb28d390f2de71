"""Fast self-check of the installed build: oracle agreement and core invariants.

Each check is a plain function that raises ``AssertionError`` on failure; any
other exception also counts as a failure. The suite is deterministic for a
given seed and runs in a few seconds.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from dsdkit import evalmetrics, io, oracles, trcl
from dsdkit.attention import LsaParams, attention_weights, lsa
from dsdkit.model import ModelConfig, count_params, forward, init_weights, param_shapes, scem
from dsdkit.ssm import SsmParams, direction_orders, selective_scan, ssm_recurrence_oracle
from dsdkit.tensor import DTYPE, tensor_from_bytes, tensor_to_bytes

SCAN_RTOL = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float


def random_ssm(rng: np.random.Generator, d_inner: int, state_size: int) -> SsmParams:
    def rnd(*shape, scale=0.5):
        return (scale * rng.standard_normal(shape)).astype(DTYPE)

    return SsmParams(
        a_log=rnd(d_inner, state_size),
        delta_weight=rnd(d_inner, d_inner), delta_bias=rnd(d_inner),
        b_weight=rnd(d_inner, state_size), b_bias=rnd(state_size),
        c_weight=rnd(d_inner, state_size), c_bias=rnd(state_size),
        d_skip=rnd(d_inner),
    )


def scan_reference(x: np.ndarray, p: SsmParams, exact_zoh: bool = False) -> np.ndarray:
    """Selective scan assembled from the per-channel float64 recurrence."""
    x64 = x.astype(np.float64)

    def proj(w, b):
        return x64 @ w.astype(np.float64) + b.astype(np.float64)

    delta = np.logaddexp(0.0, proj(p.delta_weight, p.delta_bias))
    b, c = proj(p.b_weight, p.b_bias), proj(p.c_weight, p.c_bias)
    a = -np.exp(p.a_log.astype(np.float64))
    out = np.empty_like(x64)
    for ch in range(x.shape[1]):
        a_bar = np.exp(delta[:, ch:ch + 1] * a[ch])
        if exact_zoh:
            b_bar = np.expm1(delta[:, ch:ch + 1] * a[ch]) / a[ch] * b
        else:
            b_bar = delta[:, ch:ch + 1] * b
        out[:, ch] = ssm_recurrence_oracle(x64[:, ch], a_bar, b_bar, c, float(p.d_skip[ch]))
    return out


def normwise_error(y: np.ndarray, ref: np.ndarray) -> float:
    return float(np.max(np.abs(y - ref)) / max(np.max(np.abs(ref)), 1e-30))


def scan_oracle_sweep(cases: int, seed: int = 0) -> float:
    """Worst normwise relative error of ``selective_scan`` over random small configs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        length = int(rng.integers(1, 65))
        state = int(rng.integers(1, 17))
        d_inner = int(rng.integers(1, 9))
        p = random_ssm(rng, d_inner, state)
        x = rng.standard_normal((length, d_inner)).astype(DTYPE)
        worst = max(worst, normwise_error(selective_scan(x, p), scan_reference(x, p)))
    return worst


def random_table(rng: np.random.Generator, n: int, m: int, videos: int = 3) -> trcl.PredictionTable:
    """Random table with every class present; rows are Dirichlet draws, labels uniform."""
    labels = np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)])
    rng.shuffle(labels)
    probs = rng.dirichlet(np.full(m, 0.7), size=n)
    vids = rng.integers(0, videos, size=n)
    frames = np.zeros(n, dtype=np.int64)
    for v in range(videos):
        rows = np.flatnonzero(vids == v)
        frames[rows] = np.sort(rng.choice(4 * n, size=rows.size, replace=False))
    return trcl.PredictionTable(
        np.arange(n) * 3 + 7, tuple(f"vid{v}" for v in vids), frames, labels, probs,
    )


def _flag_map(flags) -> dict[int, int]:
    return {f.sample_id: f.suggested_label for f in flags}


# --------------------------------------------------------------------------
# checks
# --------------------------------------------------------------------------

def check_scan_oracle(seed: int) -> str:
    worst = scan_oracle_sweep(30, seed)
    assert worst <= SCAN_RTOL, f"scan deviates from the recurrence oracle by {worst:.2e}"
    return f"worst normwise error {worst:.2e}"


def check_direction_orders(seed: int) -> str:
    rng = np.random.default_rng(seed)
    h, w = (int(v) for v in rng.integers(1, 9, size=2))
    orders = direction_orders(h, w)
    for k, o in enumerate(orders):
        assert sorted(o.tolist()) == list(range(h * w)), f"direction {k} is not a permutation"
    return f"{h}x{w}"


def check_attention(seed: int) -> str:
    rng = np.random.default_rng(seed)
    c, heads, side = 8, 2, 4

    def rnd(*s):
        return rng.standard_normal(s).astype(DTYPE)

    p = LsaParams(rnd(c, c), rnd(c), rnd(c, c), rnd(c), rnd(c, c), rnd(c), rnd(c, c), rnd(c),
                  rnd(heads, side * side, side * side), heads=heads)
    x = rnd(side, side, c)
    weights, _ = attention_weights(x, p)
    assert np.allclose(weights.sum(-1), 1.0, atol=1e-5), "attention rows do not sum to 1"
    full = lsa(x, p, block_rows=side * side)
    blocked = lsa(x, p, block_rows=3)
    err = normwise_error(blocked, full)
    assert err <= 1e-5, f"row-blocked attention differs by {err:.2e}"
    return f"rows stochastic, blocking error {err:.1e}"


def check_tensor_roundtrip(seed: int) -> str:
    rng = np.random.default_rng(seed)
    for rank in range(1, 5):
        x = rng.standard_normal(tuple(int(v) for v in rng.integers(1, 5, size=rank))).astype(DTYPE)
        y = tensor_from_bytes(tensor_to_bytes(x))
        assert y.shape == x.shape and np.array_equal(y, x), f"rank {rank} round trip failed"
    return "ranks 1-4"


def check_model(seed: int) -> str:
    cfg = ModelConfig(image_size=(32, 32), widths=(8, 16, 16, 32), depths=(1, 1, 1, 1),
                      heads=(1, 2, 2, 4), strides=(2, 2, 1, 1), num_classes=4)
    assert count_params(cfg) == sum(int(np.prod(s)) for s in param_shapes(cfg).values()), \
        "closed-form parameter count differs from the enumeration"
    w = init_weights(cfg, seed)
    img = np.random.default_rng(seed).standard_normal((32, 32, 3)).astype(DTYPE)
    a, b = forward(img, cfg, w), forward(img, cfg, w)
    assert np.array_equal(a, b), "forward is not deterministic"
    assert abs(float(a.sum()) - 1.0) <= 1e-6, f"probabilities sum to {a.sum()}"
    zero = {k: np.zeros_like(v) for k, v in w.items()}
    x = np.random.default_rng(seed + 1).standard_normal((8, 8, 8)).astype(DTYPE)
    prefix = "stages.0.blocks.0.scem"
    assert np.array_equal(scem(x, zero, prefix), x), "zero-weight SCEM is not the identity"
    return f"{count_params(cfg)} params"


def check_confident_learning(seed: int) -> str:
    rng = np.random.default_rng(seed)
    for _ in range(10):
        m = int(rng.integers(2, 6))
        table = random_table(rng, int(rng.integers(m + 5, 60)), m)
        t = trcl.compute_thresholds(table)
        c = trcl.build_confusion(table, t)
        q = trcl.joint_distribution_exact(c, table.class_counts())
        assert sum(v for row in q for v in row) == 1, "joint does not sum to 1"
        brute = oracles.brute_strategies(table)
        for s in (1, 2, 3, 4):
            got = _flag_map(trcl.identify_noise(table, t, c, trcl.CleaningConfig(strategy=s)))
            assert got == brute[s], f"strategy {s} differs from brute force"
    return "10 tables, strategies 1-4"


def check_trcl_invariants(seed: int) -> str:
    table = random_table(np.random.default_rng(seed), 120, 4)
    cfg = trcl.CleaningConfig(alpha=0.0, protected_classes=frozenset({0}))
    assert trcl.trcl_pipeline(table, cfg).flagged == trcl.plain_cl(table, cfg).flagged, \
        "alpha = 0 does not reduce to plain confident learning"
    report = trcl.trcl_pipeline(table, trcl.CleaningConfig(protected_classes=frozenset({0})))
    assert all(f.noisy_label != 0 for f in report.flagged), "a protected sample was flagged"
    assert all(f.suggested_label != f.noisy_label for f in report.flagged), "suggestion equals label"
    perm = np.random.default_rng(seed).permutation(table.n)
    again = trcl.trcl_pipeline(table.take(perm), trcl.CleaningConfig(protected_classes=frozenset({0})))
    assert again.flagged_ids == report.flagged_ids, "row order changes the flagged set"
    adjusted = trcl.temporal_adjust(table, report.flagged, 0.1)
    assert np.all(adjusted.probs >= table.probs), "temporal adjustment decreased a probability"
    return f"{len(report.flagged)} flagged"


def check_metrics(seed: int) -> str:
    rng = np.random.default_rng(seed)
    for _ in range(100):
        m = int(rng.integers(2, 6))
        n = int(rng.integers(1, 40))
        preds, labels = rng.integers(0, m, n), rng.integers(0, m, n)
        got = evalmetrics.classification_report(preds, labels, m)
        ref = oracles.brute_classification(preds.tolist(), labels.tolist(), m)
        assert got.acc == ref["acc"], "accuracy differs from brute force"
        for k, c in enumerate(got.per_class):
            r = ref["per_class"][k]
            assert (c.pre, c.rec, c.f1) == (r["pre"], r["rec"], r["f1"]), f"class {k} differs"
    return "100 cases"


def check_file_roundtrips(seed: int) -> str:
    table = random_table(np.random.default_rng(seed), 60, 3)
    report = trcl.trcl_pipeline(table)
    with tempfile.TemporaryDirectory() as tmp:
        csv_a, csv_b = Path(tmp, "a.csv"), Path(tmp, "b.csv")
        io.save_predictions_csv(table, csv_a)
        io.save_predictions_csv(io.load_predictions_csv(csv_a), csv_b)
        assert csv_a.read_bytes() == csv_b.read_bytes(), "CSV round trip is not byte-identical"
        rep_a, rep_b = Path(tmp, "a.json"), Path(tmp, "b.json")
        io.save_noise_report(report, rep_a)
        io.save_noise_report(io.load_noise_report(rep_a), rep_b)
        assert rep_a.read_bytes() == rep_b.read_bytes(), "report round trip is not byte-identical"
    return "CSV and JSON"


CHECKS: dict[str, Callable[[int], str]] = {
    "scan_oracle": check_scan_oracle,
    "direction_orders": check_direction_orders,
    "attention": check_attention,
    "tensor_roundtrip": check_tensor_roundtrip,
    "model": check_model,
    "confident_learning": check_confident_learning,
    "trcl_invariants": check_trcl_invariants,
    "metrics": check_metrics,
    "file_roundtrips": check_file_roundtrips,
}


def run_checks(seed: int = 0, names: Optional[list[str]] = None) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS.items():
        if names and name not in names:
            continue
        start = time.perf_counter()
        try:
            detail, ok = fn(seed), True
        except AssertionError as exc:
            detail, ok = str(exc) or "assertion failed", False
        except Exception as exc:  # a crash is a failed check, not a crashed suite
            detail, ok = f"{type(exc).__name__}: {exc}", False
        results.append(CheckResult(name, ok, detail, time.perf_counter() - start))
    return results
