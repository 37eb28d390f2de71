import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsdkit.errors import DimensionError, DomainError, NumericError
from dsdkit.ssm import (
    MdmParams,
    SsmParams,
    direction_orders,
    discretize_zoh,
    mdm,
    multi_direction_flatten,
    scan_flops,
    selective_scan,
    ssm_recurrence_oracle,
    vssm,
)
from dsdkit.tensor import DTYPE, depthwise_conv2d, layer_norm, linear
from dsdkit.verify import normwise_error, random_ssm, scan_oracle_sweep, scan_reference


# discretization ---------------------------------------------------------------

def test_zoh_examples():
    a_bar, _ = discretize_zoh([-1.0], [1.0], math.log(2.0))
    assert a_bar[0] == pytest.approx(0.5)
    _, b_bar = discretize_zoh([-3.0], [2.0], 0.1)
    assert b_bar[0] == pytest.approx(0.2)


def test_zoh_small_step_limit():
    a_bar, b_bar = discretize_zoh([-1.0, -5.0], [1.0, 2.0], 1e-9)
    assert np.allclose(a_bar, 1.0) and np.allclose(b_bar, 0.0, atol=1e-8)


@pytest.mark.parametrize("delta", [0.0, -0.1, float("nan")])
def test_zoh_rejects_nonpositive_step(delta):
    with pytest.raises(DomainError):
        discretize_zoh([-1.0], [1.0], delta)


@given(st.floats(-5, -0.01), st.floats(-3, 3), st.floats(1e-4, 1e-2))
def test_exact_zoh_agrees_with_approximation_to_first_order(a, b, delta):
    _, approx = discretize_zoh([a], [b], delta)
    _, exact = discretize_zoh([a], [b], delta, exact=True)
    # exact = (e^{da} - 1)/a * b = d b (1 + d a / 2 + ...)
    assert abs(exact[0] - approx[0]) <= abs(b) * delta**2 * abs(a)


def test_exact_zoh_matches_integral():
    a, b, delta = -2.0, 1.5, 0.7
    _, exact = discretize_zoh([a], [b], delta, exact=True)
    steps = 20000
    integral = sum(math.exp(a * (k + 0.5) * delta / steps) for k in range(steps)) * delta / steps
    assert exact[0] == pytest.approx(integral * b, rel=1e-7)


# recurrence oracle ------------------------------------------------------------

def test_oracle_hand_recurrence():
    assert ssm_recurrence_oracle([1.0, 1.0], [0.5], [1.0], [1.0], 0.0) == [1.0, 1.5]


def test_oracle_zero_input_and_single_step():
    assert ssm_recurrence_oracle([0.0] * 5, [0.9, 0.1], [1.0, 2.0], [3.0, 4.0], 2.0) == [0.0] * 5
    (y,) = ssm_recurrence_oracle([2.0], [0.3, 0.4], [1.0, -1.0], [0.5, 2.0], 0.25)
    assert y == pytest.approx((0.5 * 1.0 - 2.0 * 1.0) * 2.0 + 0.25 * 2.0)


# selective scan -----------------------------------------------------------------

def test_scan_zero_input_gives_zero(rng):
    p = random_ssm(rng, 3, 4)
    assert not selective_scan(np.zeros((7, 3), DTYPE), p).any()


def test_scan_single_step_closed_form(rng):
    p = random_ssm(rng, 2, 3)
    x = rng.standard_normal((1, 2)).astype(DTYPE)
    x64 = x.astype(np.float64)
    delta = np.logaddexp(0, x64 @ p.delta_weight + p.delta_bias)[0]
    b = (x64 @ p.b_weight + p.b_bias)[0]
    c = (x64 @ p.c_weight + p.c_bias)[0]
    expected = [float(c @ (delta[ch] * b) * x64[0, ch] + p.d_skip[ch] * x64[0, ch]) for ch in range(2)]
    assert np.allclose(selective_scan(x, p)[0], expected, rtol=1e-5, atol=1e-6)


def test_scan_l32_n8_matches_oracle(rng):
    p = random_ssm(rng, 4, 8)
    x = rng.standard_normal((32, 4)).astype(DTYPE)
    assert normwise_error(selective_scan(x, p), scan_reference(x, p)) <= 1e-5


@given(st.integers(1, 64), st.integers(1, 16), st.integers(1, 8), st.integers(0, 2**31), st.booleans())
def test_scan_matches_oracle(length, state, d_inner, seed, exact):
    r = np.random.default_rng(seed)
    p = random_ssm(r, d_inner, state)
    x = r.standard_normal((length, d_inner)).astype(DTYPE)
    y = selective_scan(x, p, exact_zoh=exact)
    assert normwise_error(y, scan_reference(x, p, exact_zoh=exact)) <= 1e-5


def test_scan_oracle_sweep_fixed_seed():
    assert scan_oracle_sweep(20, seed=7) <= 1e-5


@given(st.integers(2, 30), st.integers(0, 2**31))
def test_scan_is_causal(length, seed):
    r = np.random.default_rng(seed)
    p = random_ssm(r, 3, 4)
    x = r.standard_normal((length, 3)).astype(DTYPE)
    cut = length // 2
    x2 = x.copy()
    x2[cut:] = r.standard_normal((length - cut, 3))
    assert np.array_equal(selective_scan(x, p)[:cut], selective_scan(x2, p)[:cut])


def test_scan_stable_on_long_sequence(rng):
    p = random_ssm(rng, 2, 4)
    x = rng.uniform(-1, 1, size=(10_000, 2)).astype(DTYPE)
    y = selective_scan(x, p)
    assert np.all(np.isfinite(y))


def test_scan_state_bound_with_constant_step():
    # make delta and B constant so the geometric bound max|b x| / (1 - a_bar) applies directly
    d, n = 1, 2
    p = SsmParams(
        a_log=np.zeros((d, n), DTYPE),                       # A = -1
        delta_weight=np.zeros((d, d), DTYPE), delta_bias=np.zeros(d, DTYPE),
        b_weight=np.zeros((d, n), DTYPE), b_bias=np.ones(n, DTYPE),
        c_weight=np.zeros((d, n), DTYPE), c_bias=np.array([1.0, 0.0], DTYPE),
        d_skip=np.zeros(d, DTYPE),
    )
    x = np.ones((5000, 1), DTYPE)
    y = selective_scan(x, p)
    delta = math.log(2.0)
    bound = delta / (1 - math.exp(-delta))
    assert np.all(np.abs(y) <= bound + 1e-4)
    assert y[-1, 0] == pytest.approx(bound, rel=1e-5)


def test_scan_shape_and_numeric_errors(rng):
    p = random_ssm(rng, 3, 2)
    with pytest.raises(DimensionError):
        selective_scan(np.ones((4, 2)), p)
    with np.errstate(invalid="ignore"), pytest.raises(NumericError):
        selective_scan(np.full((4, 3), np.inf), p)


def test_scan_flops():
    assert scan_flops(1024, 16, 8) == 1024 * 16 * 8


# directions and vssm ----------------------------------------------------------

def test_direction_orders_2x2():
    assert [o.tolist() for o in direction_orders(2, 2)] == [[0, 1, 2, 3], [3, 2, 1, 0], [0, 2, 1, 3], [3, 1, 2, 0]]


def test_flatten_1x1_is_degenerate():
    x = np.arange(3, dtype=DTYPE).reshape(1, 1, 3)
    seqs = multi_direction_flatten(x)
    assert all(np.array_equal(s, x.reshape(1, 3)) for s in seqs.sequences)


@given(st.integers(1, 9), st.integers(1, 9))
def test_flatten_round_trip(h, w):
    x = np.random.default_rng(h * 10 + w).standard_normal((h, w, 2)).astype(DTYPE)
    seqs = multi_direction_flatten(x)
    for k, o in enumerate(seqs.orders):
        assert sorted(o.tolist()) == list(range(h * w))
        assert np.array_equal(seqs.unflatten(k, seqs.sequences[k]), x)


def test_vssm_shape_and_1x1(rng):
    p = random_ssm(rng, 3, 4)
    x = rng.standard_normal((3, 5, 3)).astype(DTYPE)
    assert vssm(x, p).shape == x.shape
    px = x[:1, :1]
    assert np.allclose(vssm(px, p)[0, 0], selective_scan(px.reshape(1, 3), p)[0], atol=1e-6)


def test_vssm_2x2_equals_average_of_oracle_scans(rng):
    p = random_ssm(rng, 2, 3)
    x = rng.standard_normal((2, 2, 2)).astype(DTYPE)
    flat = x.reshape(4, 2)
    total = np.zeros((4, 2))
    for order in ([0, 1, 2, 3], [3, 2, 1, 0], [0, 2, 1, 3], [3, 1, 2, 0]):
        ys = scan_reference(flat[order], p)
        total[order] += ys
    assert np.allclose(vssm(x, p), (total / 4).reshape(2, 2, 2), rtol=1e-5, atol=1e-6)


# mdm ------------------------------------------------------------------------------

def _random_mdm(r, c, n):
    def rnd(*s):
        return r.standard_normal(s).astype(DTYPE) * 0.5
    return MdmParams(rnd(c, c), rnd(c), rnd(c, c), rnd(c), rnd(3, 3, c), rnd(c), random_ssm(r, c, n),
                     1 + rnd(c), rnd(c))


def test_mdm_zero_gate_gives_zero(rng):
    p = _random_mdm(rng, 2, 3)
    p = MdmParams(np.zeros_like(p.gate_weight), np.zeros_like(p.gate_bias), *[getattr(p, f) for f in
                  ("in_weight", "in_bias", "dw_weight", "dw_bias", "ssm", "norm_gamma", "norm_beta")])
    assert not mdm(rng.standard_normal((3, 3, 2)).astype(DTYPE), p).any()


def test_mdm_2x2x2_compositional(rng):
    p = _random_mdm(rng, 2, 3)
    x = rng.standard_normal((2, 2, 2)).astype(DTYPE)
    gate = x.astype(np.float64) @ p.gate_weight + p.gate_bias
    branch = depthwise_conv2d(linear(x, p.in_weight, p.in_bias), p.dw_weight, p.dw_bias, pad=1)
    flat = branch.reshape(4, 2)
    total = np.zeros((4, 2))
    for order in ([0, 1, 2, 3], [3, 2, 1, 0], [0, 2, 1, 3], [3, 1, 2, 0]):
        total[order] += scan_reference(flat[order], p.ssm)
    scanned = (total / 4).reshape(2, 2, 2)
    mu = scanned.mean(-1, keepdims=True)
    var = scanned.var(-1, keepdims=True)
    normed = (scanned - mu) / np.sqrt(var + 1e-5) * p.norm_gamma + p.norm_beta
    got = mdm(x, p)
    assert got.shape == x.shape
    assert np.allclose(got, gate * normed, rtol=1e-4, atol=1e-4)


def test_mdm_silu_gate_changes_output(rng):
    p = _random_mdm(rng, 2, 3)
    x = rng.standard_normal((2, 2, 2)).astype(DTYPE)
    assert not np.allclose(mdm(x, p), mdm(x, p, gate_silu=True))


def test_mdm_rejects_wrong_width(rng):
    with pytest.raises(DimensionError):
        mdm(np.ones((2, 2, 3), DTYPE), _random_mdm(rng, 2, 3))
