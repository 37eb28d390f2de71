import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsdkit import io
from dsdkit.errors import ConfigError
from dsdkit.synth import SynthConfig, synth_dataset


def runs(mask):
    """Lengths of the contiguous True runs of a boolean vector."""
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    edges = np.flatnonzero(np.diff(padded))
    return (edges[1::2] - edges[::2]).tolist()


def test_zero_noise():
    ds = synth_dataset(SynthConfig(noise_rate=0.0, num_videos=2, frames_per_video=50))
    assert np.array_equal(ds.table.noisy_labels, ds.true_labels) and not ds.noise_mask.any()


def test_seeded_output_is_byte_identical():
    a = io.format_predictions_csv(synth_dataset(SynthConfig(seed=7)).table)
    b = io.format_predictions_csv(synth_dataset(SynthConfig(seed=7)).table)
    assert a == b
    assert a != io.format_predictions_csv(synth_dataset(SynthConfig(seed=8)).table)


def test_default_benchmark_shape_and_noise_fraction():
    ds = synth_dataset(SynthConfig())
    t = ds.table
    assert (t.n, t.m) == (2000, 5)
    assert len(set(t.video_ids)) == 10
    assert ds.noise_mask.sum() == 400
    t.check_stochastic()


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.sampled_from(["burst", "iid"]), st.floats(0.0, 0.4))
def test_mask_marks_exactly_the_wrong_labels(seed, mode, rate):
    ds = synth_dataset(SynthConfig(seed=seed, num_videos=3, frames_per_video=60, noise_rate=rate, noise_mode=mode))
    assert np.array_equal(ds.noise_mask, ds.table.noisy_labels != ds.true_labels)
    assert ds.noise_ids == set(ds.table.sample_ids[ds.noise_mask].tolist())


def test_bursts_are_contiguous_single_label_runs():
    cfg = SynthConfig(seed=3)
    ds = synth_dataset(cfg)
    per = cfg.frames_per_video
    lengths = []
    for v in range(cfg.num_videos):
        rows = slice(v * per, (v + 1) * per)
        mask = ds.noise_mask[rows]
        lengths += runs(mask)
        noisy, true = ds.table.noisy_labels[rows], ds.true_labels[rows]
        for r in np.flatnonzero(mask):
            if r > 0 and mask[r - 1]:
                assert noisy[r] == noisy[r - 1] and true[r] == true[r - 1]
    assert np.median(lengths) >= cfg.burst_min


def test_teacher_follows_true_labels():
    ds = synth_dataset(SynthConfig(seed=1))
    agree = np.mean(np.argmax(ds.table.probs, axis=1) == ds.true_labels)
    noisy_agree = np.mean(np.argmax(ds.table.probs, axis=1)[ds.noise_mask] == ds.table.noisy_labels[ds.noise_mask])
    assert agree > 0.6 and noisy_agree < 0.3


def test_protected_class_never_receives_noise():
    ds = synth_dataset(SynthConfig(seed=2, protected_class=0))
    assert not np.any(ds.table.noisy_labels[ds.noise_mask] == 0)


@pytest.mark.parametrize("bad", [
    dict(noise_rate=1.0), dict(noise_rate=-0.1), dict(num_classes=1), dict(burst_min=5, burst_max=2),
    dict(teacher_sharpness=0.0), dict(protected_class=9), dict(noise_mode="pink"), dict(num_videos=0),
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        SynthConfig(**bad)
