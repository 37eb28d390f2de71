"""Synthetic noisy video datasets with known ground truth.

Each video is a run of action segments (constant true label). Annotation noise
is injected either as contiguous bursts inside a segment, where a whole run of
frames gets one wrong label as a video-level annotator would produce, or
independently per frame. The simulated teacher puts its mass on the *true*
class, drawing each probability row from a Dirichlet whose concentration on the
true class is ``teacher_sharpness``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from dsdkit.errors import ConfigError
from dsdkit.trcl import PredictionTable


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_videos: int = 10
    frames_per_video: int = 200
    num_classes: int = 5
    noise_rate: float = 0.2
    burst_min: int = 5
    burst_max: int = 20
    segments_min: int = 1
    segments_max: int = 3
    teacher_sharpness: float = 4.0
    protected_class: Optional[int] = None
    noise_mode: str = "burst"   # or "iid"

    def __post_init__(self):
        if not 0 <= self.noise_rate < 1:
            raise ConfigError(f"noise_rate must lie in [0, 1), got {self.noise_rate}")
        if self.num_videos < 1 or self.frames_per_video < 1:
            raise ConfigError("need at least one video with one frame")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not 1 <= self.burst_min <= self.burst_max:
            raise ConfigError(f"invalid burst range ({self.burst_min}, {self.burst_max})")
        if not 1 <= self.segments_min <= self.segments_max:
            raise ConfigError(f"invalid segment range ({self.segments_min}, {self.segments_max})")
        if not self.teacher_sharpness > 0:
            raise ConfigError("teacher_sharpness must be > 0")
        if self.protected_class is not None and not 0 <= self.protected_class < self.num_classes:
            raise ConfigError(f"protected_class {self.protected_class} outside [0, {self.num_classes})")
        if self.protected_class is not None and self.num_classes < 3:
            raise ConfigError("a protected class needs at least two other classes to flip between")
        if self.noise_mode not in ("burst", "iid"):
            raise ConfigError(f"noise_mode must be 'burst' or 'iid', got {self.noise_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthDataset:
    table: PredictionTable
    true_labels: np.ndarray
    noise_mask: np.ndarray

    @property
    def noise_ids(self) -> set[int]:
        return set(self.table.sample_ids[self.noise_mask].tolist())


def _segments(rng: np.random.Generator, frames: int, cfg: SynthConfig) -> np.ndarray:
    count = int(rng.integers(cfg.segments_min, cfg.segments_max + 1))
    count = min(count, frames)
    cuts = np.sort(rng.choice(np.arange(1, frames), size=count - 1, replace=False)) if count > 1 else []
    bounds = [0, *map(int, cuts), frames]
    labels = np.empty(frames, dtype=np.int64)
    prev = -1
    for a, b in zip(bounds, bounds[1:]):
        choices = [c for c in range(cfg.num_classes) if c != prev]
        prev = int(rng.choice(choices))
        labels[a:b] = prev
    return labels


def _wrong_label(rng: np.random.Generator, true: int, cfg: SynthConfig) -> int:
    choices = [c for c in range(cfg.num_classes) if c != true and c != cfg.protected_class]
    return int(rng.choice(choices))


def _burst_noise(rng, true, noisy, mask, budget, cfg) -> None:
    frames = len(true)
    placed = 0
    attempts = 0
    while placed < budget and attempts < 50 * frames:
        attempts += 1
        length = min(int(rng.integers(cfg.burst_min, cfg.burst_max + 1)), budget - placed)
        if length > frames:
            continue
        start = int(rng.integers(0, frames - length + 1))
        span = slice(start, start + length)
        # a burst stays inside one segment and never touches an existing burst
        lo, hi = max(start - 1, 0), min(start + length + 1, frames)
        if mask[lo:hi].any() or np.any(true[span] != true[start]):
            continue
        noisy[span] = _wrong_label(rng, int(true[start]), cfg)
        mask[span] = True
        placed += length
    if placed < budget:
        # fragmented leftovers: flip single free frames so the budget is met exactly
        free = np.flatnonzero(~mask)
        for r in rng.permutation(free)[: budget - placed]:
            noisy[r] = _wrong_label(rng, int(true[r]), cfg)
            mask[r] = True


def synth_dataset(cfg: SynthConfig = SynthConfig()) -> SynthDataset:
    rng = np.random.default_rng(cfg.seed)
    m = cfg.num_classes
    true_all, noisy_all, mask_all, videos, frames = [], [], [], [], []
    for v in range(cfg.num_videos):
        true = _segments(rng, cfg.frames_per_video, cfg)
        noisy = true.copy()
        mask = np.zeros(cfg.frames_per_video, dtype=bool)
        budget = int(round(cfg.noise_rate * cfg.frames_per_video))
        if cfg.noise_mode == "burst":
            _burst_noise(rng, true, noisy, mask, budget, cfg)
        else:
            for r in rng.choice(cfg.frames_per_video, size=budget, replace=False):
                noisy[r] = _wrong_label(rng, int(true[r]), cfg)
                mask[r] = True
        true_all.append(true)
        noisy_all.append(noisy)
        mask_all.append(mask)
        videos.extend([f"v{v:03d}"] * cfg.frames_per_video)
        frames.append(np.arange(cfg.frames_per_video))
    true = np.concatenate(true_all)
    noisy = np.concatenate(noisy_all)
    mask = np.concatenate(mask_all)
    conc = np.ones((len(true), m)) + cfg.teacher_sharpness * np.eye(m)[true]
    probs = np.vstack([rng.dirichlet(row) for row in conc])
    table = PredictionTable(
        sample_ids=np.arange(len(true)),
        video_ids=tuple(videos),
        frame_idx=np.concatenate(frames),
        noisy_labels=noisy,
        probs=probs,
    )
    return SynthDataset(table, true, mask)
