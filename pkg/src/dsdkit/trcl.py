"""Confident learning with temporal reasoning over video frames.

Pipeline for a table of teacher probabilities ``p`` and (possibly wrong) labels:

1. per-class thresholds ``t_j``: mean ``p_j`` over samples labelled ``j``
2. confusion counts ``C[i, j]``: samples labelled ``i`` whose argmax class ``j``
   also clears ``t_j``
3. joint ``Q``: ``C`` row-normalised, scaled by class size, normalised to sum 1
4. flag samples with one of four strategies
5. boost the suggested class on the neighbouring frames of every flagged frame,
   then repeat steps 1-4 on the boosted probabilities

Counts that depend on ``Q`` are computed in exact rational arithmetic so that the
selection sizes never depend on float summation order.

Teacher probabilities should come from out-of-sample predictions (e.g. k-fold
cross-validation); the pipeline takes them as given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from dsdkit.errors import ConfigError, DegenerateInputError, DomainError, ValidationError

STOCHASTIC_TOL = 1e-4
STRATEGIES = (1, 2, 3, 4)
COMBINE_MODES = ("intersection", "union")
ROUNDING_RULES = ("half_away", "half_even")


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictionTable:
    """``n`` frames with their video, frame index, noisy label and ``m`` class probabilities."""

    sample_ids: np.ndarray     # (n,) int64, unique
    video_ids: tuple[str, ...]
    frame_idx: np.ndarray      # (n,) int64, unique within a video
    noisy_labels: np.ndarray   # (n,) int64 in [0, m)
    probs: np.ndarray          # (n, m) float64

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", np.asarray(self.sample_ids, dtype=np.int64))
        object.__setattr__(self, "video_ids", tuple(str(v) for v in self.video_ids))
        object.__setattr__(self, "frame_idx", np.asarray(self.frame_idx, dtype=np.int64))
        object.__setattr__(self, "noisy_labels", np.asarray(self.noisy_labels, dtype=np.int64))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))
        self.validate()

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    @property
    def m(self) -> int:
        return self.probs.shape[1]

    def validate(self) -> None:
        n = len(self.sample_ids)
        if self.probs.ndim != 2 or self.probs.shape[0] != n:
            raise ValidationError(f"probs shape {self.probs.shape} does not match {n} samples")
        if self.probs.shape[1] < 2:
            raise ValidationError("at least two classes are required")
        if not (len(self.video_ids) == len(self.frame_idx) == len(self.noisy_labels) == n):
            raise ValidationError("column lengths differ")
        if len(np.unique(self.sample_ids)) != n:
            raise ValidationError("sample ids are not unique")
        if np.any((self.noisy_labels < 0) | (self.noisy_labels >= self.m)):
            bad = int(np.flatnonzero((self.noisy_labels < 0) | (self.noisy_labels >= self.m))[0])
            raise ValidationError(f"row {bad}: label {self.noisy_labels[bad]} outside [0, {self.m})")
        if not np.all(np.isfinite(self.probs)) or np.any(self.probs < 0):
            bad = int(np.flatnonzero(~np.all(np.isfinite(self.probs) & (self.probs >= 0), axis=1))[0])
            raise ValidationError(f"row {bad}: probabilities must be finite and non-negative")
        seen: dict[tuple[str, int], int] = {}
        for row, key in enumerate(zip(self.video_ids, self.frame_idx.tolist())):
            if key in seen:
                raise ValidationError(f"row {row}: duplicate frame {key[1]} in video {key[0]!r}")
            seen[key] = row

    def check_stochastic(self, tol: float = STOCHASTIC_TOL) -> None:
        """Raise if any probability row is more than ``tol`` away from summing to 1."""
        off = np.abs(self.probs.sum(axis=1) - 1.0)
        if np.any(off > tol):
            bad = int(np.flatnonzero(off > tol)[0])
            raise ValidationError(f"row {bad}: probabilities sum to {self.probs[bad].sum():.6f}")

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.noisy_labels, minlength=self.m)

    def with_probs(self, probs: np.ndarray) -> "PredictionTable":
        return replace(self, probs=probs)

    def with_labels(self, labels: np.ndarray) -> "PredictionTable":
        return replace(self, noisy_labels=labels)

    def take(self, rows: Sequence[int]) -> "PredictionTable":
        rows = np.asarray(rows, dtype=np.int64)
        return PredictionTable(
            self.sample_ids[rows],
            tuple(self.video_ids[r] for r in rows),
            self.frame_idx[rows],
            self.noisy_labels[rows],
            self.probs[rows],
        )

    def temporal_neighbors(self) -> tuple[np.ndarray, np.ndarray]:
        """Row index of the previous / next frame in the same video (-1 where absent)."""
        prev = np.full(self.n, -1, dtype=np.int64)
        nxt = np.full(self.n, -1, dtype=np.int64)
        by_video: dict[str, list[int]] = {}
        for row, vid in enumerate(self.video_ids):
            by_video.setdefault(vid, []).append(row)
        for rows in by_video.values():
            rows.sort(key=lambda r: self.frame_idx[r])
            for a, b in zip(rows, rows[1:]):
                nxt[a] = b
                prev[b] = a
        return prev, nxt


@dataclass(frozen=True)
class CleaningConfig:
    strategy: int = 4
    combine_mode: str = "intersection"
    alpha: float = 0.1
    iterations: int = 1
    protected_classes: frozenset[int] = frozenset()
    rounding: str = "half_away"

    def __post_init__(self):
        object.__setattr__(self, "protected_classes", frozenset(int(c) for c in self.protected_classes))
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy}")
        if self.combine_mode not in COMBINE_MODES:
            raise ConfigError(f"combine_mode must be one of {COMBINE_MODES}, got {self.combine_mode!r}")
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ConfigError(f"alpha must be a finite number >= 0, got {self.alpha}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.rounding not in ROUNDING_RULES:
            raise ConfigError(f"rounding must be one of {ROUNDING_RULES}, got {self.rounding!r}")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "combine_mode": self.combine_mode,
            "alpha": self.alpha,
            "iterations": self.iterations,
            "protected_classes": sorted(self.protected_classes),
            "rounding": self.rounding,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CleaningConfig":
        d = dict(d)
        d["protected_classes"] = frozenset(d.get("protected_classes", ()))
        return cls(**d)


@dataclass(frozen=True)
class Flag:
    sample_id: int
    noisy_label: int
    suggested_label: int
    margin: float    # p[suggested] - p[noisy] in the pass that produced the flag


@dataclass
class CLPass:
    """One confident-learning pass: diagnostics plus the flagged set."""

    thresholds: np.ndarray
    confusion: np.ndarray
    joint: np.ndarray
    flagged: list[Flag]


@dataclass
class NoiseReport:
    flagged: list[Flag]
    thresholds: np.ndarray
    confusion: np.ndarray
    joint: np.ndarray
    config: CleaningConfig
    iterations: list[int] = field(default_factory=list)   # flagged count per pass, initial pass first

    @property
    def flagged_ids(self) -> set[int]:
        return {f.sample_id for f in self.flagged}

    def to_dict(self) -> dict:
        return {
            "flagged": [
                {
                    "sample_id": f.sample_id,
                    "noisy_label": f.noisy_label,
                    "suggested_label": f.suggested_label,
                    "margin": f.margin,
                }
                for f in self.flagged
            ],
            "thresholds": [float(v) for v in self.thresholds],
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "joint": [[float(v) for v in row] for row in self.joint],
            "config": self.config.to_dict(),
            "iterations": [{"flagged_count": c} for c in self.iterations],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseReport":
        return cls(
            flagged=[
                Flag(int(f["sample_id"]), int(f["noisy_label"]), int(f["suggested_label"]), float(f["margin"]))
                for f in d["flagged"]
            ],
            thresholds=np.asarray(d["thresholds"], dtype=np.float64),
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            joint=np.asarray(d["joint"], dtype=np.float64),
            config=CleaningConfig.from_dict(d["config"]),
            iterations=[int(it["flagged_count"]) for it in d["iterations"]],
        )


# --------------------------------------------------------------------------
# confident-learning statistics
# --------------------------------------------------------------------------

def _exact_mean(values: Iterable[float]) -> float:
    total = Fraction(0)
    count = 0
    for v in values:
        total += Fraction(v)
        count += 1
    return float(total / count)


def compute_thresholds(table: PredictionTable) -> np.ndarray:
    """``t_j`` = average of ``p_j`` over the samples labelled ``j``.

    The mean is exact (then rounded once), so it does not depend on row order.
    """
    t = np.empty(table.m, dtype=np.float64)
    for j in range(table.m):
        rows = np.flatnonzero(table.noisy_labels == j)
        if rows.size == 0:
            raise ValidationError(f"class {j} has no labelled samples; its threshold is undefined")
        t[j] = _exact_mean(table.probs[rows, j].tolist())
    return t


def confident_classes(table: PredictionTable, thresholds: np.ndarray) -> np.ndarray:
    """Argmax class per sample when it clears its threshold, else -1.

    ``np.argmax`` returns the first maximum, i.e. ties go to the lowest index.
    """
    top = np.argmax(table.probs, axis=1)
    ok = table.probs[np.arange(table.n), top] >= thresholds[top]
    return np.where(ok, top, -1)


def build_confusion(table: PredictionTable, thresholds: np.ndarray) -> np.ndarray:
    conf = confident_classes(table, thresholds)
    counted = conf >= 0
    c = np.zeros((table.m, table.m), dtype=np.int64)
    np.add.at(c, (table.noisy_labels[counted], conf[counted]), 1)
    return c


def joint_distribution_exact(confusion: np.ndarray, class_counts: Sequence[int]) -> list[list[Fraction]]:
    """Rational-valued joint; all-zero rows of ``confusion`` contribute zero."""
    m = len(class_counts)
    scaled = [[Fraction(0)] * m for _ in range(m)]
    for i in range(m):
        row_sum = int(sum(int(v) for v in confusion[i]))
        if row_sum == 0:
            continue
        for j in range(m):
            scaled[i][j] = Fraction(int(confusion[i][j]) * int(class_counts[i]), row_sum)
    total = sum((v for row in scaled for v in row), Fraction(0))
    if total == 0:
        raise DegenerateInputError("confusion matrix is all zero; the joint distribution is undefined")
    return [[v / total for v in row] for row in scaled]


def joint_distribution(confusion: np.ndarray, table_or_counts) -> np.ndarray:
    counts = table_or_counts.class_counts() if isinstance(table_or_counts, PredictionTable) else table_or_counts
    exact = joint_distribution_exact(confusion, counts)
    return np.array([[float(v) for v in row] for row in exact], dtype=np.float64)


def round_count(value: Fraction, rule: str = "half_away") -> int:
    """Round a non-negative rational to an integer."""
    if rule == "half_even":
        return round(value)
    floor = math.floor(value)
    return floor + 1 if value - floor >= Fraction(1, 2) else floor


# --------------------------------------------------------------------------
# noise identification
# --------------------------------------------------------------------------

def _best_other(p_row: np.ndarray, label: int) -> int:
    best = -1
    for j, v in enumerate(p_row):
        if j != label and (best < 0 or v > p_row[best]):
            best = j
    return best


def _strategy1(table, thresholds, protected) -> dict[int, int]:
    conf = confident_classes(table, thresholds)
    out = {}
    for r in range(table.n):
        i = int(table.noisy_labels[r])
        if conf[r] >= 0 and conf[r] != i and i not in protected:
            out[r] = int(conf[r])
    return out


def _strategy2(table, joint_q, n, cfg) -> dict[int, int]:
    out = {}
    for i in range(table.m):
        if i in cfg.protected_classes:
            continue
        rows = np.flatnonzero(table.noisy_labels == i)
        off = sum((joint_q[i][j] for j in range(table.m) if j != i), Fraction(0))
        k = min(round_count(n * off, cfg.rounding), rows.size)
        if k == 0:
            continue
        ranked = sorted(rows.tolist(), key=lambda r: (table.probs[r, i], table.sample_ids[r]))
        for r in ranked[:k]:
            out[r] = _best_other(table.probs[r], i)
    return out


def _strategy3(table, joint_q, n, cfg) -> dict[int, int]:
    best: dict[int, tuple[float, int]] = {}
    for i in range(table.m):
        if i in cfg.protected_classes:
            continue
        rows = np.flatnonzero(table.noisy_labels == i).tolist()
        for j in range(table.m):
            if j == i:
                continue
            k = min(round_count(n * joint_q[i][j], cfg.rounding), len(rows))
            if k == 0:
                continue
            ranked = sorted(rows, key=lambda r: (-(table.probs[r, j] - table.probs[r, i]), table.sample_ids[r]))
            for r in ranked[:k]:
                margin = table.probs[r, j] - table.probs[r, i]
                # a sample picked for several j keeps the largest margin (lowest j on ties)
                if r not in best or margin > best[r][0]:
                    best[r] = (margin, j)
    return {r: j for r, (_, j) in best.items()}


def identify_noise(
    table: PredictionTable,
    thresholds: np.ndarray,
    confusion: np.ndarray,
    cfg: CleaningConfig = CleaningConfig(),
) -> list[Flag]:
    """Flag likely-mislabelled samples; result is sorted by sample id."""
    counts = table.class_counts()
    if cfg.strategy == 1:
        chosen = _strategy1(table, thresholds, cfg.protected_classes)
    else:
        joint_q = joint_distribution_exact(confusion, counts)
        n = table.n
        if cfg.strategy == 2:
            chosen = _strategy2(table, joint_q, n, cfg)
        elif cfg.strategy == 3:
            chosen = _strategy3(table, joint_q, n, cfg)
        else:
            low = _strategy2(table, joint_q, n, cfg)
            wide = _strategy3(table, joint_q, n, cfg)
            if cfg.combine_mode == "intersection":
                chosen = {r: wide[r] for r in low.keys() & wide.keys()}
            else:
                chosen = {**low, **wide}
    flags = []
    for r, j in chosen.items():
        i = int(table.noisy_labels[r])
        flags.append(Flag(int(table.sample_ids[r]), i, int(j), float(table.probs[r, j] - table.probs[r, i])))
    flags.sort(key=lambda f: f.sample_id)
    return flags


def confident_learning_pass(table: PredictionTable, cfg: CleaningConfig = CleaningConfig()) -> CLPass:
    thresholds = compute_thresholds(table)
    confusion = build_confusion(table, thresholds)
    joint = joint_distribution(confusion, table.class_counts())
    return CLPass(thresholds, confusion, joint, identify_noise(table, thresholds, confusion, cfg))


# --------------------------------------------------------------------------
# temporal reasoning
# --------------------------------------------------------------------------

def temporal_adjust(table: PredictionTable, flagged: Iterable[Flag], alpha: float) -> PredictionTable:
    """Boost ``p[suggested]`` by a factor ``1 + alpha`` on the adjacent frames of each flag.

    Each (frame, class) entry is boosted at most once per call, rows are not
    renormalised, and a boosted value never exceeds 1 (values already above 1
    within tolerance are left alone).
    """
    if not (alpha >= 0):
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    flagged = list(flagged)
    if alpha == 0 or not flagged:
        return table.with_probs(table.probs.copy())
    row_of = {int(s): r for r, s in enumerate(table.sample_ids)}
    prev, nxt = table.temporal_neighbors()
    targets: set[tuple[int, int]] = set()
    for f in flagged:
        r = row_of[f.sample_id]
        for nb in (prev[r], nxt[r]):
            if nb >= 0:
                targets.add((int(nb), f.suggested_label))
    probs = table.probs.copy()
    if targets:
        rows, cols = map(np.asarray, zip(*sorted(targets)))
        old = probs[rows, cols]
        probs[rows, cols] = np.minimum(old * (1.0 + alpha), np.maximum(old, 1.0))
    return table.with_probs(probs)


def plain_cl(table: PredictionTable, cfg: CleaningConfig = CleaningConfig()) -> NoiseReport:
    """Confident learning without the temporal refinement."""
    result = confident_learning_pass(table, cfg)
    return NoiseReport(result.flagged, result.thresholds, result.confusion, result.joint, cfg, [len(result.flagged)])


def trcl_pipeline(table: PredictionTable, cfg: CleaningConfig = CleaningConfig()) -> NoiseReport:
    """Initial CL pass, then ``cfg.iterations`` rounds of temporal boosting + re-identification."""
    result = confident_learning_pass(table, cfg)
    history = [len(result.flagged)]
    current = table
    for _ in range(cfg.iterations):
        current = temporal_adjust(current, result.flagged, cfg.alpha)
        result = confident_learning_pass(current, cfg)
        history.append(len(result.flagged))
    return NoiseReport(result.flagged, result.thresholds, result.confusion, result.joint, cfg, history)


def apply_suggestions(table: PredictionTable, flagged: Iterable[Flag]) -> PredictionTable:
    """Relabel each flagged sample with its suggested label."""
    row_of = {int(s): r for r, s in enumerate(table.sample_ids)}
    labels = table.noisy_labels.copy()
    for f in flagged:
        labels[row_of[f.sample_id]] = f.suggested_label
    return table.with_labels(labels)


# --------------------------------------------------------------------------
# cleaning quality against ground truth
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CleaningMetrics:
    noise_pct: float
    nca_pct: Optional[float]
    remaining: int
    total_noise: int
    flagged: int
    correct: int


def cleaning_metrics(flagged_ids: Iterable[int], true_noise_ids: Iterable[int]) -> CleaningMetrics:
    """Remaining-noise percentage and noise-cleaning accuracy (precision of the flags)."""
    flagged = set(int(s) for s in flagged_ids)
    noise = set(int(s) for s in true_noise_ids)
    correct = len(flagged & noise)
    remaining = len(noise) - correct
    noise_pct = 100.0 * remaining / len(noise) if noise else 0.0
    nca = 100.0 * correct / len(flagged) if flagged else None
    return CleaningMetrics(noise_pct, nca, remaining, len(noise), len(flagged), correct)
