"""Cleaning experiments on synthetic burst-noise videos with known ground truth."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Iterable, Optional, Sequence

from dsdkit.synth import SynthConfig, synth_dataset
from dsdkit.trcl import CleaningConfig, CleaningMetrics, cleaning_metrics, plain_cl, trcl_pipeline

DEFAULT_ALPHAS = (0.05, 0.1, 0.15, 0.2)


@dataclass(frozen=True)
class Comparison:
    seed: int
    plain: CleaningMetrics
    temporal: CleaningMetrics

    @property
    def temporal_wins(self) -> bool:
        """Temporal pass is at least as precise and leaves no more noise behind."""
        if self.plain.nca_pct is None or self.temporal.nca_pct is None:
            nca_ok = self.plain.nca_pct is None
        else:
            nca_ok = self.temporal.nca_pct >= self.plain.nca_pct
        return nca_ok and self.temporal.remaining <= self.plain.remaining

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "plain": asdict(self.plain),
            "trcl": asdict(self.temporal),
            "trcl_wins": self.temporal_wins,
        }


def compare_cl_trcl(
    seeds: Iterable[int],
    synth: SynthConfig = SynthConfig(),
    cleaning: CleaningConfig = CleaningConfig(),
) -> list[Comparison]:
    """Plain CL vs the temporal pipeline on one synthetic benchmark per seed."""
    out = []
    for seed in seeds:
        ds = synth_dataset(replace(synth, seed=seed))
        truth = ds.noise_ids
        plain = cleaning_metrics(plain_cl(ds.table, cleaning).flagged_ids, truth)
        temporal = cleaning_metrics(trcl_pipeline(ds.table, cleaning).flagged_ids, truth)
        out.append(Comparison(seed, plain, temporal))
    return out


@dataclass(frozen=True)
class AlphaPoint:
    alpha: float
    precision_pct: Optional[float]
    flagged: int
    correct: int
    remaining: int


def alpha_sweep(
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    synth: SynthConfig = SynthConfig(),
    cleaning: CleaningConfig = CleaningConfig(),
) -> list[AlphaPoint]:
    """Precision of the flagged set for each boost factor on one benchmark."""
    ds = synth_dataset(synth)
    truth = ds.noise_ids
    points = []
    for alpha in alphas:
        report = trcl_pipeline(ds.table, replace(cleaning, alpha=float(alpha)))
        m = cleaning_metrics(report.flagged_ids, truth)
        points.append(AlphaPoint(float(alpha), m.nca_pct, m.flagged, m.correct, m.remaining))
    return points
