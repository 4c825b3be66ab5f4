"""Yearly-to-hourly downscaling by composing per-resolution stage models, and
by refining a coarse base downscaler with a day-to-hour stage."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from .baseline import HarmonicRegression
from .checkpoint import FittedModel
from .features import FourierConfig
from .ingest import (
    IngestError,
    NormalizationStats,
    PeriodPairs,
    RawSeries,
    aggregate,
    make_pairs,
    normalize_pairs,
)
from .model import ModelConfig
from .train import TrainConfig, fit

PIPELINE_FORMAT = "fourier-downscale-pipeline"


def blend(truth, predicted, alpha: float) -> np.ndarray:
    """``alpha * truth + (1 - alpha) * predicted``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    truth = np.asarray(truth, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if truth.shape != predicted.shape:
        raise ValueError(f"length mismatch {truth.shape} vs {predicted.shape}")
    return alpha * truth + (1.0 - alpha) * predicted


@dataclass(frozen=True)
class BlendConfig:
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass
class StageSpec:
    name: str
    K_stage: int
    model_cfg: ModelConfig
    fourier: list[FourierConfig] = field(default_factory=list)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    aggregation: str = "mean"
    fitted: FittedModel | None = None

    def __post_init__(self):
        if self.K_stage < 2:
            raise ValueError("K_stage must be >= 2")
        if self.model_cfg.K != self.K_stage:
            raise ValueError(f"stage {self.name!r}: model K={self.model_cfg.K} != K_stage={self.K_stage}")


@dataclass
class Pipeline:
    stages: list[StageSpec]

    @property
    def expansion(self) -> int:
        return int(np.prod([s.K_stage for s in self.stages]))


def hierarchy_pairs(raw: RawSeries, Ks: Sequence[int] = (365, 24), aggregation: str = "mean") -> list[PeriodPairs]:
    """Derive every stage's pairs from one hourly series by repeated aggregation.

    ``Ks`` is ordered coarse to fine. Returns pairs ordered the same way; the
    finest stage's coarse values are exactly the next-coarser stage's targets.
    """
    levels: list[PeriodPairs] = []
    series = raw
    for K in reversed(Ks):
        pairs = make_pairs(series, K, aggregation)
        levels.append(pairs)
        series = RawSeries(pairs.period_start, pairs.x0, raw.region_id)
    levels.reverse()
    # trim finer stages to the span covered by the coarsest full periods
    n = len(levels[0])
    for i, K in enumerate(Ks[:-1]):
        n = n * K
        nxt = levels[i + 1]
        levels[i + 1] = PeriodPairs(nxt.t[:n], nxt.x0[:n], nxt.y[:n], nxt.period_start[:n], nxt.aggregation)
    return levels


def _fit_stage(stage: StageSpec, pairs: PeriodPairs, x0_train: np.ndarray) -> FittedModel:
    stats = NormalizationStats.fit(x0_train, pairs.y)
    blended = PeriodPairs(pairs.t, x0_train, pairs.y, pairs.period_start, pairs.aggregation)
    ds = normalize_pairs(blended, stats, "train")
    params, history = fit(ds, stage.model_cfg, stage.fourier, stage.train_cfg)
    return FittedModel(params, stage.model_cfg, list(stage.fourier), stats, stage.aggregation,
                       train_cfg=stage.train_cfg,
                       meta={"stage": stage.name, "history": [list(h) for h in history]})


def train_pipeline(stages: Sequence[StageSpec], datasets: Sequence[PeriodPairs],
                   blend_cfg: BlendConfig = BlendConfig()) -> Pipeline:
    """Train stages coarse to fine.

    Stage 1 sees real coarse inputs. Stage i > 1 is trained on
    ``blend(real, predicted)`` coarse inputs, where ``predicted`` is the
    previous stage's in-sample output. Periods beyond the previous stage's
    coverage keep their real inputs.
    """
    if len(stages) != len(datasets) or not stages:
        raise ValueError("need one dataset per stage")
    upstream_real = upstream_pred = None
    for i, (stage, pairs) in enumerate(zip(stages, datasets)):
        if pairs.K != stage.K_stage:
            raise IngestError(f"stage {stage.name!r} expects K={stage.K_stage}, dataset has K={pairs.K}")
        x0 = pairs.x0.copy()
        if i > 0:
            n = min(len(upstream_real), len(x0))
            if n == 0 or not np.allclose(x0[:n], upstream_real[:n], rtol=1e-9, atol=1e-9):
                raise IngestError(
                    f"resolution mismatch: stage {stage.name!r} inputs do not match "
                    f"the targets of stage {stages[i - 1].name!r}")
            x0[:n] = blend(x0[:n], upstream_pred[:n], blend_cfg.alpha)
        stage.fitted = _fit_stage(stage, pairs, x0)
        yhat, _ = stage.fitted.predict(x0, pairs.t)
        upstream_real, upstream_pred = pairs.y.ravel(), yhat.ravel()
    return Pipeline(list(stages))


def reconcile_blocks(fine: np.ndarray, drivers: np.ndarray, aggregation: str) -> np.ndarray:
    """Rescale each row of ``fine`` (n, K) so its aggregate equals its driver.

    Multiplicative when the block aggregate is non-negligible, otherwise an
    additive shift."""
    fine = np.asarray(fine, dtype=np.float64)
    drivers = np.asarray(drivers, dtype=np.float64)
    agg = aggregate(fine, aggregation)
    out = fine.copy()
    scale_ok = np.abs(agg) > 1e-12 * np.maximum(np.abs(drivers), 1.0)
    out[scale_ok] *= (drivers[scale_ok] / agg[scale_ok])[:, None]
    shift = drivers[~scale_ok] - agg[~scale_ok]
    if aggregation == "sum":
        shift = shift / fine.shape[1]
    out[~scale_ok] += shift[:, None]
    return out


def downscale(pipeline: Pipeline, coarse_input, t_start: int = 0, reconcile: bool = False,
              return_stages: bool = False):
    """Apply the stages in order; output length is ``len(coarse_input) * prod(K)``.

    ``t_start`` is the period index of the first coarse value in the first
    stage's units; each finer stage's index origin is scaled by that stage's K.
    """
    x = np.atleast_1d(np.asarray(coarse_input, dtype=np.float64))
    t0 = t_start
    outputs = []
    for stage in pipeline.stages:
        if stage.fitted is None:
            raise RuntimeError(f"stage {stage.name!r} is not trained")
        yhat, _ = stage.fitted.predict(x, t0 + np.arange(len(x)))
        if reconcile:
            yhat = reconcile_blocks(yhat, x, stage.aggregation)
        outputs.append((x, yhat))
        x = yhat.ravel()
        t0 = t0 * stage.K_stage
    return (x, outputs) if return_stages else x


# --------------------------------------------------------------------------
# refinement of a coarse base downscaler
# --------------------------------------------------------------------------

class UniformSplitter:
    """Every day gets the yearly mean (or an equal share of the yearly sum)."""

    def __init__(self, n_days: int = 365, aggregation: str = "mean"):
        self.n_days = n_days
        self.aggregation = aggregation

    def __call__(self, yearly: float, year_index: int = 0) -> np.ndarray:
        v = yearly if self.aggregation == "mean" else yearly / self.n_days
        return np.full(self.n_days, float(v))


class HarmonicBaseDownscaler:
    """Trend plus yearly/weekly harmonics fitted to daily history, shifted so
    each year's daily profile aggregates to the given yearly value."""

    def __init__(self, cycles=((365.0, 3), (7.0, 3)), n_days: int = 365, aggregation: str = "mean"):
        self.model = HarmonicRegression(cycles)
        self.n_days = n_days
        self.aggregation = aggregation

    def fit(self, daily: np.ndarray, day_index: np.ndarray | None = None) -> "HarmonicBaseDownscaler":
        daily = np.asarray(daily, dtype=np.float64)
        t = np.arange(len(daily)) if day_index is None else np.asarray(day_index)
        self.model.fit(t, daily)
        return self

    def __call__(self, yearly: float, year_index: int = 0) -> np.ndarray:
        days = year_index * self.n_days + np.arange(self.n_days)
        prof = self.model.predict(days)
        if self.aggregation == "sum":
            return prof + (yearly - prof.sum()) / self.n_days
        return prof + (yearly - prof.mean())


def rnn_enhanced_downscale(base: Callable[[float, int], np.ndarray], refiner: StageSpec | FittedModel,
                           yearly: float, year_index: int = 0, n_days: int = 365) -> np.ndarray:
    """Map one yearly value to a (n_days, K) hourly field: base gives daily
    values, the day-to-hour refiner expands each day."""
    fm = refiner.fitted if isinstance(refiner, StageSpec) else refiner
    if fm is None:
        raise RuntimeError("refiner is not trained")
    daily = np.asarray(base(yearly, year_index), dtype=np.float64)
    if daily.shape != (n_days,):
        raise ValueError(f"base downscaler returned shape {daily.shape}, expected ({n_days},)")
    hourly, _ = fm.predict(daily, year_index * n_days + np.arange(n_days))
    return hourly


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def save_pipeline(pipeline: Pipeline, path) -> None:
    doc = {
        "format": PIPELINE_FORMAT,
        "version": 1,
        "stages": [
            {"name": s.name, "K_stage": s.K_stage, "aggregation": s.aggregation,
             "checkpoint": checkpoint.to_dict(s.fitted)}
            for s in pipeline.stages
        ],
    }
    Path(path).write_text(checkpoint.dumps(doc))


def load_pipeline(path) -> Pipeline:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != PIPELINE_FORMAT:
        raise ValueError("not a fourier-downscale pipeline file")
    stages = []
    for s in doc["stages"]:
        fm = checkpoint.from_dict(s["checkpoint"])
        stages.append(StageSpec(s["name"], s["K_stage"], fm.model_cfg, fm.fourier, fm.train_cfg,
                                s["aggregation"], fm))
    return Pipeline(stages)
