"""Rolling-window evaluation, horizon-wise RMSE, synthetic load generation and
the ablation suite."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .baseline import HarmonicRegression
from .checkpoint import FittedModel
from .features import FourierConfig
from .ingest import MultiResolutionDataset, RawSeries, clean, make_pairs, split_and_normalize
from .model import ModelConfig
from .train import DivergenceError, TrainConfig, fit
from .uncertainty import ResidualModel, estimate_residual_model, intervals, rejection_rates

log = logging.getLogger(__name__)

VARIANTS = ("simple_rnn", "rnn_attn", "fourier_rnn", "harmonic_baseline")
NEURAL_FLAGS = {
    "simple_rnn": dict(use_fourier=False, use_attention=False),
    "rnn_attn": dict(use_fourier=False, use_attention=True),
    "fourier_rnn": dict(use_fourier=True, use_attention=True),
}


@dataclass(frozen=True)
class WindowSpec:
    n_windows: int = 70
    stride: int = 1  # in periods
    K: int = 24

    def __post_init__(self):
        if self.n_windows < 1 or self.stride < 1:
            raise ValueError("n_windows and stride must be >= 1")

    def positions(self) -> np.ndarray:
        return np.arange(self.n_windows) * self.stride

    def required_periods(self) -> int:
        return (self.n_windows - 1) * self.stride + 1


def rmse_by_horizon(yhat: np.ndarray, y: np.ndarray) -> np.ndarray:
    yhat = np.atleast_2d(np.asarray(yhat, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if yhat.shape != y.shape:
        raise ValueError(f"shape mismatch {yhat.shape} vs {y.shape}")
    if len(y) < 1:
        raise ValueError("need at least one window")
    return np.sqrt(np.mean((yhat - y) ** 2, axis=0))


def rolling_forecast(fm: FittedModel, test: MultiResolutionDataset, spec: WindowSpec,
                     h_init: np.ndarray | None = None) -> np.ndarray:
    """Per-window K-vector predictions in physical units, shape (n_windows, K).

    For the window at test position p the hidden state is advanced through the
    observed coarse values of test periods 0..p (starting from ``h_init``, or
    the learnable initial state), then period p is predicted with its Fourier
    features. The network is causal, so one pass over the prefix up to the last
    window yields every window's forecast.
    """
    if len(test) < spec.required_periods():
        raise ValueError(
            f"test set has {len(test)} periods, {spec.required_periods()} needed "
            f"for {spec.n_windows} windows at stride {spec.stride}")
    n = spec.required_periods()
    yn, _ = fm.predict_normalized(test.x0[:n], test.t[:n], h_init)
    return fm.stats.denorm_y(yn[spec.positions()])


def window_targets(test: MultiResolutionDataset, spec: WindowSpec) -> np.ndarray:
    return test.raw_y()[spec.positions()]


# daily and weekly cycles (periods 21 h and 28 h are the 8th and 6th weekly
# harmonics: they make the within-day shape depend on the weekday), mild trend,
# hourly noise and day-level shocks
DEFAULT_SYNTH = dict(
    harmonics=((20.0, 24.0, 0.0), (4.0, 168.0, 10.0), (6.0, 12.0, 3.0), (12.0, 21.0, 0.0), (12.0, 28.0, 0.0)),
    slope=0.001,
    noise_sd=2.0,
    day_noise_sd=8.0,
)


def synth_generate(harmonics: Sequence[tuple[float, float, float]] = ((10.0, 24.0, 0.0),),
                   slope: float = 0.0, noise_sd: float = 0.0, n_days: int = 30, seed: int = 0,
                   level: float = 100.0, start: str = "2015-01-01 00:00:00",
                   day_noise_sd: float = 0.0) -> RawSeries:
    """Hourly series ``level + slope * t + sum(amp * sin(2 pi (t + phase) / period)) + noise``
    with ``t`` in hours; harmonics are ``(amplitude, period_hours, phase_hours)``.

    ``noise_sd`` is i.i.d. per hour. ``day_noise_sd`` adds one shared shock per
    calendar day, a crude stand-in for weather-driven level changes.
    """
    if n_days < 2:
        raise ValueError("n_days must be >= 2")
    t = np.arange(n_days * 24, dtype=np.float64)
    y = level + slope * t
    for amp, period, phase in harmonics:
        y = y + amp * np.sin(2.0 * np.pi * (t + phase) / period)
    rng = np.random.default_rng(seed)
    if noise_sd > 0:
        y = y + rng.normal(0.0, noise_sd, size=len(t))
    if day_noise_sd > 0:
        y = y + np.repeat(rng.normal(0.0, day_noise_sd, size=n_days), 24)
    return RawSeries.from_values(y, start=start, region_id="SYNTH")


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

@dataclass
class EvalReport:
    variant: str
    seed: int
    rmse_by_horizon: np.ndarray
    rejection_per_h: np.ndarray
    rejection_summary: dict
    config_hash: str = ""
    forecasts: np.ndarray | None = None
    failed: str | None = None

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.rmse_by_horizon))

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "rmse_by_horizon": [float(v) for v in self.rmse_by_horizon],
            "mean_rmse": self.mean_rmse,
            "rejection": {**self.rejection_summary, "per_h": [float(v) for v in self.rejection_per_h]},
            "config_hash": self.config_hash,
            "failed": self.failed,
        }

    @classmethod
    def failure(cls, variant: str, seed: int, reason: str, K: int, config_hash: str = "") -> "EvalReport":
        nan = np.full(K, np.nan)
        return cls(variant, seed, nan, nan.copy(), {"mean": None, "max": None, "min": None},
                   config_hash, failed=reason)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def training_residual_model(fm: FittedModel, train: MultiResolutionDataset) -> tuple[ResidualModel, np.ndarray]:
    """Residual model from in-sample predictions (physical units) and the hidden
    state at the end of the training sequence."""
    yn, h_last = fm.predict_normalized(train.x0, train.t)
    return estimate_residual_model(train.raw_y(), fm.stats.denorm_y(yn)), h_last


def evaluate_model(fm: FittedModel, train: MultiResolutionDataset, test: MultiResolutionDataset,
                   spec: WindowSpec, alpha: float = 0.05, variant: str = "fourier_rnn",
                   cfg_hash: str = "") -> EvalReport:
    rm, h_last = training_residual_model(fm, train)
    fm.residual = rm
    yhat = rolling_forecast(fm, test, spec, h_init=h_last)
    y = window_targets(test, spec)
    r, summary = rejection_rates(y, intervals(yhat, rm, alpha))
    return EvalReport(variant, fm.train_cfg.seed, rmse_by_horizon(yhat, y), r, summary, cfg_hash, yhat)


# --------------------------------------------------------------------------
# ablations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationSettings:
    K: int = 24
    aggregation: str = "mean"
    train_fraction: float = 0.7
    fourier: tuple[tuple[float, int], ...] = ((7.0, 3),)
    baseline_daily_harmonics: int = 4
    L: int = 32
    D: int = 16
    n_heads: int = 2
    cell: str = "gru"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=5e-3, epochs=150, seq_len=14,
                                                                    lambda_f=1e-4))
    windows: WindowSpec = field(default_factory=WindowSpec)
    alpha: float = 0.05

    def fourier_configs(self) -> list[FourierConfig]:
        return [FourierConfig(P, F, self.K) for P, F in self.fourier]

    def model_config(self, variant: str) -> ModelConfig:
        return ModelConfig(L=self.L, D=self.D, n_heads=self.n_heads, K=self.K, cell=self.cell,
                           harmonics=tuple(F for _, F in self.fourier), **NEURAL_FLAGS[variant])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d


def prepare_data(raw: RawSeries, settings: AblationSettings):
    pairs = make_pairs(clean(raw), settings.K, settings.aggregation)
    return split_and_normalize(pairs, settings.train_fraction, settings.K)


def fit_variant(variant: str, train: MultiResolutionDataset, settings: AblationSettings,
                seed: int) -> FittedModel:
    cfg = settings.model_config(variant)
    fourier = settings.fourier_configs() if cfg.use_fourier else []
    if not cfg.use_fourier:
        cfg = replace(cfg, harmonics=())
    tc = replace(settings.train, seed=seed)
    params, history = fit(train, cfg, fourier, tc)
    return FittedModel(params, cfg, fourier, train.stats, train.aggregation, train_cfg=tc,
                       meta={"variant": variant, "history": [list(h) for h in history]})


def _baseline_report(train, test, settings: AblationSettings, spec: WindowSpec, seed: int,
                     cfg_hash: str) -> EvalReport:
    K = settings.K
    cycles = [(P, F) for P, F in settings.fourier] + [(1.0, settings.baseline_daily_harmonics)]
    hr = HarmonicRegression(cycles)
    sub = np.arange(K) / K
    t_train = (train.t[:, None] + sub).ravel()
    hr.fit(t_train, train.raw_y().ravel())
    fitted = hr.predict(t_train).reshape(-1, K)
    rm = estimate_residual_model(train.raw_y(), fitted)
    pos = spec.positions()
    yhat = hr.predict((test.t[pos][:, None] + sub).ravel()).reshape(-1, K)
    y = window_targets(test, spec)
    r, summary = rejection_rates(y, intervals(yhat, rm, settings.alpha))
    return EvalReport("harmonic_baseline", seed, rmse_by_horizon(yhat, y), r, summary, cfg_hash, yhat)


def run_ablation_suite(raw: RawSeries, seeds: Sequence[int], variants: Sequence[str] = VARIANTS,
                       settings: AblationSettings | None = None) -> list[EvalReport]:
    """Train every variant under every seed with the same data, budget and
    windows. A diverging variant is reported as failed and the suite goes on."""
    settings = settings or AblationSettings()
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise ValueError(f"unknown variants {sorted(unknown)}")
    train, test = prepare_data(raw, settings)
    spec = settings.windows
    avail = (len(test) - 1) // spec.stride + 1
    if avail < spec.n_windows:
        log.warning("only %d windows fit in the test set (requested %d)", avail, spec.n_windows)
        spec = replace(spec, n_windows=avail)
    reports = []
    for seed in seeds:
        for variant in variants:
            h = config_hash({"settings": settings.to_dict(), "variant": variant, "seed": seed})
            if variant == "harmonic_baseline":
                reports.append(_baseline_report(train, test, settings, spec, seed, h))
                continue
            try:
                fm = fit_variant(variant, train, settings, seed)
                reports.append(evaluate_model(fm, train, test, spec, settings.alpha, variant, h))
            except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
                log.warning("variant %s seed %d failed: %s", variant, seed, exc)
                reports.append(EvalReport.failure(variant, seed, str(exc), settings.K, h))
    return reports


def comparison_table(reports: Sequence[EvalReport]) -> list[dict]:
    """One row per (variant, seed): mean RMSE and rejection summary."""
    return [{"variant": r.variant, "seed": r.seed, "mean_rmse": r.mean_rmse if not r.failed else None,
             "rejection_mean": r.rejection_summary.get("mean"), "failed": r.failed} for r in reports]


def horizon_csv_rows(reports: Sequence[EvalReport]) -> list[tuple]:
    rows = []
    for r in reports:
        for h, v in enumerate(r.rmse_by_horizon):
            rows.append((r.variant, r.seed, h, float(v)))
    return rows
