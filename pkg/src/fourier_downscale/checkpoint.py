"""A trained model bundled with everything needed to run it, plus JSON
checkpoint I/O.

Floats are written with ``repr`` precision, so tensors round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FourierConfig, feature_tensor
from .ingest import NormalizationStats
from .model import ModelConfig, ModelParams, _forward, param_shapes
from .train import TrainConfig
from .uncertainty import ResidualModel

FORMAT = "fourier-downscale-checkpoint"
VERSION = 1


@dataclass
class FittedModel:
    params: ModelParams
    model_cfg: ModelConfig
    fourier: list[FourierConfig]
    stats: NormalizationStats
    aggregation: str = "mean"
    phase0: float = 0.0
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    residual: ResidualModel | None = None
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.model_cfg.K

    def features(self, t: Sequence[float]) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if not self.fourier:
            return np.zeros((len(t), self.K, 0))
        return feature_tensor(t, self.fourier, self.phase0)

    def predict_normalized(self, x0: np.ndarray, t: Sequence[float],
                           h_init: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Normalized predictions (T, K) and the final hidden state."""
        x0 = np.asarray(x0, dtype=np.float64).ravel()
        trace, cache = _forward(x0, self.features(t), self.params, self.model_cfg, h_init)
        h_last = trace.h[-1].copy() if len(trace) else cache.h_init
        return trace.yhat, h_last

    def predict(self, x0_raw: np.ndarray, t: Sequence[float],
                h_init: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Physical-unit predictions from physical-unit coarse values."""
        yn, h = self.predict_normalized(self.stats.norm_x0(x0_raw), t, h_init)
        return self.stats.denorm_y(yn), h


def _tensor_dict(params: ModelParams) -> dict:
    return {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in params.items()}


def _tensors_from_dict(d: dict, cfg: ModelConfig) -> ModelParams:
    out = ModelParams()
    for name, shape in param_shapes(cfg).items():
        if name not in d:
            raise ValueError(f"checkpoint is missing tensor {name!r}")
        arr = np.asarray(d[name]["data"], dtype=np.float64).reshape(d[name]["shape"])
        if arr.shape != shape:
            raise ValueError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
        out[name] = arr
    return out


def to_dict(fm: FittedModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "model_config": fm.model_cfg.to_dict(),
        "fourier": [{"P": c.P, "F": c.F, "K": c.K} for c in fm.fourier],
        "phase0": fm.phase0,
        "aggregation": fm.aggregation,
        "stats": vars(fm.stats).copy(),
        "train_config": fm.train_cfg.to_dict(),
        "seed": fm.train_cfg.seed,
        "residual": fm.residual.to_dict() if fm.residual is not None else None,
        "meta": fm.meta,
        "tensors": _tensor_dict(fm.params),
    }


def from_dict(d: dict) -> FittedModel:
    if d.get("format") != FORMAT:
        raise ValueError("not a fourier-downscale checkpoint")
    if d.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    cfg = ModelConfig.from_dict(d["model_config"])
    return FittedModel(
        params=_tensors_from_dict(d["tensors"], cfg),
        model_cfg=cfg,
        fourier=[FourierConfig(**c) for c in d["fourier"]],
        stats=NormalizationStats(**d["stats"]),
        aggregation=d["aggregation"],
        phase0=d["phase0"],
        train_cfg=TrainConfig.from_dict(d["train_config"]),
        residual=ResidualModel.from_dict(d["residual"]) if d.get("residual") else None,
        meta=d.get("meta", {}),
    )


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def save_checkpoint(fm: FittedModel, path) -> None:
    Path(path).write_text(dumps(to_dict(fm)))


def load_checkpoint(path) -> FittedModel:
    return from_dict(json.loads(Path(path).read_text()))
