"""Run configuration: one JSON document, validated field by field.

Unknown keys and wrong types raise :class:`ConfigError` naming the offending
field path (``model.L``, ``fourier[1].P`` ...).
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .features import FourierConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    path: str | None = None
    region: str = ""
    time_col: str = "Datetime"
    load_col: str | None = None
    time_fmt: str = "%Y-%m-%d %H:%M:%S"


@dataclass
class ModelSection:
    L: int = 32
    D: int = 16
    n_heads: int = 2
    cell: str = "gru"
    use_attention: bool = True
    use_fourier: bool = True
    d_ff: int | None = None


@dataclass
class TrainSection:
    lr: float = 5e-3
    betas: list = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    clip_norm: float = 1.0
    lambda_f: float = 1e-4
    epochs: int = 100
    seq_len: int = 14


@dataclass
class EvalSection:
    windows: int = 70
    stride: int = 24  # in sub-periods (hours)
    alpha: float = 0.05


@dataclass
class HierarchySection:
    Ks: list = field(default_factory=lambda: [365, 24])
    alpha: float = 0.5
    fourier: list = field(default_factory=lambda: [[{"P": 1.0, "F": 3}], [{"P": 7.0, "F": 3}]])
    epochs: int = 60
    L: int = 16
    D: int = 8


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    K: int = 24
    aggregation: str = "mean"
    train_fraction: float = 0.8
    phase0: float = 0.0
    fourier: list = field(default_factory=lambda: [{"P": 7.0, "F": 3}, {"P": 365.25, "F": 2}])
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    hierarchy: HierarchySection = field(default_factory=HierarchySection)
    seed: int = 0
    out: str = "out"

    # ---- derived objects ----
    def fourier_configs(self) -> list[FourierConfig]:
        return [FourierConfig(float(b["P"]), int(b["F"]), self.K) for b in self.fourier]

    def model_config(self) -> ModelConfig:
        m = self.model
        harmonics = tuple(int(b["F"]) for b in self.fourier) if m.use_fourier else ()
        return ModelConfig(L=m.L, D=m.D, n_heads=m.n_heads, K=self.K, harmonics=harmonics,
                           use_attention=m.use_attention, use_fourier=m.use_fourier,
                           cell=m.cell, d_ff=m.d_ff)

    def train_config(self, component: str = "train") -> TrainConfig:
        t = self.train
        return TrainConfig(lr=t.lr, betas=tuple(t.betas), eps=t.eps, clip_norm=t.clip_norm,
                           lambda_f=t.lambda_f, epochs=t.epochs, seq_len=t.seq_len,
                           seed=derive_seed(self.seed, component))

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = _build(cls, d, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def validate(self) -> None:
        def check(ok, path, msg):
            if not ok:
                raise ConfigError(f"{path}: {msg}")

        check(self.K >= 1, "K", "must be >= 1")
        check(self.aggregation in ("sum", "mean"), "aggregation", "must be 'sum' or 'mean'")
        check(0 < self.train_fraction < 1, "train_fraction", "must lie in (0, 1)")
        for i, b in enumerate(self.fourier):
            check(isinstance(b, dict) and set(b) == {"P", "F"}, f"fourier[{i}]", "expected {P, F}")
            check(_num(b["P"]) and b["P"] > 0, f"fourier[{i}].P", "must be > 0")
            check(isinstance(b["F"], int) and b["F"] >= 1, f"fourier[{i}].F", "must be an integer >= 1")
        check(self.model.D % self.model.n_heads == 0, "model.n_heads", "must divide model.D")
        check(self.model.cell in ("gru", "elman"), "model.cell", "must be 'gru' or 'elman'")
        check(self.train.lr > 0, "train.lr", "must be > 0")
        check(self.train.clip_norm > 0, "train.clip_norm", "must be > 0")
        check(self.train.lambda_f >= 0, "train.lambda_f", "must be >= 0")
        check(self.train.epochs >= 0, "train.epochs", "must be >= 0")
        check(self.train.seq_len >= 1, "train.seq_len", "must be >= 1")
        check(len(self.train.betas) == 2, "train.betas", "needs two values")
        check(self.eval.windows >= 1, "eval.windows", "must be >= 1")
        check(self.eval.stride >= 1 and self.eval.stride % self.K == 0, "eval.stride",
              f"must be a positive multiple of K={self.K}")
        check(0 < self.eval.alpha < 1, "eval.alpha", "must lie in (0, 1)")
        check(0 <= self.hierarchy.alpha <= 1, "hierarchy.alpha", "must lie in [0, 1]")
        check(all(isinstance(k, int) and k >= 2 for k in self.hierarchy.Ks), "hierarchy.Ks",
              "entries must be integers >= 2")
        check(len(self.hierarchy.fourier) == len(self.hierarchy.Ks), "hierarchy.fourier",
              "needs one block list per stage")


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _build(cls, d: Any, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{path + '.' if path else ''}{key}: unknown key")
    default = cls()
    kwargs = {}
    for name, f in known.items():
        p = f"{path}.{name}" if path else name
        if name not in d:
            continue
        v = d[name]
        cur = getattr(default, name)
        if hasattr(cur, "__dataclass_fields__"):
            kwargs[name] = _build(type(cur), v, p)
        elif isinstance(cur, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{p}: expected a boolean")
            kwargs[name] = v
        elif isinstance(cur, int) and not isinstance(cur, bool):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{p}: expected an integer")
            kwargs[name] = v
        elif isinstance(cur, float):
            if not _num(v):
                raise ConfigError(f"{p}: expected a number")
            kwargs[name] = float(v)
        elif isinstance(cur, list):
            if not isinstance(v, list):
                raise ConfigError(f"{p}: expected a list")
            kwargs[name] = v
        else:
            if v is not None and cur is not None and not isinstance(v, type(cur)):
                raise ConfigError(f"{p}: expected {type(cur).__name__}")
            if v is not None and cur is None and name == "d_ff" and not isinstance(v, int):
                raise ConfigError(f"{p}: expected an integer")
            kwargs[name] = v
    return cls(**kwargs)


def derive_seed(root: int, component: str) -> int:
    """Deterministic per-component seed from the root seed."""
    ss = np.random.SeedSequence(root, spawn_key=(zlib.crc32(component.encode()),))
    return int(ss.generate_state(1)[0])
