"""Fourier seasonal features per period.

Row ``s`` of the K x 2F matrix for period ``t`` holds
``[sin(w_1 u), cos(w_1 u), ..., sin(w_F u), cos(w_F u)]`` with
``u = t + phase0 + s / K`` and ``w_k = 2 pi k / P``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class FourierConfig:
    P: float  # base cycle length, in period units
    F: int  # number of harmonics
    K: int = 24

    def __post_init__(self):
        if not self.P > 0:
            raise ValueError(f"P must be > 0, got {self.P}")
        if self.F < 1 or self.K < 1:
            raise ValueError("F and K must be >= 1")

    @property
    def omegas(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(1, self.F + 1) / self.P

    @property
    def width(self) -> int:
        return 2 * self.F


def build_features(t: float, cfg: FourierConfig, phase0: float = 0.0) -> np.ndarray:
    """K x 2F feature matrix for period ``t``; columns interleave sin/cos by
    ascending harmonic."""
    u = t + phase0 + np.arange(cfg.K) / cfg.K
    ang = u[:, None] * cfg.omegas[None, :]
    out = np.empty((cfg.K, 2 * cfg.F))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def feature_tensor(periods: Sequence[float], cfgs: Sequence[FourierConfig],
                   phase0: float = 0.0) -> np.ndarray:
    """Stack features for many periods and several base cycles.

    Returns shape (T, K, 2 * sum(F)); blocks follow the order of ``cfgs``.
    With no configs the last axis has width 0.
    """
    periods = np.asarray(periods, dtype=np.float64)
    if not cfgs:
        return np.zeros((len(periods), 1, 0))
    Ks = {c.K for c in cfgs}
    if len(Ks) != 1:
        raise ValueError(f"all Fourier blocks must share K, got {sorted(Ks)}")
    K = Ks.pop()
    u = periods[:, None] + phase0 + np.arange(K)[None, :] / K  # (T, K)
    blocks = []
    for cfg in cfgs:
        ang = u[:, :, None] * cfg.omegas[None, None, :]
        blk = np.empty(ang.shape[:2] + (2 * cfg.F,))
        blk[..., 0::2] = np.sin(ang)
        blk[..., 1::2] = np.cos(ang)
        blocks.append(blk)
    return np.concatenate(blocks, axis=-1)


def harmonic_weights(cfgs: Sequence[FourierConfig]) -> np.ndarray:
    """Harmonic order of each feature column: (1, 1, 2, 2, ..., F, F) per block."""
    return harmonic_weights_from_orders([c.F for c in cfgs])


def harmonic_weights_from_orders(harmonics: Sequence[int]) -> np.ndarray:
    if not harmonics:
        return np.zeros(0)
    return np.concatenate([np.repeat(np.arange(1, F + 1), 2) for F in harmonics]).astype(np.float64)
