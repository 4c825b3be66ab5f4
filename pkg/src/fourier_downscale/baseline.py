"""Harmonic regression: linear trend plus Fourier terms, fitted by least squares.

Used as the non-neural comparison in the ablation suite and as the coarse base
downscaler for yearly-to-daily mapping.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class HarmonicRegression:
    def __init__(self, cycles: Sequence[tuple[float, int]], trend: bool = True):
        self.cycles = [(float(P), int(F)) for P, F in cycles]
        self.trend = trend
        self.coef_: np.ndarray | None = None
        self._t_scale = 1.0

    def design(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        cols = [np.ones_like(t)]
        if self.trend:
            cols.append(t / self._t_scale)
        for P, F in self.cycles:
            for k in range(1, F + 1):
                ang = 2.0 * np.pi * k * t / P
                cols += [np.sin(ang), np.cos(ang)]
        return np.stack(cols, axis=-1)

    def fit(self, t, y) -> "HarmonicRegression":
        t = np.asarray(t, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self._t_scale = max(float(np.max(np.abs(t))), 1.0)  # keeps the trend column O(1)
        self.coef_, *_ = np.linalg.lstsq(self.design(t), y, rcond=None)
        return self

    def predict(self, t) -> np.ndarray:
        if self.coef_ is None:
            raise RuntimeError("HarmonicRegression is not fitted")
        return self.design(t) @ self.coef_
