"""Gaussian residual model, per-horizon prediction intervals and rejection rates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Acklam's rational approximation to the inverse normal CDF
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_ppf(p: float) -> float:
    """Standard normal quantile.

    Rational approximation (rel. error ~1e-9) followed by one Halley step
    against ``erfc``, which brings it to machine precision. The upper half is
    computed from the lower one by symmetry (``1 - p`` is exact there).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if p > 0.5:
        return -norm_ppf(1.0 - p)
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


@dataclass(frozen=True)
class ResidualModel:
    mean_r: np.ndarray  # (K,)
    sigma: np.ndarray  # (K, K) unbiased sample covariance
    n_samples: int

    @property
    def K(self) -> int:
        return len(self.mean_r)

    def std(self) -> np.ndarray:
        d = np.diag(self.sigma)
        if np.any(d < 0):
            raise ValueError("negative variance on the covariance diagonal")
        return np.sqrt(d)

    def to_dict(self) -> dict:
        return {"mean_r": self.mean_r.tolist(), "sigma": self.sigma.tolist(), "n_samples": self.n_samples}

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualModel":
        return cls(np.asarray(d["mean_r"], dtype=np.float64), np.asarray(d["sigma"], dtype=np.float64),
                   int(d["n_samples"]))


def estimate_residual_model(y: np.ndarray, yhat: np.ndarray) -> ResidualModel:
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    yhat = np.atleast_2d(np.asarray(yhat, dtype=np.float64))
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {yhat.shape}")
    n = len(y)
    if n < 2:
        raise ValueError("need at least 2 residual vectors")
    r = y - yhat
    mean_r = r.mean(axis=0)
    rc = r - mean_r
    sigma = rc.T @ rc / (n - 1)
    sigma = 0.5 * (sigma + sigma.T)
    return ResidualModel(mean_r, sigma, n)


@dataclass(frozen=True)
class IntervalSet:
    lower: np.ndarray  # (..., K)
    upper: np.ndarray
    alpha: float

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def intervals(yhat: np.ndarray, rm: ResidualModel, alpha: float = 0.05) -> IntervalSet:
    """Marginal (1 - alpha) Gaussian intervals per horizon, centred at
    ``yhat + mean_r``. ``yhat`` may be (K,) or (W, K)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    half = norm_ppf(1.0 - alpha / 2.0) * rm.std()
    centre = np.asarray(yhat, dtype=np.float64) + rm.mean_r
    return IntervalSet(centre - half, centre + half, alpha)


def rejection_rates(y_test: np.ndarray, iv: IntervalSet) -> tuple[np.ndarray, dict]:
    """Fraction of windows whose actual value falls outside the interval, per horizon."""
    y_test = np.atleast_2d(np.asarray(y_test, dtype=np.float64))
    if len(y_test) < 1:
        raise ValueError("need at least one window")
    lower = np.broadcast_to(iv.lower, y_test.shape)
    upper = np.broadcast_to(iv.upper, y_test.shape)
    outside = (y_test < lower) | (y_test > upper)
    r = outside.mean(axis=0)
    return r, {"mean": float(r.mean()), "max": float(r.max()), "min": float(r.min())}
