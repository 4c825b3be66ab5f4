"""Hourly load ingestion: CSV parsing, cleaning, multi-resolution pairing and
train/test normalization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np
import pandas as pd

Aggregation = Literal["sum", "mean"]

HOUR = np.timedelta64(1, "h")


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class HourlyRecord:
    timestamp: np.datetime64
    load: float


@dataclass(frozen=True)
class RawSeries:
    """Hourly load values with naive local timestamps. NaN marks a missing load."""

    timestamps: np.ndarray  # datetime64[s]
    load: np.ndarray
    region_id: str = ""

    def __len__(self) -> int:
        return len(self.load)

    def records(self) -> Iterator[HourlyRecord]:
        for ts, v in zip(self.timestamps, self.load):
            yield HourlyRecord(ts, float(v))

    @classmethod
    def from_values(cls, values, start="2015-01-01 00:00:00", region_id: str = "") -> "RawSeries":
        values = np.asarray(values, dtype=np.float64)
        ts = np.datetime64(start, "s") + np.arange(len(values)) * HOUR
        return cls(ts.astype("datetime64[s]"), values, region_id)

    def to_frame(self, time_col: str = "Datetime", load_col: str = "load") -> pd.DataFrame:
        return pd.DataFrame({time_col: pd.to_datetime(self.timestamps), load_col: self.load})


def load_csv(
    path,
    region: str = "",
    time_col: str = "Datetime",
    load_col: str | None = None,
    time_fmt: str | None = "%Y-%m-%d %H:%M:%S",
) -> RawSeries:
    """Read an hourly load CSV in file order.

    ``load_col=None`` picks the first column that is not ``time_col`` (PJM files
    name it ``<REGION>_MW``). Timestamps are floored to the hour; unparseable
    load cells become NaN and are resolved later by :func:`clean`.
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"unreadable file {path}: {exc}") from exc
    except pd.errors.EmptyDataError:
        raise IngestError("no parseable rows") from None

    if time_col not in df.columns:
        raise IngestError(f"unknown column {time_col!r}; available: {list(df.columns)}")
    if load_col is None:
        others = [c for c in df.columns if c != time_col]
        if not others:
            raise IngestError("no load column found")
        load_col = others[0]
    elif load_col not in df.columns:
        raise IngestError(f"unknown column {load_col!r}; available: {list(df.columns)}")

    ts = pd.to_datetime(df[time_col].str.strip(), format=time_fmt, errors="coerce")
    keep = ts.notna().to_numpy()
    if not keep.any():
        raise IngestError("no parseable rows")
    load = pd.to_numeric(df[load_col].str.strip(), errors="coerce").to_numpy(dtype=np.float64)
    stamps = ts[keep].dt.floor("h").to_numpy().astype("datetime64[s]")
    return RawSeries(stamps, load[keep], region)


def clean(raw: RawSeries) -> RawSeries:
    """Drop duplicate timestamps (first occurrence wins), sort, insert missing
    hours and forward-fill missing loads."""
    if len(raw) == 0:
        raise IngestError("no records to clean")
    ts = raw.timestamps.astype("datetime64[h]")
    _, first = np.unique(ts, return_index=True)  # sorted unique, index of first occurrence
    ts = ts[first]
    load = raw.load[first]

    start, stop = ts[0], ts[-1]
    grid = np.arange(start, stop + HOUR, HOUR)
    filled = np.full(len(grid), np.nan)
    filled[(ts - start).astype(np.int64)] = load

    if np.isnan(filled[0]):
        raise IngestError("leading gap: first hour has no value to forward-fill from")
    filled = pd.Series(filled).ffill().to_numpy()
    return RawSeries(grid.astype("datetime64[s]"), filled, raw.region_id)


@dataclass(frozen=True)
class PeriodPairs:
    """Raw (unnormalized) multi-resolution pairs."""

    t: np.ndarray  # (n,) period index
    x0: np.ndarray  # (n,) coarse aggregate
    y: np.ndarray  # (n, K) fine values
    period_start: np.ndarray  # (n,) datetime64[s]
    aggregation: str = "mean"

    @property
    def K(self) -> int:
        return self.y.shape[1]

    def __len__(self) -> int:
        return len(self.t)


def aggregate(blocks: np.ndarray, aggregation: str) -> np.ndarray:
    if aggregation == "mean":
        return blocks.mean(axis=-1)
    if aggregation == "sum":
        return blocks.sum(axis=-1)
    raise ValueError(f"aggregation must be 'sum' or 'mean', got {aggregation!r}")


def make_pairs(raw: RawSeries, K: int, aggregation: Aggregation = "mean",
               align_midnight: bool = False) -> PeriodPairs:
    """Cut a cleaned series into consecutive K-blocks; the trailing partial
    block is dropped. With ``align_midnight`` leading hours before the first
    00:00 are skipped so daily blocks follow the calendar."""
    values = np.asarray(raw.load, dtype=np.float64)
    stamps = raw.timestamps
    if align_midnight and len(stamps):
        hours = stamps.astype("datetime64[h]").astype(np.int64) % 24
        zero = np.flatnonzero(hours == 0)
        skip = int(zero[0]) if len(zero) else len(values)
        values, stamps = values[skip:], stamps[skip:]
    n = len(values) // K
    if n < 1:
        raise IngestError(f"fewer than one full period of {K} values")
    y = values[: n * K].reshape(n, K).copy()
    return PeriodPairs(
        t=np.arange(n),
        x0=aggregate(y, aggregation),
        y=y,
        period_start=stamps[: n * K : K].copy(),
        aggregation=aggregation,
    )


@dataclass(frozen=True)
class NormalizationStats:
    mean_x0: float
    std_x0: float
    mean_y: float
    std_y: float

    def norm_x0(self, v):
        return (np.asarray(v, dtype=np.float64) - self.mean_x0) / self.std_x0

    def denorm_x0(self, v):
        return np.asarray(v, dtype=np.float64) * self.std_x0 + self.mean_x0

    def norm_y(self, v):
        return (np.asarray(v, dtype=np.float64) - self.mean_y) / self.std_y

    def denorm_y(self, v):
        return np.asarray(v, dtype=np.float64) * self.std_y + self.mean_y

    @classmethod
    def fit(cls, x0: np.ndarray, y: np.ndarray) -> "NormalizationStats":
        sx, sy = float(np.std(x0)), float(np.std(y))  # population std
        if not (sx > 0 and sy > 0):
            raise IngestError("degenerate training data: zero variance in x0 or y")
        return cls(float(np.mean(x0)), sx, float(np.mean(y)), sy)


@dataclass(frozen=True)
class MultiResolutionDataset:
    t: np.ndarray
    x0: np.ndarray  # normalized
    y: np.ndarray  # normalized, (n, K)
    period_start: np.ndarray
    stats: NormalizationStats
    split_tag: str
    aggregation: str = "mean"

    @property
    def K(self) -> int:
        return self.y.shape[1]

    def __len__(self) -> int:
        return len(self.t)

    def raw_x0(self) -> np.ndarray:
        return self.stats.denorm_x0(self.x0)

    def raw_y(self) -> np.ndarray:
        return self.stats.denorm_y(self.y)


def normalize_pairs(pairs: PeriodPairs, stats: NormalizationStats, split_tag: str) -> MultiResolutionDataset:
    return MultiResolutionDataset(
        t=pairs.t.copy(),
        x0=stats.norm_x0(pairs.x0),
        y=stats.norm_y(pairs.y),
        period_start=pairs.period_start.copy(),
        stats=stats,
        split_tag=split_tag,
        aggregation=pairs.aggregation,
    )


def _slice(pairs: PeriodPairs, sl: slice) -> PeriodPairs:
    return PeriodPairs(pairs.t[sl], pairs.x0[sl], pairs.y[sl], pairs.period_start[sl], pairs.aggregation)


def split_pairs(pairs: PeriodPairs, train_fraction: float) -> tuple[PeriodPairs, PeriodPairs]:
    if not 0.0 < train_fraction < 1.0:
        raise IngestError("train_fraction must lie in (0, 1)")
    n = len(pairs)
    if n < 2:
        raise IngestError("need at least 2 periods to split")
    n_train = int(np.floor(train_fraction * n))
    if n_train < 1:
        raise IngestError("empty training partition")
    return _slice(pairs, slice(0, n_train)), _slice(pairs, slice(n_train, n))


def split_and_normalize(pairs: PeriodPairs, train_fraction: float = 0.8,
                        K: int | None = None) -> tuple[MultiResolutionDataset, MultiResolutionDataset]:
    """Chronological split; z-score statistics come from the training part only."""
    if K is not None and pairs.K != K:
        raise IngestError(f"pairs have K={pairs.K}, expected {K}")
    train, test = split_pairs(pairs, train_fraction)
    stats = NormalizationStats.fit(train.x0, train.y)
    return normalize_pairs(train, stats, "train"), normalize_pairs(test, stats, "test")
