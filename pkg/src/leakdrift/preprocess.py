"""Temporal-dependency handling: standard week, last-week differencing, window pairs and lag features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import WEEK, DAY, RangeError, SensorStream, ShapeError, SizeError, Window

DEFAULT_LAGS = (1, DAY, WEEK, 2 * WEEK)


@dataclass(frozen=True)
class StandardWeek:
    mean: np.ndarray
    std: np.ndarray

    @property
    def width(self) -> int:
        return self.mean.shape[1]


@dataclass(frozen=True)
class LagSpec:
    lags: tuple[int, ...] = DEFAULT_LAGS

    def __post_init__(self):
        lags = tuple(int(x) for x in self.lags)
        if not lags or len(set(lags)) != len(lags) or min(lags) < 1:
            raise ValueError(f"lags must be distinct positive offsets, got {self.lags}")
        object.__setattr__(self, "lags", lags)

    @property
    def max_lag(self) -> int:
        return max(self.lags)

    @classmethod
    def full(cls, max_lag: int = 2 * WEEK) -> LagSpec:
        return cls(tuple(range(1, max_lag + 1)))


def standard_week(stream: SensorStream) -> StandardWeek:
    n_weeks = len(stream) // WEEK
    if n_weeks < 1:
        raise SizeError(f"need at least one full week ({WEEK} samples), got {len(stream)}")
    # phase bins follow the absolute sample index, so a stream starting mid-week stays aligned
    phase0 = stream.t0 % WEEK
    x = np.roll(stream.values[: n_weeks * WEEK], phase0, axis=0).reshape(n_weeks, WEEK, -1)
    return StandardWeek(x.mean(axis=0), x.std(axis=0))


def subtract_standard_week(stream: SensorStream, template: StandardWeek) -> SensorStream:
    if template.width != stream.n_sensors:
        raise ShapeError(f"template has {template.width} sensors, stream {stream.n_sensors}")
    return stream.with_values(stream.values - template.mean[stream.t % WEEK])


def week_difference(stream: SensorStream) -> SensorStream:
    if len(stream) <= WEEK:
        raise SizeError(f"week differencing needs more than {WEEK} samples")
    x = stream.values
    return stream.with_values(x[WEEK:] - x[:-WEEK], t0=stream.t0 + WEEK)


def window_pair(stream: SensorStream, split: int, window_len: int = WEEK) -> tuple[Window, Window]:
    if split < window_len or split + window_len > len(stream):
        raise RangeError(f"split {split} leaves no room for two windows of {window_len} in {len(stream)} samples")
    return Window(stream, split - window_len, window_len), Window(stream, split, window_len)


def lag_matrix(stream, spec: LagSpec = LagSpec(), sensor: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Rows t = max_lag .. len-1 with features x[t - lag] (spec order) and target x[t]."""
    x = stream.values[:, sensor] if isinstance(stream, SensorStream) else np.asarray(stream, dtype=float)
    if x.ndim != 1:
        x = x[:, sensor]
    lmax = spec.max_lag
    if len(x) <= lmax:
        raise SizeError(f"series of {len(x)} samples too short for lag {lmax}")
    n = len(x) - lmax
    X = np.column_stack([x[lmax - lag: lmax - lag + n] for lag in spec.lags])
    return X, x[lmax:].copy()
