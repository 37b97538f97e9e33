"""Synthetic six-axis force/torque traces and their preprocessing."""

from __future__ import annotations

from typing import Union

import numpy as np

from mmbt.bt import TimeSeries

CHANNELS = 6


class WindowError(ValueError):
    pass


def synth_ft_trace(
    duration: float,
    rate: float,
    rng: np.random.Generator,
    contact: bool,
    noise: float = 0.05,
    bump: float = 5.0,
) -> TimeSeries:
    """Baseline drift plus white noise, with a contact bump on Fz/Tz when in contact.

    The trace only decorates the blackboard and trace files; decisions come
    from the sensor surrogates.
    """
    if duration <= 0 or rate <= 0:
        raise ValueError("duration and rate must be positive")
    n = max(1, int(round(duration * rate)))
    t = np.arange(n) / rate
    offset = rng.normal(0.0, 0.5, CHANNELS)
    slope = rng.normal(0.0, 0.1, CHANNELS)
    values = offset + np.outer(t, slope) + rng.normal(0.0, noise, (n, CHANNELS))
    if contact:
        centre = 0.3 * duration
        width = max(0.05 * duration, 1.0 / rate)
        shape = np.exp(-0.5 * ((t - centre) / width) ** 2)
        values[:, 2] += bump * shape
        values[:, 5] += 0.1 * bump * shape
    return TimeSeries(values, 1.0 / rate)


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    # centred window; shrinks near the edges
    n = len(x)
    left = (window - 1) // 2
    right = window // 2
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - left, 0)
    hi = np.minimum(idx + right + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)[:, None]


def preprocess_ft(series: Union[np.ndarray, TimeSeries], window: int):
    """Zero-centre each channel, then smooth with a centred moving average.

    The smoothed output is re-centred, since shrinking edge windows weight
    samples unequally. Returns the same type it was given.
    """
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    if not isinstance(window, (int, np.integer)) or window < 1 or window > len(values):
        raise WindowError(f"window must be in [1, {len(values)}], got {window!r}")
    out = values - values.mean(axis=0)
    if window > 1:
        out = _moving_average(out, int(window))
        out = out - out.mean(axis=0)
    if squeeze:
        out = out[:, 0]
    if isinstance(series, TimeSeries):
        return TimeSeries(out, series.period)
    return out
