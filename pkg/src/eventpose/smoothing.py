"""Low-latency jitter removal for pose streams (1-euro filter).

Each scalar channel is filtered independently: an exponential low-pass
whose cutoff rises with the smoothed speed of the signal, so slow motion
gets heavy smoothing and fast motion stays responsive. The first sample
passes through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np


@dataclass(frozen=True)
class OneEuroParams:
    min_cutoff: float = 1.0   # Hz
    beta: float = 0.007
    d_cutoff: float = 1.0     # Hz

    def __post_init__(self):
        if self.min_cutoff <= 0 or self.d_cutoff <= 0:
            raise ValueError("cutoff frequencies must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


def smoothing_factor(cutoff, period_s: float):
    """alpha = 1 / (1 + tau/Te) with tau = 1/(2*pi*cutoff)."""
    tau = 1.0 / (2.0 * math.pi * cutoff)
    return 1.0 / (1.0 + tau / period_s)


class OneEuroFilter:
    """Stateful per-stream filter over vector-valued samples."""

    def __init__(self, params: OneEuroParams = OneEuroParams()):
        self.params = params
        self._t = None
        self._x = None
        self._dx = None

    def filter(self, t_s: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self._t is None:
            self._t = float(t_s)
            self._x = x.copy()
            self._dx = np.zeros_like(x)
            return x.copy()
        te = float(t_s) - self._t
        if te <= 0:
            raise ValueError("timestamps must be strictly increasing")
        p = self.params
        dx = (x - self._x) / te
        a_d = smoothing_factor(p.d_cutoff, te)
        dx_hat = a_d * dx + (1.0 - a_d) * self._dx
        cutoff = p.min_cutoff + p.beta * np.abs(dx_hat)
        a = smoothing_factor(cutoff, te)
        x_hat = a * x + (1.0 - a) * self._x
        self._t = float(t_s)
        self._x = x_hat
        self._dx = dx_hat
        return x_hat.copy()


def one_euro(timestamps_s, values, params: OneEuroParams = OneEuroParams()):
    """Filter a whole signal; timestamps in seconds, strictly increasing."""
    values = np.asarray(values, dtype=np.float64)
    timestamps_s = np.asarray(timestamps_s, dtype=np.float64)
    if len(timestamps_s) != len(values):
        raise ValueError("timestamps and values must have equal length")
    filt = OneEuroFilter(params)
    return np.stack([filt.filter(t, v)
                     for t, v in zip(timestamps_s, values)]) \
        if len(values) else values.copy()
