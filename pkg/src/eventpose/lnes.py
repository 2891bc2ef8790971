"""LNES encoding: two-channel time surfaces of the latest event per pixel.

Channel 0 holds positive-polarity events, channel 1 negative ones. Each
touched entry stores the normalised timestamp (t - t0) / T of the most
recent event at that pixel and polarity; untouched entries stay zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream, TimeWindow

# LNES frame geometry used throughout the pipeline (rows x cols).
DEFAULT_HEIGHT = 192
DEFAULT_WIDTH = 256

POSITIVE_CHANNEL = 0
NEGATIVE_CHANNEL = 1


@dataclass(frozen=True)
class LnesFrame:
    """Dense H x W x 2 float32 time surface for one window."""

    values: np.ndarray
    window: TimeWindow

    def __post_init__(self):
        v = self.values
        if v.ndim != 3 or v.shape[2] != 2:
            raise ValueError(f"LNES values must be H x W x 2, got {v.shape}")
        if v.dtype != np.float32:
            raise ValueError(f"LNES values must be float32, got {v.dtype}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int, window: TimeWindow) -> "LnesFrame":
        return cls(np.zeros((height, width, 2), dtype=np.float32), window)


def encode_lnes(events: EventStream, window: TimeWindow,
                height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH) -> LnesFrame:
    """Encode one window of events into an LNES frame.

    Later events overwrite earlier ones at the same pixel and polarity;
    timestamps are normalised against the window so values lie in [0, 1].
    Events outside the window or the sensor raise ValueError.
    """
    n = len(events)
    frame = np.zeros(height * width * 2, dtype=np.float32)
    if n:
        t = events.t
        if int(t[0]) < window.t0 or int(t[-1]) > window.t_end:
            raise ValueError(
                f"events [{t[0]}, {t[-1]}] fall outside window "
                f"[{window.t0}, {window.t_end}]")
        if events.x.max() >= width or events.y.max() >= height:
            raise ValueError("event coordinates exceed the requested frame size")
        values = ((t - window.t0) / float(window.duration)).astype(np.float32)
        channel = (events.p < 0).astype(np.int64)  # +1 -> 0, -1 -> 1
        flat = (events.y * width + events.x) * 2 + channel
        # events are time-ordered, so in-order duplicate assignment keeps the latest
        frame[flat] = values
    return LnesFrame(frame.reshape(height, width, 2), window)


def encode_lnes_reference(events: EventStream, window: TimeWindow,
                          height: int = DEFAULT_HEIGHT, width: int = DEFAULT_WIDTH) -> LnesFrame:
    """Scalar per-event replay of the LNES update rule.

    Kept deliberately naive; serves as the oracle the vectorised encoder is
    checked against, value for value.
    """
    frame = np.zeros((height, width, 2), dtype=np.float32)
    for ev in events:
        if ev.t < window.t0 or ev.t > window.t_end:
            raise ValueError("event outside window")
        if not (0 <= ev.x < width and 0 <= ev.y < height):
            raise ValueError("event outside frame")
        ch = POSITIVE_CHANNEL if ev.p > 0 else NEGATIVE_CHANNEL
        frame[ev.y, ev.x, ch] = np.float32((ev.t - window.t0) / float(window.duration))
    return LnesFrame(frame, window)
