"""Background augmentation for LNES windows.

A human-free background event recording is windowed into LNES frames and
composited under the person: the body mask erases the background, the two
frames are added, and the result is clamped back to [0, 1]. Inside the mask
the output equals the person frame exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventStream, TimeWindow
from .lnes import LnesFrame, encode_lnes


def upsample_mask_nearest(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor upsampling that keeps the mask binary."""
    mask = np.asarray(mask)
    if mask.ndim == 3 and mask.shape[2] == 1:
        mask = mask[:, :, 0]
    if mask.ndim != 2:
        raise ValueError("mask must be HxW or HxWx1")
    mh, mw = mask.shape
    if (mh, mw) == (height, width):
        return mask.astype(np.float32)
    if height % mh or width % mw:
        raise ValueError(f"cannot upsample {mh}x{mw} mask to {height}x{width}")
    return np.repeat(np.repeat(mask, height // mh, axis=0),
                     width // mw, axis=1).astype(np.float32)


def augment_lnes(lq: LnesFrame, mask: np.ndarray, bg: LnesFrame) -> LnesFrame:
    """Composite a person LNES onto a background LNES.

    out = clamp(bg * (1 - mask) + lq, 0, 1), with the mask broadcast over
    both polarity channels. A low-resolution mask is upsampled first.
    """
    if bg.values.shape != lq.values.shape:
        raise ValueError(f"background shape {bg.values.shape} does not match "
                         f"person frame {lq.values.shape}")
    m = upsample_mask_nearest(mask, lq.height, lq.width)
    vals = bg.values * (1.0 - m[:, :, None]) + lq.values
    vals = np.clip(vals, 0.0, 1.0).astype(np.float32)
    return LnesFrame(vals, lq.window)


@dataclass
class AugmentSource:
    """Sequential background-window supplier with wraparound.

    Windows are cut from the background stream at a fixed stride so a fresh
    source replays the identical window sequence, which keeps augmented
    training epochs reproducible.
    """

    background: EventStream
    window_us: int
    cursor: int = 0

    def __post_init__(self):
        if self.window_us <= 0:
            raise ValueError("window duration must be positive")
        if len(self.background) == 0:
            raise ValueError("background stream is empty")
        t = self.background.t
        self._t_first = int(t[0])
        self._t_last = int(t[-1])
        span = self._t_last - self._t_first
        self._num_windows = max(1, span // self.window_us)

    def next_window(self) -> LnesFrame:
        k = self.cursor % self._num_windows
        self.cursor += 1
        t0 = self._t_first + k * self.window_us
        window = TimeWindow(t0, self.window_us)
        t = self.background.t
        i0 = int(np.searchsorted(t, t0, side="left"))
        i1 = int(np.searchsorted(t, window.t_end, side="left"))
        return encode_lnes(self.background.slice(i0, i1), window,
                           self.background.height, self.background.width)

    def augment(self, lq: LnesFrame, mask: np.ndarray) -> LnesFrame:
        return augment_lnes(lq, mask, self.next_window())
