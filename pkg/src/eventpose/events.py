"""Event stream domain types and time windowing.

Events are per-pixel brightness-change tuples (x, y, t, p) with integer
microsecond timestamps and polarity +1/-1. Streams keep the four fields as
column arrays so that windowing and encoding stay vectorised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class TimeWindow:
    """Half-open-by-convention window [t0, t0 + duration] in microseconds.

    The window is inclusive at both ends: an event at exactly t0 + duration
    still belongs to it.
    """

    t0: int
    duration: int

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"window duration must be positive, got {self.duration}")

    @property
    def t_end(self) -> int:
        return self.t0 + self.duration


@dataclass(frozen=True)
class EventStream:
    """Time-ordered event columns plus the sensor geometry they live on."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int
    _validated: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.int64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.int64))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=np.int8))
        if not (len(self.x) == len(self.y) == len(self.t) == len(self.p)):
            raise ValueError("event columns must have equal length")
        if not self._validated:
            self.validate()
            object.__setattr__(self, "_validated", True)

    def validate(self):
        if len(self.t) and np.any(np.diff(self.t) < 0):
            raise ValueError("event timestamps must be non-decreasing")
        if len(self.t) and self.t[0] < 0:
            raise ValueError("event timestamps must be non-negative")
        bad_p = ~np.isin(self.p, (-1, 1))
        if np.any(bad_p):
            raise ValueError(f"polarity must be -1 or +1, got {self.p[bad_p][:5]}")
        if len(self.x) and (self.x.min() < 0 or self.x.max() >= self.width):
            raise ValueError("event x out of sensor bounds")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.height):
            raise ValueError("event y out of sensor bounds")

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def slice(self, i0: int, i1: int) -> "EventStream":
        return EventStream(
            self.x[i0:i1], self.y[i0:i1], self.t[i0:i1], self.p[i0:i1],
            self.width, self.height, _validated=True,
        )

    @classmethod
    def from_events(cls, events: Sequence[Event], width: int, height: int) -> "EventStream":
        if not events:
            return cls.empty(width, height)
        arr = np.asarray(events, dtype=np.int64)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height, _validated=True)

    def concat(self, other: "EventStream") -> "EventStream":
        if (other.width, other.height) != (self.width, self.height):
            raise ValueError("cannot concatenate streams with different sensor sizes")
        return EventStream(
            np.concatenate([self.x, other.x]),
            np.concatenate([self.y, other.y]),
            np.concatenate([self.t, other.t]),
            np.concatenate([self.p, other.p]),
            self.width, self.height,
        )


def window_events(stream: EventStream, duration_us: int) -> list[tuple[TimeWindow, EventStream]]:
    """Partition a stream into back-to-back event-anchored windows.

    Each window starts at the timestamp of the first unconsumed event and
    contains every event with t - t0 <= duration_us. The next window starts
    at the first event beyond that. Empty stream gives an empty list.
    """
    return list(iter_windows(stream, duration_us))


def iter_windows(stream: EventStream, duration_us: int) -> Iterator[tuple[TimeWindow, EventStream]]:
    if duration_us <= 0:
        raise ValueError("window duration must be positive")
    t = stream.t
    n = len(t)
    i0 = 0
    while i0 < n:
        t0 = int(t[i0])
        # all events with t <= t0 + duration (inclusive upper edge)
        i1 = int(np.searchsorted(t, t0 + duration_us, side="right"))
        yield TimeWindow(t0, duration_us), stream.slice(i0, i1)
        i0 = i1


def grid_windows(stream: EventStream, duration_us: int, t_start: int, t_end: int
                 ) -> Iterator[tuple[TimeWindow, EventStream]]:
    """Fixed-stride windows [t_start + k*T, t_start + (k+1)*T) covering [t_start, t_end).

    Unlike event-anchored windows these may be empty; silent stretches still
    produce a window. Used by dataset generation and live-mode streaming.
    """
    if duration_us <= 0:
        raise ValueError("window duration must be positive")
    t = stream.t
    t0 = t_start
    while t0 < t_end:
        i0 = int(np.searchsorted(t, t0, side="left"))
        i1 = int(np.searchsorted(t, t0 + duration_us, side="left"))
        yield TimeWindow(t0, duration_us), stream.slice(i0, i1)
        t0 += duration_us
