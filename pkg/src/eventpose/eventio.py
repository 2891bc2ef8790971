"""Event stream serialisation: binary record files and CSV interop.

Binary layout (little endian):
    header, 16 bytes: magic "EVT1", width u16, height u16, record count u64
    records, 14 bytes each: x u16, y u16, t u64 (microseconds), p i8, pad u8
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .events import EventStream

MAGIC = b"EVT1"
HEADER = struct.Struct("<4sHHQ")

RECORD_DTYPE = np.dtype([
    ("x", "<u2"),
    ("y", "<u2"),
    ("t", "<u8"),
    ("p", "<i1"),
    ("pad", "<u1"),
])


def write_events(path: str | Path, stream: EventStream):
    records = np.zeros(len(stream), dtype=RECORD_DTYPE)
    records["x"] = stream.x
    records["y"] = stream.y
    records["t"] = stream.t
    records["p"] = stream.p
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, stream.width, stream.height, len(stream)))
        fh.write(records.tobytes())


def read_events(path: str | Path) -> EventStream:
    with open(path, "rb") as fh:
        header = fh.read(HEADER.size)
        if len(header) != HEADER.size:
            raise ValueError(f"{path}: truncated event file header")
        magic, width, height, count = HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        data = fh.read(count * RECORD_DTYPE.itemsize)
    if len(data) != count * RECORD_DTYPE.itemsize:
        raise ValueError(f"{path}: expected {count} records, file is short")
    records = np.frombuffer(data, dtype=RECORD_DTYPE)
    return EventStream(
        records["x"].astype(np.int64), records["y"].astype(np.int64),
        records["t"].astype(np.int64), records["p"].astype(np.int8),
        width, height,
    )


def write_events_csv(path: str | Path, stream: EventStream):
    """Text form, one `t,x,y,p` line per event."""
    with open(path, "w") as fh:
        for i in range(len(stream)):
            fh.write(f"{stream.t[i]},{stream.x[i]},{stream.y[i]},{stream.p[i]}\n")


def read_events_csv(path: str | Path, width: int, height: int) -> EventStream:
    rows = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    if rows.size == 0:
        return EventStream.empty(width, height)
    if rows.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 columns t,x,y,p")
    return EventStream(rows[:, 1], rows[:, 2], rows[:, 0], rows[:, 3], width, height)
