import numpy as np
import pytest

from eventpose.eventio import (
    HEADER,
    MAGIC,
    RECORD_DTYPE,
    read_events,
    read_events_csv,
    write_events,
    write_events_csv,
)
from eventpose.events import EventStream
from conftest import random_stream


def test_record_is_14_bytes():
    assert RECORD_DTYPE.itemsize == 14
    assert HEADER.size == 16


def test_binary_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    s = random_stream(rng, 777, width=640, height=480, t_max=10**7)
    path = tmp_path / "events.bin"
    write_events(path, s)
    back = read_events(path)
    assert (back.width, back.height) == (640, 480)
    np.testing.assert_array_equal(back.x, s.x)
    np.testing.assert_array_equal(back.y, s.y)
    np.testing.assert_array_equal(back.t, s.t)
    np.testing.assert_array_equal(back.p, s.p)


def test_binary_round_trip_empty(tmp_path):
    path = tmp_path / "empty.bin"
    write_events(path, EventStream.empty(32, 24))
    back = read_events(path)
    assert len(back) == 0
    assert (back.width, back.height) == (32, 24)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(ValueError, match="magic"):
        read_events(path)


def test_truncated_header_rejected(tmp_path):
    path = tmp_path / "short.bin"
    path.write_bytes(MAGIC + b"\x00\x01")
    with pytest.raises(ValueError, match="truncated"):
        read_events(path)


def test_truncated_body_rejected(tmp_path):
    path = tmp_path / "cut.bin"
    path.write_bytes(HEADER.pack(MAGIC, 8, 8, 5) + b"\x00" * 20)
    with pytest.raises(ValueError, match="short"):
        read_events(path)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    s = random_stream(rng, 50, width=16, height=12, t_max=999)
    path = tmp_path / "events.csv"
    write_events_csv(path, s)
    back = read_events_csv(path, 16, 12)
    np.testing.assert_array_equal(back.t, s.t)
    np.testing.assert_array_equal(back.x, s.x)


def test_csv_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    back = read_events_csv(path, 8, 8)
    assert len(back) == 0


def test_csv_wrong_arity(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2,3\n4,5,6\n")
    with pytest.raises(ValueError, match="4 columns"):
        read_events_csv(path, 8, 8)
