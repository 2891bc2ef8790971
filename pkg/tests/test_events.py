import numpy as np
import pytest

from eventpose.events import (
    Event,
    EventStream,
    TimeWindow,
    grid_windows,
    iter_windows,
    window_events,
)
from conftest import random_stream


def test_stream_columns_coerced_to_int():
    s = EventStream([1.0, 2.0], [3, 4], [10, 20], [1, -1], 8, 8)
    assert s.x.dtype == np.int64
    assert s.p.dtype == np.int8
    assert len(s) == 2
    assert s[1] == Event(2, 4, 20, -1)


def test_stream_rejects_bad_input():
    with pytest.raises(ValueError):
        EventStream([1], [1], [10, 20], [1, 1], 8, 8)
    with pytest.raises(ValueError):
        EventStream([1, 2], [1, 1], [20, 10], [1, 1], 8, 8)
    with pytest.raises(ValueError):
        EventStream([1], [1], [-5], [1], 8, 8)
    with pytest.raises(ValueError):
        EventStream([1], [1], [5], [0], 8, 8)
    with pytest.raises(ValueError):
        EventStream([9], [1], [5], [1], 8, 8)
    with pytest.raises(ValueError):
        EventStream([1], [9], [5], [1], 8, 8)


def test_empty_stream_iterates_nothing():
    s = EventStream.empty(16, 16)
    assert len(s) == 0
    assert list(s) == []
    assert window_events(s, 1000) == []


def test_concat_requires_matching_geometry():
    a = random_stream(np.random.default_rng(0), 5)
    b = random_stream(np.random.default_rng(1), 5, width=32)
    with pytest.raises(ValueError):
        a.concat(b)


def test_window_rejects_nonpositive_duration():
    s = random_stream(np.random.default_rng(0), 10)
    with pytest.raises(ValueError):
        list(iter_windows(s, 0))
    with pytest.raises(ValueError):
        TimeWindow(0, 0)


def test_event_anchored_windows_partition_the_stream():
    rng = np.random.default_rng(7)
    s = random_stream(rng, 500, t_max=50_000)
    wins = window_events(s, 1500)
    total = sum(len(evs) for _, evs in wins)
    assert total == len(s)
    for window, evs in wins:
        assert len(evs) > 0
        assert window.t0 == int(evs.t[0])
        assert int(evs.t[-1]) <= window.t_end
    # windows are disjoint and ordered
    for (wa, _), (wb, _) in zip(wins, wins[1:]):
        assert wb.t0 > wa.t_end


def test_window_upper_edge_is_inclusive():
    s = EventStream([0, 1, 2], [0, 0, 0], [100, 1100, 1101], [1, 1, 1], 8, 8)
    wins = window_events(s, 1000)
    assert len(wins) == 2
    assert len(wins[0][1]) == 2          # event at exactly t0+T stays inside
    assert wins[1][0].t0 == 1101


def test_grid_windows_cover_range_with_empties():
    s = EventStream([1, 1], [1, 1], [100, 4900], [1, -1], 8, 8)
    wins = list(grid_windows(s, 1000, 0, 5000))
    assert len(wins) == 5
    assert [w.t0 for w, _ in wins] == [0, 1000, 2000, 3000, 4000]
    counts = [len(evs) for _, evs in wins]
    assert counts == [1, 0, 0, 0, 1]


def test_grid_windows_half_open_upper_edge():
    s = EventStream([0, 0], [0, 0], [1000, 1999], [1, 1], 8, 8)
    wins = list(grid_windows(s, 1000, 0, 3000))
    counts = [len(evs) for _, evs in wins]
    assert counts == [0, 2, 0]
