import numpy as np
import pytest

from eventpose.events import EventStream, TimeWindow
from eventpose.lnes import (
    LnesFrame,
    NEGATIVE_CHANNEL,
    POSITIVE_CHANNEL,
    encode_lnes,
    encode_lnes_reference,
)
from conftest import random_stream


def test_frame_shape_and_dtype_enforced():
    with pytest.raises(ValueError):
        LnesFrame(np.zeros((4, 4, 3), dtype=np.float32), TimeWindow(0, 10))
    with pytest.raises(ValueError):
        LnesFrame(np.zeros((4, 4, 2), dtype=np.float64), TimeWindow(0, 10))


def test_empty_window_is_all_zero():
    frame = encode_lnes(EventStream.empty(8, 8), TimeWindow(50, 100), 8, 8)
    assert frame.values.shape == (8, 8, 2)
    assert not frame.values.any()


def test_single_event_lands_at_normalised_time():
    s = EventStream([3], [2], [75], [1], 8, 8)
    frame = encode_lnes(s, TimeWindow(50, 100), 8, 8)
    assert frame.values[2, 3, POSITIVE_CHANNEL] == np.float32(0.25)
    assert frame.values[2, 3, NEGATIVE_CHANNEL] == 0
    assert frame.values.sum() == np.float32(0.25)


def test_polarities_use_separate_channels():
    s = EventStream([1, 1], [1, 1], [10, 20], [1, -1], 4, 4)
    frame = encode_lnes(s, TimeWindow(0, 100), 4, 4)
    assert frame.values[1, 1, POSITIVE_CHANNEL] == np.float32(0.1)
    assert frame.values[1, 1, NEGATIVE_CHANNEL] == np.float32(0.2)


def test_latest_event_wins_per_pixel_and_polarity():
    s = EventStream([2, 2, 2], [3, 3, 3], [10, 40, 90], [1, 1, 1], 4, 4)
    frame = encode_lnes(s, TimeWindow(0, 100), 4, 4)
    assert frame.values[3, 2, POSITIVE_CHANNEL] == np.float32(0.9)


def test_event_outside_window_rejected():
    s = EventStream([0], [0], [500], [1], 4, 4)
    with pytest.raises(ValueError):
        encode_lnes(s, TimeWindow(0, 100), 4, 4)
    with pytest.raises(ValueError):
        encode_lnes_reference(s, TimeWindow(0, 100), 4, 4)


def test_event_outside_frame_rejected():
    s = EventStream([6], [1], [50], [1], 8, 8)
    with pytest.raises(ValueError):
        encode_lnes(s, TimeWindow(0, 100), 4, 4)


def test_values_stay_in_unit_interval():
    rng = np.random.default_rng(3)
    s = random_stream(rng, 2000, width=32, height=24, t_max=9999)
    frame = encode_lnes(s, TimeWindow(0, 10_000), 24, 32)
    assert frame.values.min() >= 0.0
    assert frame.values.max() <= 1.0


@pytest.mark.parametrize("seed", range(5))
def test_vectorised_encoder_matches_replay_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, 400))
    s = random_stream(rng, n, width=40, height=30, t_max=5000)
    window = TimeWindow(0, 5000)
    fast = encode_lnes(s, window, 30, 40)
    slow = encode_lnes_reference(s, window, 30, 40)
    np.testing.assert_array_equal(fast.values, slow.values)
