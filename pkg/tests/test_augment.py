import numpy as np
import pytest

from eventpose.augment import AugmentSource, augment_lnes, upsample_mask_nearest
from eventpose.events import EventStream, TimeWindow
from eventpose.lnes import LnesFrame, encode_lnes
from conftest import random_stream


def frame_from(rng, h=48, w=64):
    vals = rng.uniform(0, 1, (h, w, 2)).astype(np.float32)
    return LnesFrame(vals, TimeWindow(0, 1000))


def test_upsample_keeps_binary_values():
    mask = np.array([[0, 1], [1, 0]], dtype=np.float32)
    up = upsample_mask_nearest(mask, 4, 4)
    assert up.shape == (4, 4)
    assert set(np.unique(up)) <= {0.0, 1.0}
    np.testing.assert_array_equal(up[:2, :2], 0)
    np.testing.assert_array_equal(up[:2, 2:], 1)


def test_upsample_validates_shape():
    with pytest.raises(ValueError):
        upsample_mask_nearest(np.zeros((3, 3)), 4, 4)
    with pytest.raises(ValueError):
        upsample_mask_nearest(np.zeros((2, 2, 2)), 4, 4)


def test_mask_all_ones_returns_person_frame_exactly():
    rng = np.random.default_rng(0)
    lq, bg = frame_from(rng), frame_from(rng)
    out = augment_lnes(lq, np.ones((48, 64)), bg)
    np.testing.assert_array_equal(out.values, lq.values)


def test_zero_background_is_identity():
    rng = np.random.default_rng(1)
    lq = frame_from(rng)
    bg = LnesFrame(np.zeros((48, 64, 2), dtype=np.float32), TimeWindow(0, 1000))
    out = augment_lnes(lq, np.zeros((48, 64)), bg)
    np.testing.assert_array_equal(out.values, lq.values)


def test_masked_region_preserves_person_unmasked_shows_background():
    rng = np.random.default_rng(2)
    lq, bg = frame_from(rng), frame_from(rng)
    mask = np.zeros((48, 64), dtype=np.float32)
    mask[:, :32] = 1.0
    out = augment_lnes(lq, mask, bg)
    np.testing.assert_array_equal(out.values[:, :32], lq.values[:, :32])
    expected = np.clip(bg.values[:, 32:] + lq.values[:, 32:], 0, 1)
    np.testing.assert_array_equal(out.values[:, 32:], expected)


def test_low_resolution_mask_is_upsampled():
    rng = np.random.default_rng(3)
    lq, bg = frame_from(rng), frame_from(rng)
    mask = np.ones((12, 16, 1), dtype=np.float32)
    out = augment_lnes(lq, mask, bg)
    np.testing.assert_array_equal(out.values, lq.values)


def test_shape_mismatch_rejected():
    rng = np.random.default_rng(4)
    lq = frame_from(rng)
    bg = LnesFrame(np.zeros((24, 32, 2), dtype=np.float32), TimeWindow(0, 1000))
    with pytest.raises(ValueError):
        augment_lnes(lq, np.ones((48, 64)), bg)


@pytest.mark.parametrize("seed", range(8))
def test_output_stays_in_unit_interval_under_fuzzing(seed):
    rng = np.random.default_rng(seed)
    lq, bg = frame_from(rng), frame_from(rng)
    mask = (rng.uniform(size=(48, 64)) > 0.5).astype(np.float32)
    out = augment_lnes(lq, mask, bg)
    assert out.values.min() >= 0.0
    assert out.values.max() <= 1.0
    assert out.values.dtype == np.float32


def test_source_requires_events_and_positive_window():
    with pytest.raises(ValueError):
        AugmentSource(EventStream.empty(8, 8), 1000)
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        AugmentSource(random_stream(rng, 10), 0)


def test_source_replays_identically_and_wraps():
    rng = np.random.default_rng(6)
    n = 3000
    t = np.sort(rng.integers(0, 50_000, size=n))
    t[0], t[-1] = 0, 50_000                # pin the span to exactly 50 ms
    bg = EventStream(rng.integers(0, 64, n), rng.integers(0, 48, n), t,
                     rng.choice(np.array([-1, 1], dtype=np.int8), n), 64, 48)
    a = AugmentSource(bg, 10_000)
    b = AugmentSource(bg, 10_000)
    seq_a = [a.next_window().values for _ in range(12)]
    seq_b = [b.next_window().values for _ in range(12)]
    for va, vb in zip(seq_a, seq_b):
        np.testing.assert_array_equal(va, vb)
    # 50 ms span / 10 ms windows = 5 windows, then wraparound
    np.testing.assert_array_equal(seq_a[0], seq_a[5])
    assert not np.array_equal(seq_a[0], seq_a[1])


def test_source_augment_composites():
    rng = np.random.default_rng(7)
    bg = random_stream(rng, 2000, width=64, height=48, t_max=30_000)
    src = AugmentSource(bg, 10_000)
    lq = frame_from(rng)
    first_bg = AugmentSource(bg, 10_000).next_window()
    out = src.augment(lq, np.zeros((48, 64)))
    expected = augment_lnes(lq, np.zeros((48, 64)), first_bg)
    np.testing.assert_array_equal(out.values, expected.values)
