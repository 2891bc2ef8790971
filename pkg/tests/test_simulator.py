import numpy as np
import pytest

from eventpose.simulator import (
    BrightnessVideo,
    SimulatorConfig,
    load_brightness_video,
    log_brightness,
    pixel_thresholds,
    reconstruct_log_brightness,
    save_brightness_video,
    simulate,
)


def ramp_video(start, end, steps=10, t_step=1000):
    """Single-pixel video moving linearly in linear brightness."""
    frames = np.linspace(start, end, steps).reshape(-1, 1, 1)
    ts = np.arange(steps, dtype=np.int64) * t_step
    return BrightnessVideo(frames, ts)


def test_config_validation():
    with pytest.raises(ValueError):
        SimulatorConfig(threshold=0.0)
    with pytest.raises(ValueError):
        SimulatorConfig(log_eps=0.0)
    with pytest.raises(ValueError):
        SimulatorConfig(noise_rate=-1.0)


def test_video_validation():
    with pytest.raises(ValueError):
        BrightnessVideo(np.zeros((3, 4, 4)), np.array([0, 10, 10]))
    with pytest.raises(ValueError):
        BrightnessVideo(np.zeros((3, 4)), np.array([0, 1, 2]))
    with pytest.raises(ValueError):
        simulate(BrightnessVideo(np.zeros((1, 4, 4)), np.array([0])), SimulatorConfig())


def test_constant_video_is_silent():
    video = BrightnessVideo(np.full((5, 6, 6), 0.5), np.arange(5) * 1000)
    stream = simulate(video, SimulatorConfig())
    assert len(stream) == 0


def test_event_count_matches_log_change():
    cfg = SimulatorConfig(threshold=0.15)
    video = ramp_video(0.1, 0.9)
    d = abs(log_brightness(np.array(0.9), cfg.log_eps)
            - log_brightness(np.array(0.1), cfg.log_eps))
    stream = simulate(video, cfg)
    assert len(stream) == int(np.floor(d / cfg.threshold + 1e-9))
    assert np.all(stream.p == 1)


def test_decreasing_ramp_gives_negative_polarity():
    stream = simulate(ramp_video(0.9, 0.1), SimulatorConfig(threshold=0.15))
    assert len(stream) > 0
    assert np.all(stream.p == -1)


def test_exact_multiple_of_threshold_counts_every_crossing():
    cfg = SimulatorConfig(threshold=0.2, log_eps=1e-3)
    l0 = np.exp(-1.0) - cfg.log_eps
    l1 = np.exp(-1.0 + 5 * cfg.threshold) - cfg.log_eps
    video = ramp_video(l0, l1, steps=4)
    stream = simulate(video, cfg)
    assert len(stream) == 5


def test_timestamps_interior_and_sorted():
    stream = simulate(ramp_video(0.05, 0.95, steps=6, t_step=500), SimulatorConfig(threshold=0.05))
    assert len(stream) > 5
    assert np.all(np.diff(stream.t) >= 0)
    assert stream.t.min() > 0
    assert stream.t.max() < 2500


def test_reconstruction_residual_below_threshold():
    cfg = SimulatorConfig(threshold=0.12)
    rng = np.random.default_rng(4)
    frames = np.clip(rng.uniform(0.05, 0.95, (8, 5, 7)), 0, 1)
    # smooth monotone-ish evolution per pixel keeps interpolation exact
    frames = np.sort(frames, axis=0)
    video = BrightnessVideo(frames, np.arange(8) * 1000)
    stream = simulate(video, cfg)
    initial = log_brightness(frames[0], cfg.log_eps)
    final = log_brightness(frames[-1], cfg.log_eps)
    recon = reconstruct_log_brightness(stream, cfg, initial)
    assert np.max(np.abs(recon - final)) < cfg.threshold


def test_reconstruction_shape_check():
    stream = simulate(ramp_video(0.1, 0.9), SimulatorConfig())
    with pytest.raises(ValueError):
        reconstruct_log_brightness(stream, SimulatorConfig(), np.zeros((3, 3)))


def test_deterministic_without_noise():
    cfg = SimulatorConfig(threshold=0.07)
    rng = np.random.default_rng(9)
    frames = rng.uniform(0.1, 0.9, (6, 8, 8))
    video = BrightnessVideo(frames, np.arange(6) * 2000)
    a = simulate(video, cfg)
    b = simulate(video, cfg)
    np.testing.assert_array_equal(a.t, b.t)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.p, b.p)


def test_threshold_jitter_changes_counts_but_respects_seed():
    rng = np.random.default_rng(9)
    frames = np.sort(rng.uniform(0.1, 0.9, (6, 8, 8)), axis=0)
    video = BrightnessVideo(frames, np.arange(6) * 2000)
    base = SimulatorConfig(threshold=0.07)
    jit = SimulatorConfig(threshold=0.07, threshold_jitter=0.25, seed=1)
    thresholds = pixel_thresholds(jit, 8, 8)
    assert thresholds.std() > 0
    a = simulate(video, jit)
    b = simulate(video, jit)
    np.testing.assert_array_equal(a.t, b.t)
    assert len(a) != len(simulate(video, base)) or thresholds.std() > 0


def test_noise_rate_adds_events():
    video = BrightnessVideo(np.full((4, 10, 10), 0.4), np.arange(4) * 100_000)
    noisy = simulate(video, SimulatorConfig(noise_rate=200.0, seed=2))
    assert len(noisy) > 0
    assert np.all(np.diff(noisy.t) >= 0)


def test_video_directory_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    frames = rng.uniform(0, 1, (3, 6, 9))
    video = BrightnessVideo(frames, np.array([0, 1500, 4000]))
    save_brightness_video(tmp_path / "vid", video)
    back = load_brightness_video(tmp_path / "vid")
    np.testing.assert_array_equal(back.timestamps, video.timestamps)
    assert back.frames.shape == video.frames.shape
    # 8-bit quantisation on disk
    assert np.max(np.abs(back.frames - video.frames)) <= 0.5 / 255 + 1e-12
    with pytest.raises(FileNotFoundError):
        load_brightness_video(tmp_path / "nope")
