"""Event synthesis from brightness videos.

Per pixel the simulator tracks a reference log brightness anchored at the
last fired event. Log brightness is interpolated linearly in time between
frames, one event is emitted per full threshold crossing at the
interpolated crossing instant, and the reference advances by one threshold
step per event. Optional per-pixel threshold jitter and Poisson background
noise; with both disabled the output is an exact deterministic function of
the input video.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import EventStream

# Relative slack when counting threshold crossings, so that a change of
# exactly k thresholds yields k events despite accumulated rounding.
_CROSSING_TOL = 1e-9


@dataclass(frozen=True)
class SimulatorConfig:
    threshold: float = 0.2          # log-intensity contrast threshold C
    threshold_jitter: float = 0.0   # relative std-dev of per-pixel thresholds
    noise_rate: float = 0.0         # spurious events per pixel per second
    log_eps: float = 1e-3           # additive constant before the log
    seed: int = 0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.log_eps <= 0:
            raise ValueError("log_eps must be positive")
        if self.threshold_jitter < 0 or self.noise_rate < 0:
            raise ValueError("jitter and noise rate must be non-negative")


@dataclass(frozen=True)
class BrightnessVideo:
    """Luminance frames in [0, 1] with strictly increasing microsecond stamps."""

    frames: np.ndarray      # (N, H, W) float
    timestamps: np.ndarray  # (N,) int64 microseconds

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        ts = np.asarray(self.timestamps, dtype=np.int64)
        if frames.ndim != 3:
            raise ValueError("frames must be a (N, H, W) array")
        if len(ts) != frames.shape[0]:
            raise ValueError("one timestamp per frame required")
        if len(ts) >= 2 and np.any(np.diff(ts) <= 0):
            raise ValueError("frame timestamps must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def log_brightness(frame: np.ndarray, log_eps: float) -> np.ndarray:
    return np.log(np.asarray(frame, dtype=np.float64) + log_eps)


def pixel_thresholds(cfg: SimulatorConfig, height: int, width: int) -> np.ndarray:
    """Per-pixel contrast thresholds, jittered multiplicatively around C."""
    c = np.full((height, width), cfg.threshold, dtype=np.float64)
    if cfg.threshold_jitter > 0:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x7)))
        factor = 1.0 + cfg.threshold_jitter * rng.standard_normal((height, width))
        c *= np.maximum(factor, 0.01)
    return c


def simulate(video: BrightnessVideo, cfg: SimulatorConfig) -> EventStream:
    """Convert a brightness video into a time-sorted event stream."""
    if video.frames.shape[0] < 2:
        raise ValueError("need at least 2 frames to generate events")
    h, w = video.height, video.width
    c_px = pixel_thresholds(cfg, h, w).ravel()
    ref = log_brightness(video.frames[0], cfg.log_eps).ravel()

    xs_all, ys_all, ts_all, ps_all = [], [], [], []
    cols = np.tile(np.arange(w, dtype=np.int64), h)
    rows = np.repeat(np.arange(h, dtype=np.int64), w)

    log_prev = ref.copy()
    for k in range(1, video.frames.shape[0]):
        log_next = log_brightness(video.frames[k], cfg.log_eps).ravel()
        t_a = int(video.timestamps[k - 1])
        t_b = int(video.timestamps[k])

        gap = log_next - ref
        pol = np.sign(gap).astype(np.int64)
        count = np.floor(np.abs(gap) / c_px + _CROSSING_TOL).astype(np.int64)
        fired = np.flatnonzero(count > 0)
        if fired.size:
            n = count[fired]
            idx = np.repeat(fired, n)
            # crossing index 1..n per pixel
            step = np.arange(len(idx), dtype=np.int64) - np.repeat(
                np.concatenate(([0], np.cumsum(n)[:-1])), n) + 1
            level = ref[idx] + step * pol[idx] * c_px[idx]
            frac = (level - log_prev[idx]) / (log_next[idx] - log_prev[idx])
            t_ev = t_a + frac * (t_b - t_a)
            t_int = np.clip(np.floor(t_ev).astype(np.int64), t_a + 1,
                            max(t_a + 1, t_b - 1))
            xs_all.append(cols[idx])
            ys_all.append(rows[idx])
            ts_all.append(t_int)
            ps_all.append(pol[idx].astype(np.int8))
            ref[fired] += n * pol[fired] * c_px[fired]
        log_prev = log_next

    if cfg.noise_rate > 0:
        noise = _noise_events(cfg, h, w, int(video.timestamps[0]), int(video.timestamps[-1]))
        if noise is not None:
            xs_all.append(noise[0]); ys_all.append(noise[1])
            ts_all.append(noise[2]); ps_all.append(noise[3])

    if not xs_all:
        return EventStream.empty(w, h)
    x = np.concatenate(xs_all)
    y = np.concatenate(ys_all)
    t = np.concatenate(ts_all)
    p = np.concatenate(ps_all)
    order = np.argsort(t, kind="stable")
    return EventStream(x[order], y[order], t[order], p[order], w, h, _validated=True)


def _noise_events(cfg: SimulatorConfig, h: int, w: int, t0: int, t1: int):
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x9)))
    duration_s = (t1 - t0) / 1e6
    counts = rng.poisson(cfg.noise_rate * duration_s, h * w)
    total = int(counts.sum())
    if total == 0:
        return None
    idx = np.repeat(np.arange(h * w, dtype=np.int64), counts)
    t = np.clip((t0 + rng.uniform(0, t1 - t0, total)).astype(np.int64), t0 + 1, t1 - 1)
    p = rng.choice(np.array([-1, 1], dtype=np.int8), total)
    return idx % w, idx // w, t, p


def reconstruct_log_brightness(stream: EventStream, cfg: SimulatorConfig,
                               initial: np.ndarray) -> np.ndarray:
    """Integrate polarities back into a log-brightness image.

    Exact inverse of the noise-free, jitter-free simulator up to one
    threshold of residual per pixel: returns initial + C * sum(p).
    """
    initial = np.asarray(initial, dtype=np.float64)
    if initial.shape != (stream.height, stream.width):
        raise ValueError("initial image shape does not match the stream sensor")
    polarity_sum = np.zeros(stream.height * stream.width, dtype=np.int64)
    np.add.at(polarity_sum, stream.y * stream.width + stream.x, stream.p.astype(np.int64))
    return initial + cfg.threshold * polarity_sum.reshape(initial.shape)


def load_brightness_video(directory: str | Path) -> BrightnessVideo:
    """Read a frame-directory video: numbered PGM/PPM files + timestamp manifest.

    The manifest `timestamps.txt` holds one `frame_index timestamp_us` pair
    per line; frame files are matched as frame_<index>.(pgm|ppm).
    """
    from PIL import Image

    directory = Path(directory)
    manifest = directory / "timestamps.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"missing timestamp manifest {manifest}")
    frames, stamps = [], []
    for raw in manifest.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        idx_s, ts_s = line.split()
        idx, ts = int(idx_s), int(ts_s)
        path = None
        for ext in ("pgm", "ppm", "png"):
            cand = directory / f"frame_{idx:06d}.{ext}"
            if cand.exists():
                path = cand
                break
        if path is None:
            raise FileNotFoundError(f"no frame file for index {idx} in {directory}")
        img = Image.open(path).convert("L")
        frames.append(np.asarray(img, dtype=np.float64) / 255.0)
        stamps.append(ts)
    return BrightnessVideo(np.stack(frames), np.asarray(stamps, dtype=np.int64))


def save_brightness_video(directory: str | Path, video: BrightnessVideo):
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(video.frames.shape[0]):
        img = Image.fromarray(
            np.rint(np.clip(video.frames[i], 0, 1) * 255).astype(np.uint8), mode="L")
        img.save(directory / f"frame_{i:06d}.pgm")
        lines.append(f"{i} {int(video.timestamps[i])}")
    (directory / "timestamps.txt").write_text("\n".join(lines) + "\n")
