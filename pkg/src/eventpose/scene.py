"""Fisheye scene rendering and ground-truth dataset generation.

The body is drawn as capsules around the skeleton bones, seen by the head
camera against a textured background plane. Rendering produces brightness
videos for the event simulator plus per-frame masks; dataset generation
windows the simulated events and pairs each window with the pose sampled
at its latest event, Gaussian joint heatmaps, and a body mask.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import FisheyeIntrinsics, default_intrinsics, load_intrinsics, \
    project, save_intrinsics, unproject
from .events import EventStream, TimeWindow, grid_windows
from .eventio import read_events, write_events
from .lnes import LnesFrame, encode_lnes
from .simulator import BrightnessVideo, SimulatorConfig, simulate
from .skeleton import BONES, JOINT_INDEX, NUM_JOINTS, Skeleton16, animate

HEATMAP_WIDTH = 64
HEATMAP_HEIGHT = 48
DEFAULT_SIGMA_PX = 2.0
MIN_RENDER_FPS = 100.0

# Capsule radius per bone (meters), aligned with skeleton.BONES order.
_BONE_RADII = {
    ("neck", "head"): 0.075,
    ("neck", "left_shoulder"): 0.065, ("neck", "right_shoulder"): 0.065,
    ("left_shoulder", "left_elbow"): 0.045, ("right_shoulder", "right_elbow"): 0.045,
    ("left_elbow", "left_wrist"): 0.04, ("right_elbow", "right_wrist"): 0.04,
    ("neck", "left_hip"): 0.075, ("neck", "right_hip"): 0.075,
    ("left_hip", "left_knee"): 0.06, ("right_hip", "right_knee"): 0.06,
    ("left_knee", "left_ankle"): 0.05, ("right_knee", "right_ankle"): 0.05,
    ("left_ankle", "left_foot"): 0.045, ("right_ankle", "right_foot"): 0.045,
}
_HEAD_RADIUS = 0.095


# report category for each built-in motion (the report's fixed label set)
MOTION_CATEGORY = {
    "still": "Inter. with env.",
    "wave": "Dance",
    "box": "Boxing",
    "squat": "Crouch",
    "walk-in-place": "Walk",
}


@dataclass(frozen=True)
class SampleRecord:
    """One training/eval sample: an LNES window with aligned ground truth."""

    lnes: LnesFrame
    joints_gt: Skeleton16
    heatmaps_gt: np.ndarray   # (48, 64, 16) float32
    mask_gt: np.ndarray       # (48, 64, 1) float32 in {0, 1}
    window: TimeWindow
    t_pose: int               # microseconds; timestamp the GT pose is sampled at


@dataclass(frozen=True)
class SequenceData:
    records: list
    events: EventStream
    intrinsics: FisheyeIntrinsics
    meta: dict


def camera_perturbation(seed: int, seq_index: int, max_deg: float = 3.0,
                        max_shift_m: float = 0.01):
    """Small per-sequence camera pose offset: (R, t) applied to world points."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, seq_index, 0xC)))
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, math.radians(max_deg))
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    rot = np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)
    shift = rng.standard_normal(3)
    shift *= max_shift_m * rng.uniform() ** (1 / 3) / np.linalg.norm(shift)
    return rot, shift


def transform_skeleton(skel: Skeleton16, rot: np.ndarray, shift: np.ndarray) -> Skeleton16:
    return Skeleton16(skel.joints @ rot.T + shift)


class SceneRenderer:
    """Rasterizes body capsules and the background plane through a fisheye lens."""

    def __init__(self, intr: FisheyeIntrinsics, bg_depth: float = 2.5,
                 bg_wavelength: float = 0.45, bg_drift=(0.12, 0.05),
                 bg_base: float = 0.35, bg_amp: float = 0.22):
        self.intr = intr
        self.bg_depth = float(bg_depth)
        self.bg_wavelength = float(bg_wavelength)
        self.bg_drift = (float(bg_drift[0]), float(bg_drift[1]))
        self.bg_base = float(bg_base)
        self.bg_amp = float(bg_amp)

        h, w = intr.height, intr.width
        uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
        pixels = np.stack([uu.ravel(), vv.ravel()], axis=1)
        rays = unproject(pixels, intr, check_bounds=False).reshape(h, w, 3)
        self.rays = rays

        # background plane z = -bg_depth, hit by rays heading forward
        dz = rays[..., 2]
        self.bg_valid = dz < -1e-6
        scale = np.where(self.bg_valid, -self.bg_depth / np.where(self.bg_valid, dz, -1.0), 0.0)
        self.bg_u = scale * rays[..., 0]
        self.bg_v = scale * rays[..., 1]

        # angular resolution at the center, used to size splat boxes
        cx, cy = intr.center
        pair = unproject(np.array([[cx, cy], [cx + 1.0, cy]]), intr, check_bounds=False)
        self.px_per_rad = 1.0 / math.acos(float(np.clip(np.dot(pair[0], pair[1]), -1, 1)))

        rmax = intr.max_radius()
        zmax = float(np.polynomial.polynomial.polyval(rmax, np.asarray(intr.poly)))
        self.max_view_angle = math.atan2(rmax, -zmax) if zmax < 0 else math.pi
        self._samples_cache = None

    # -- body sampling ----------------------------------------------------

    def body_samples(self, skel: Skeleton16):
        """Sphere samples (centers, radii, shades) whose union approximates the body."""
        pts, radii, shades = [], [], []
        joints = skel.joints
        for bone_i, (a_name, b_name) in enumerate(BONES):
            a = joints[JOINT_INDEX[a_name]]
            b = joints[JOINT_INDEX[b_name]]
            r = _BONE_RADII[(a_name, b_name)]
            length = float(np.linalg.norm(b - a))
            n = max(2, int(math.ceil(length / (0.5 * r))) + 1)
            ts = np.linspace(0.0, 1.0, n)
            seg = a[None, :] + ts[:, None] * (b - a)[None, :]
            pts.append(seg)
            radii.append(np.full(n, r))
            # stripes along the bone give the body interior some texture
            shades.append(0.62 + 0.18 * np.sin(6.0 * ts + 1.7 * bone_i))
        pts.append(joints[JOINT_INDEX["head"]][None, :])
        radii.append(np.array([_HEAD_RADIUS]))
        shades.append(np.array([0.78]))
        return np.concatenate(pts), np.concatenate(radii), np.concatenate(shades)

    # -- rasterization ----------------------------------------------------

    def _splat(self, centers, radii, shades, want_shade: bool):
        h, w = self.intr.height, self.intr.width
        mask = np.zeros((h, w), dtype=bool)
        alpha = np.zeros((h, w), dtype=np.float64) if want_shade else None
        shade = np.zeros((h, w), dtype=np.float64) if want_shade else None
        edge = 0.012  # soft silhouette width, meters

        norms = np.linalg.norm(centers, axis=1)
        angles = np.arctan2(np.hypot(centers[:, 0], centers[:, 1]), -centers[:, 2])
        keep = (norms > 1e-6) & (angles < self.max_view_angle - 1e-3)
        if not np.any(keep):
            return mask, alpha, shade
        uv = project(centers[keep], self.intr)
        kept_idx = np.flatnonzero(keep)

        for uvrow, i in zip(uv, kept_idx):
            c, r, s = centers[i], radii[i], shades[i]
            dist = norms[i]
            ang_r = math.asin(min(1.0, (r + edge) / dist)) if dist > r + edge else math.pi / 2
            half = int(math.ceil(ang_r * self.px_per_rad * 1.6)) + 3
            x0 = max(0, int(uvrow[0]) - half)
            x1 = min(w, int(uvrow[0]) + half + 1)
            y0 = max(0, int(uvrow[1]) - half)
            y1 = min(h, int(uvrow[1]) + half + 1)
            if x0 >= x1 or y0 >= y1:
                continue
            d = self.rays[y0:y1, x0:x1]
            dots = d @ c
            perp2 = np.maximum(dist * dist - dots * dots, 0.0)
            perp = np.sqrt(perp2)
            front = dots > 0
            inside = front & (perp < r)
            mask[y0:y1, x0:x1] |= inside
            if want_shade:
                a_pt = np.clip((r + edge - perp) / edge, 0.0, 1.0) * front
                np.maximum(alpha[y0:y1, x0:x1], a_pt, out=alpha[y0:y1, x0:x1])
                s_pt = np.where(inside, s + 0.22 * (1.0 - perp / r), 0.0)
                np.maximum(shade[y0:y1, x0:x1], s_pt, out=shade[y0:y1, x0:x1])
        return mask, alpha, shade

    def footprint(self, skel: Skeleton16) -> np.ndarray:
        """Full-resolution boolean body mask for one pose."""
        centers, radii, shades = self.body_samples(skel)
        mask, _, _ = self._splat(centers, radii, shades, want_shade=False)
        return mask

    def background(self, t: float) -> np.ndarray:
        lam = self.bg_wavelength
        u = self.bg_u + self.bg_drift[0] * t
        v = self.bg_v + self.bg_drift[1] * t
        tex = self.bg_base + self.bg_amp * np.sin(2 * math.pi * u / lam) * np.cos(2 * math.pi * v / lam)
        return np.where(self.bg_valid, tex, self.bg_base)

    def render(self, skel: Skeleton16, t: float):
        """One brightness frame in [0, 1] plus the body mask."""
        centers, radii, shades = self.body_samples(skel)
        mask, alpha, shade = self._splat(centers, radii, shades, want_shade=True)
        frame = self.background(t) * (1.0 - alpha) + shade * alpha
        return np.clip(frame, 0.0, 1.0), mask


def render_frames(motion: str, duration_s: float, fps: float = 480.0,
                  intr: FisheyeIntrinsics | None = None, *,
                  seed: int = 0, seq_index: int = 0, period: float | None = None,
                  bg_drift=(0.12, 0.05), perturb: bool = True):
    """Animate, rasterize, and timestamp a motion clip.

    Returns (video, skeletons, masks): the brightness video for the event
    simulator, the per-frame device-frame skeleton (camera perturbation
    already applied), and per-frame full-resolution masks.
    """
    if fps < MIN_RENDER_FPS:
        raise ValueError(f"fps must be >= {MIN_RENDER_FPS} for event synthesis")
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    if intr is None:
        intr = default_intrinsics()
    renderer = SceneRenderer(intr, bg_drift=bg_drift)
    if perturb:
        rot, shift = camera_perturbation(seed, seq_index)
    else:
        rot, shift = np.eye(3), np.zeros(3)

    n = int(round(duration_s * fps)) + 1
    step_us = 1e6 / fps
    stamps = np.round(np.arange(n) * step_us).astype(np.int64)
    frames = np.empty((n, intr.height, intr.width), dtype=np.float64)
    masks = np.empty((n, intr.height, intr.width), dtype=bool)
    skels = []
    for i in range(n):
        t = stamps[i] / 1e6
        skel = transform_skeleton(animate(motion, t, period), rot, shift)
        frames[i], masks[i] = renderer.render(skel, t)
        skels.append(skel)
    return BrightnessVideo(frames, stamps), skels, masks


# -- ground truth ---------------------------------------------------------

def heatmap_centers(skel: Skeleton16, intr: FisheyeIntrinsics):
    """Rounded heatmap-grid pixel per joint plus an in-view flag."""
    uv = project(skel.joints, intr)
    sx = HEATMAP_WIDTH / intr.width
    sy = HEATMAP_HEIGHT / intr.height
    cu = np.round((uv[:, 0] + 0.5) * sx - 0.5).astype(np.int64)
    cv = np.round((uv[:, 1] + 0.5) * sy - 0.5).astype(np.int64)
    angles = np.arctan2(np.hypot(skel.joints[:, 0], skel.joints[:, 1]),
                        -skel.joints[:, 2])
    rmax = intr.max_radius()
    zmax = float(np.polynomial.polynomial.polyval(rmax, np.asarray(intr.poly)))
    max_angle = math.atan2(rmax, -zmax) if zmax < 0 else math.pi
    in_view = ((angles < max_angle - 1e-3)
               & (cu >= 0) & (cu < HEATMAP_WIDTH)
               & (cv >= 0) & (cv < HEATMAP_HEIGHT))
    return cu, cv, in_view


def joint_heatmaps(skel: Skeleton16, intr: FisheyeIntrinsics,
                   sigma_px: float = DEFAULT_SIGMA_PX) -> np.ndarray:
    """Per-joint Gaussian heatmaps (48, 64, 16), peak exactly 1 at the
    rounded projected pixel; out-of-view joints get an all-zero channel."""
    cu, cv, in_view = heatmap_centers(skel, intr)
    xs = np.arange(HEATMAP_WIDTH, dtype=np.float64)
    ys = np.arange(HEATMAP_HEIGHT, dtype=np.float64)
    out = np.zeros((HEATMAP_HEIGHT, HEATMAP_WIDTH, NUM_JOINTS), dtype=np.float32)
    inv = 1.0 / (2.0 * sigma_px * sigma_px)
    for j in range(NUM_JOINTS):
        if not in_view[j]:
            continue
        gx = np.exp(-((xs - cu[j]) ** 2) * inv)
        gy = np.exp(-((ys - cv[j]) ** 2) * inv)
        out[:, :, j] = (gy[:, None] * gx[None, :]).astype(np.float32)
    return out


def downsample_mask(mask_full: np.ndarray) -> np.ndarray:
    """Block-any reduction from sensor resolution to the heatmap grid."""
    h, w = mask_full.shape
    bh, bw = h // HEATMAP_HEIGHT, w // HEATMAP_WIDTH
    if h != bh * HEATMAP_HEIGHT or w != bw * HEATMAP_WIDTH:
        raise ValueError("mask shape is not a multiple of the heatmap grid")
    blocks = mask_full.reshape(HEATMAP_HEIGHT, bh, HEATMAP_WIDTH, bw)
    return blocks.any(axis=(1, 3))


# -- sequence and dataset synthesis ----------------------------------------

@dataclass(frozen=True)
class SceneConfig:
    motion: str = "wave"
    duration_s: float = 1.0
    fps: float = 480.0
    window_ms: float = 15.0
    sigma_px: float = DEFAULT_SIGMA_PX
    seed: int = 0
    period: float | None = None
    bg_drift: tuple = (0.12, 0.05)
    perturb: bool = True
    sim: SimulatorConfig = field(default_factory=SimulatorConfig)


def synth_sequence(cfg: SceneConfig, intr: FisheyeIntrinsics | None = None,
                   seq_index: int = 0) -> SequenceData:
    """Render one motion clip, simulate events, and window them into samples."""
    if intr is None:
        intr = default_intrinsics()
    video, _, _ = render_frames(
        cfg.motion, cfg.duration_s, cfg.fps, intr, seed=cfg.seed,
        seq_index=seq_index, period=cfg.period, bg_drift=cfg.bg_drift,
        perturb=cfg.perturb)
    sim_cfg = replace(cfg.sim, seed=cfg.sim.seed + seq_index)
    events = simulate(video, sim_cfg)

    if cfg.perturb:
        rot, shift = camera_perturbation(cfg.seed, seq_index)
    else:
        rot, shift = np.eye(3), np.zeros(3)
    renderer = SceneRenderer(intr, bg_drift=cfg.bg_drift)

    window_us = int(round(cfg.window_ms * 1000))
    t_start = int(video.timestamps[0])
    t_end = int(video.timestamps[-1])
    records = []
    for window, evs in grid_windows(events, window_us, t_start, t_end):
        t_pose = int(evs.t[-1]) if len(evs) else window.t_end
        skel = transform_skeleton(animate(cfg.motion, t_pose / 1e6, cfg.period),
                                  rot, shift)
        lnes = encode_lnes(evs, window, intr.height, intr.width)
        heatmaps = joint_heatmaps(skel, intr, cfg.sigma_px)
        mask = downsample_mask(renderer.footprint(skel))
        records.append(SampleRecord(
            lnes=lnes, joints_gt=skel, heatmaps_gt=heatmaps,
            mask_gt=mask[:, :, None].astype(np.float32),
            window=window, t_pose=t_pose))
    meta = {
        "motion": cfg.motion, "duration_s": cfg.duration_s, "fps": cfg.fps,
        "window_us": window_us, "sigma_px": cfg.sigma_px, "seed": cfg.seed,
        "seq_index": seq_index, "threshold": sim_cfg.threshold,
        "num_windows": len(records), "num_events": len(events),
        "category": MOTION_CATEGORY.get(cfg.motion, "Inter. with env."),
    }
    return SequenceData(records, events, intr, meta)


@dataclass(frozen=True)
class DatasetConfig:
    motions: tuple = ("wave", "box", "squat", "walk-in-place")
    sequences_per_motion: int = 1
    duration_s: float = 1.0
    fps: float = 480.0
    window_ms: float = 15.0
    sigma_px: float = DEFAULT_SIGMA_PX
    seed: int = 0
    perturb: bool = True
    sim: SimulatorConfig = field(default_factory=SimulatorConfig)


def make_dataset(cfg: DatasetConfig, root: str | Path | None = None,
                 intr: FisheyeIntrinsics | None = None) -> list[SequenceData]:
    """Generate all sequences of a dataset; write them under root if given.

    Sequence RNG streams derive from (seed, sequence index) only, so the
    output is reproducible regardless of generation order.
    """
    if intr is None:
        intr = default_intrinsics()
    sequences = []
    names = []
    idx = 0
    for motion in cfg.motions:
        for _ in range(cfg.sequences_per_motion):
            scfg = SceneConfig(
                motion=motion, duration_s=cfg.duration_s, fps=cfg.fps,
                window_ms=cfg.window_ms, sigma_px=cfg.sigma_px, seed=cfg.seed,
                perturb=cfg.perturb, sim=cfg.sim)
            seq = synth_sequence(scfg, intr, seq_index=idx)
            sequences.append(seq)
            names.append(f"seq_{idx:03d}_{motion.replace('-', '_')}")
            idx += 1
    if root is not None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        for name, seq in zip(names, sequences):
            write_sequence(root / name, seq)
        meta = {k: getattr(cfg, k) for k in
                ("motions", "sequences_per_motion", "duration_s", "fps",
                 "window_ms", "sigma_px", "seed", "perturb")}
        meta["threshold"] = cfg.sim.threshold
        meta_text = "".join(f"{k}: {v}\n" for k, v in meta.items())
        (root / "meta.txt").write_text(meta_text)
        cfg_hash = hashlib.sha256(meta_text.encode()).hexdigest()
        manifest = f"# seed {cfg.seed}\n# config_hash {cfg_hash}\n"
        manifest += "".join(f"{n} {s.meta['motion']}\n"
                            for n, s in zip(names, sequences))
        (root / "manifest.txt").write_text(manifest)
    return sequences


# -- disk layout ------------------------------------------------------------

def write_sequence(seq_dir: str | Path, seq: SequenceData):
    seq_dir = Path(seq_dir)
    seq_dir.mkdir(parents=True, exist_ok=True)
    write_events(seq_dir / "events.bin", seq.events)
    save_intrinsics(seq_dir / "intrinsics.txt", seq.intrinsics)
    with open(seq_dir / "gt.jsonl", "w") as fh:
        for i, rec in enumerate(seq.records):
            fh.write(json.dumps({
                "index": i,
                "t0": rec.window.t0,
                "duration": rec.window.duration,
                "t_pose": rec.t_pose,
                "joints": [float(v) for v in rec.joints_gt.joints.ravel()],
            }) + "\n")
    heatmaps = np.stack([r.heatmaps_gt for r in seq.records]) if seq.records \
        else np.zeros((0, HEATMAP_HEIGHT, HEATMAP_WIDTH, NUM_JOINTS), np.float32)
    masks = np.stack([r.mask_gt[:, :, 0] for r in seq.records]) if seq.records \
        else np.zeros((0, HEATMAP_HEIGHT, HEATMAP_WIDTH), np.float32)
    heatmaps.astype("<f4").tofile(seq_dir / "heatmaps.bin")
    masks.astype(np.uint8).tofile(seq_dir / "masks.bin")
    (seq_dir / "meta.txt").write_text(
        "".join(f"{k}: {v}\n" for k, v in seq.meta.items()))


def _parse_meta(path: Path) -> dict:
    meta = {}
    for line in path.read_text().splitlines():
        if ":" in line:
            k, v = line.split(":", 1)
            meta[k.strip()] = v.strip()
    return meta


def load_sequence(seq_dir: str | Path) -> SequenceData:
    """Rebuild SampleRecords from the on-disk layout (LNES re-encoded)."""
    seq_dir = Path(seq_dir)
    events = read_events(seq_dir / "events.bin")
    intr = load_intrinsics(seq_dir / "intrinsics.txt")
    meta = _parse_meta(seq_dir / "meta.txt")
    gt_lines = [json.loads(line) for line in
                (seq_dir / "gt.jsonl").read_text().splitlines() if line.strip()]
    n = len(gt_lines)
    heatmaps = np.fromfile(seq_dir / "heatmaps.bin", dtype="<f4").reshape(
        n, HEATMAP_HEIGHT, HEATMAP_WIDTH, NUM_JOINTS)
    masks = np.fromfile(seq_dir / "masks.bin", dtype=np.uint8).reshape(
        n, HEATMAP_HEIGHT, HEATMAP_WIDTH)
    records = []
    for i, gt in enumerate(gt_lines):
        window = TimeWindow(int(gt["t0"]), int(gt["duration"]))
        i0 = int(np.searchsorted(events.t, window.t0, side="left"))
        i1 = int(np.searchsorted(events.t, window.t_end, side="left"))
        lnes = encode_lnes(events.slice(i0, i1), window, intr.height, intr.width)
        joints = np.asarray(gt["joints"], dtype=np.float64).reshape(NUM_JOINTS, 3)
        records.append(SampleRecord(
            lnes=lnes, joints_gt=Skeleton16(joints),
            heatmaps_gt=heatmaps[i], mask_gt=masks[i].astype(np.float32)[:, :, None],
            window=window, t_pose=int(gt["t_pose"])))
    return SequenceData(records, events, intr, meta)


def load_dataset(root: str | Path) -> list[tuple[str, SequenceData]]:
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"missing dataset manifest {manifest}")
    out = []
    for line in manifest.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name = line.split()[0]
        out.append((name, load_sequence(root / name)))
    return out
