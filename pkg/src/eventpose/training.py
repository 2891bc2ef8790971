"""Optimizer and training loops: per-sequence training with the frame
buffer, the batched single-frame overfit smoke run, loss logging, and
bit-exact checkpoint/resume.

Training runs at float32 by default; with the optimizer moments held in
the same dtype a checkpoint round-trips losslessly, so a resumed run
reproduces the next step bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from . import modelio
from .network import (FrameBufferState, LossWeights, NetConfig, PoseNet,
                      compose_input, losses, toy_config)

DEFAULT_LR = 1e-3
FINETUNE_LR = 1e-4
DEFAULT_BATCH = 27
DEFAULT_SEQ_LEN = 20
DEFAULT_WINDOW_MS = 15.0


class Adam:
    """Adam with (0.9, 0.999) betas and 1e-8 epsilon.

    Moment arrays live in the parameter dtype and are updated in place, so
    serializing them captures the exact optimizer state.
    """

    def __init__(self, params: dict, lr: float = DEFAULT_LR,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self):
        """Apply one update from the accumulated gradients.

        Parameters whose grad is None are skipped; with zero moments the
        update would be zero anyway (the confidence decoder sees no task
        gradient because the buffer blocks cross-frame flow).
        """
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, var in self.params.items():
            g = var.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            var.data = var.data - (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def state_tensors(self) -> list:
        out = []
        for name in self.params:
            out.append(("adam.m." + name, self.m[name]))
            out.append(("adam.v." + name, self.v[name]))
        return out

    def load_state(self, tensors: dict, step_count: int):
        for name, var in self.params.items():
            for prefix, store in (("adam.m.", self.m), ("adam.v.", self.v)):
                arr = tensors.get(prefix + name)
                if arr is None:
                    raise ValueError(f"checkpoint missing {prefix + name}")
                if arr.shape != var.data.shape:
                    raise ValueError(f"optimizer state shape mismatch at {name}")
                store[name] = arr.astype(var.data.dtype)
        self.step_count = int(step_count)


@dataclass
class TrainSettings:
    """Everything the plain-text training config can carry."""

    lr: float = DEFAULT_LR
    iters: int = 200
    batch: int = DEFAULT_BATCH
    seq_len: int = DEFAULT_SEQ_LEN
    window_ms: float = DEFAULT_WINDOW_MS
    lambda_joints: float = 0.01
    lambda_heatmaps: float = 10.0
    lambda_seg: float = 1.0
    seed: int = 0
    encoder: tuple | None = None
    decoder: tuple | None = None
    confidence: tuple | None = None
    lifting_conv: tuple | None = None
    lifting_dense: tuple | None = None
    checkpoint_every: int = 0     # 0 disables intermediate checkpoints

    def net_config(self) -> NetConfig:
        base = toy_config()
        kw = {}
        for key in ("encoder", "decoder", "confidence", "lifting_conv",
                    "lifting_dense"):
            val = getattr(self, key)
            kw[key] = tuple(val) if val is not None else getattr(base, key)
        return NetConfig(**kw)

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_joints, self.lambda_heatmaps,
                           self.lambda_seg)

    def to_text(self) -> str:
        vals = {k: v for k, v in asdict(self).items() if v is not None}
        return modelio.format_train_config(vals)

    @classmethod
    def from_text(cls, text: str) -> "TrainSettings":
        parsed = modelio.parse_train_config(text)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(parsed) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {', '.join(unknown)}")
        return cls(**parsed)


def train_sequence(records, net: PoseNet, opt: Adam,
                   weights: LossWeights = LossWeights(),
                   step_per_frame: bool = True) -> list:
    """One ordered pass over a window sequence.

    Per frame: compose against the buffer, forward in train mode, losses,
    backward, then either an optimizer step (default) or gradient
    accumulation with a single step at the end. The buffer receives the
    detached raw composed frame and the fresh confidence; no gradient
    crosses frames.
    """
    buf = FrameBufferState.zeros(net.cfg, dtype=net.dtype)
    if not step_per_frame:
        net.zero_grad()
    frame_losses = []
    for rec in records:
        vals = np.ascontiguousarray(rec.lnes.values, dtype=net.dtype)
        net_in, raw = compose_input(vals, buf)
        if step_per_frame:
            net.zero_grad()
        out = net.forward(net_in[None], training=True)
        res = losses(out, rec.heatmaps_gt, rec.mask_gt, rec.joints_gt.joints,
                     weights)
        ad.backward(res.total)
        if step_per_frame:
            opt.step()
        buf.prev_input = raw
        buf.prev_confidence = out.confidence.data[0].astype(net.dtype,
                                                            copy=False)
        frame_losses.append(res.values())
    if not step_per_frame:
        opt.step()
    return frame_losses


def train_step_sequences(batch_seqs: list, net: PoseNet, opt: Adam,
                         weights: LossWeights = LossWeights(),
                         augment_fn=None) -> list:
    """One iteration over a batch of sequences, vectorized across the batch.

    Every sequence keeps its own buffer; frames advance in lockstep with a
    single batched forward/backward and one optimizer step per frame.
    """
    bufs = [FrameBufferState.zeros(net.cfg, dtype=net.dtype)
            for _ in batch_seqs]
    n = min(len(s) for s in batch_seqs)
    frame_losses = []
    for q in range(n):
        comps, raws = [], []
        for s, buf in zip(batch_seqs, bufs):
            lq = s[q].lnes
            if augment_fn is not None:
                lq = augment_fn(lq, s[q].mask_gt)
            vals = np.ascontiguousarray(lq.values, dtype=net.dtype)
            net_in, raw = compose_input(vals, buf)
            comps.append(net_in)
            raws.append(raw)
        net.zero_grad()
        out = net.forward(np.stack(comps), training=True)
        res = losses(out,
                     np.stack([s[q].heatmaps_gt for s in batch_seqs]),
                     np.stack([s[q].mask_gt for s in batch_seqs]),
                     np.stack([s[q].joints_gt.joints for s in batch_seqs]),
                     weights)
        ad.backward(res.total)
        opt.step()
        for i, buf in enumerate(bufs):
            buf.prev_input = raws[i]
            buf.prev_confidence = out.confidence.data[i].astype(net.dtype,
                                                                copy=False)
        frame_losses.append(res.values())
    return frame_losses


def _iteration_rng(seed: int, iteration: int):
    # each iteration draws from its own stream so a resumed run samples
    # the same batches without replaying history
    return np.random.default_rng(np.random.SeedSequence((seed, 0x11, iteration)))


def train_on_dataset(sequences: list, net: PoseNet, opt: Adam,
                     settings: TrainSettings, start_iter: int = 0,
                     log_fn=None, checkpoint_fn=None, augment_fn=None) -> list:
    """Iterate batched-sequence training over a dataset.

    `sequences` holds record lists (or objects with a .records attribute).
    Returns one loss dict per iteration (frame-averaged).
    """
    record_lists = [getattr(s, "records", s) for s in sequences]
    if not record_lists:
        raise ValueError("empty dataset")
    weights = settings.weights()
    history = []
    for it in range(start_iter + 1, settings.iters + 1):
        rng = _iteration_rng(settings.seed, it)
        idx = rng.integers(0, len(record_lists), size=settings.batch)
        batch = [record_lists[i][:settings.seq_len] for i in idx]
        frame_losses = train_step_sequences(batch, net, opt, weights,
                                            augment_fn=augment_fn)
        mean = {k: float(np.mean([fl[k] for fl in frame_losses]))
                for k in frame_losses[0]}
        history.append(mean)
        if log_fn is not None:
            log_fn(it, mean)
        if checkpoint_fn is not None and settings.checkpoint_every \
                and it % settings.checkpoint_every == 0:
            checkpoint_fn(it)
    return history


def overfit_smoke(records, net: PoseNet | None = None, max_steps: int = 2000,
                  target_drop: float = 0.9, lr: float = DEFAULT_LR,
                  seed: int = 0, weights: LossWeights = LossWeights(),
                  log_fn=None):
    """Batched overfit on a fixed set of single windows.

    The buffer is zeroed for every step, so each composed input is just the
    affine rescale of its window and the whole run is a pure function of
    the seed. Stops early once L_total has dropped by `target_drop` from
    its initial value. Returns (net, opt, per-step loss dicts).
    """
    if net is None:
        net = PoseNet(toy_config(), seed=seed, dtype=np.float32)
    buf = FrameBufferState.zeros(net.cfg, dtype=net.dtype)
    comps = []
    for rec in records:
        vals = np.ascontiguousarray(rec.lnes.values, dtype=net.dtype)
        net_in, _ = compose_input(vals, buf)
        comps.append(net_in)
    x = np.stack(comps)
    hm = np.stack([r.heatmaps_gt for r in records])
    mask = np.stack([r.mask_gt for r in records])
    joints = np.stack([r.joints_gt.joints for r in records])

    opt = Adam(net.params, lr=lr)
    history = []
    initial = None
    for step in range(1, max_steps + 1):
        net.zero_grad()
        out = net.forward(x, training=True)
        res = losses(out, hm, mask, joints, weights)
        ad.backward(res.total)
        opt.step()
        vals_ = res.values()
        history.append(vals_)
        if log_fn is not None:
            log_fn(step, vals_)
        if initial is None:
            initial = vals_["l_total"]
        if vals_["l_total"] <= (1.0 - target_drop) * initial:
            break
    return net, opt, history


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, net: PoseNet, opt: Adam, iteration: int,
                    settings: TrainSettings | None = None):
    meta = {"iteration": int(iteration), "opt_step": int(opt.step_count),
            "lr": float(opt.lr), "beta1": float(opt.beta1),
            "beta2": float(opt.beta2), "eps": float(opt.eps)}
    if settings is not None:
        meta["settings"] = {k: (list(v) if isinstance(v, tuple) else v)
                            for k, v in asdict(settings).items()
                            if v is not None}
    modelio.save_model(path, net, extra=meta, version=modelio.VERSION_TRAIN,
                       opt_tensors=opt.state_tensors())


def load_checkpoint(path, dtype=np.float32):
    """Returns (net, opt, meta); raises on a non-training model file."""
    net, meta, extra = modelio.load_model(path, dtype=dtype)
    if "opt_step" not in meta:
        raise modelio.ModelFileError("not a training checkpoint")
    opt = Adam(net.params, lr=meta.get("lr", DEFAULT_LR),
               beta1=meta.get("beta1", 0.9), beta2=meta.get("beta2", 0.999),
               eps=meta.get("eps", 1e-8))
    opt.load_state(dict(extra), meta["opt_step"])
    return net, opt, meta


# -- loss log ---------------------------------------------------------------

LOSS_KEYS = ("l_total", "l_h", "l_seg", "l_joints")


def format_loss_line(step: int, vals: dict) -> str:
    parts = [f"step {step}"]
    parts += [f"{k} {vals[k]:.9e}" for k in LOSS_KEYS]
    return " ".join(parts)


def parse_loss_log(text: str) -> list:
    rows = []
    for line in text.splitlines():
        parts = line.split()
        if len(parts) < 2 or parts[0] != "step":
            continue
        row = {"step": int(parts[1])}
        for key, val in zip(parts[2::2], parts[3::2]):
            row[key] = float(val)
        rows.append(row)
    return rows


def moving_average(xs, span: int = 100) -> np.ndarray:
    """Trailing-window means, reported only where the window is full."""
    xs = np.asarray(xs, dtype=np.float64)
    if len(xs) < span:
        return np.asarray([xs.mean()]) if len(xs) else np.asarray([])
    c = np.concatenate([[0.0], np.cumsum(xs)])
    return (c[span:] - c[:-span]) / span
