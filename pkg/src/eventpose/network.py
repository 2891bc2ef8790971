"""Pose estimation network: forward pass, losses, and the frame-buffer
recurrence.

Layout, NHWC everywhere:

  encoder        6 stride-2 blocks (depthwise 5x5 + pointwise 1x1 with a
                 strided 1x1 shortcut), 192x256x2 down to 3x4.
  heatmap path   4 decoder blocks (nearest 2x upsample, concat encoder
                 skip, fused conv block); every block feeds a 16-channel
                 head, heads are upsampled to 48x64 and averaged.
  mask path      same decoder structure with its own weights and a single
                 1-channel head; sigmoid gives the body mask.
  confidence     4 plain 3x3 convs with scalar PReLUs on the mask, then
                 confidence = sigmoid(mask * features).
  lifting        3 4x4 stride-2 convs with batch norm, average pool,
                 3 dense layers down to 16 joints x 3.

The recurrence composes the previous raw input, weighted by the previous
confidence, into the current event frame (compose_input). The buffer is
state, not graph: gradients never flow across frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .lnes import LnesFrame

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

NUM_JOINTS = 16


class NonFiniteActivationError(RuntimeError):
    """Raised when a forward activation goes inf/nan; names the layer."""


@dataclass(frozen=True)
class NetConfig:
    input_height: int = 192
    input_width: int = 256
    input_channels: int = 2
    encoder: tuple = (8, 8, 12, 16, 24, 32)
    decoder: tuple = (16, 12, 8, 8)
    confidence: tuple = (3, 4, 3)
    lifting_conv: tuple = (8, 12, 16)
    lifting_dense: tuple = (48, 48)
    num_joints: int = NUM_JOINTS
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.input_height % 64 or self.input_width % 64:
            raise ValueError("input dims must be divisible by 64 (six stride-2 levels)")
        if len(self.encoder) != 6 or len(self.decoder) != 4:
            raise ValueError("need 6 encoder and 4 decoder channel widths")
        if len(self.confidence) != 3 or len(self.lifting_conv) != 3 \
                or len(self.lifting_dense) != 2:
            raise ValueError("need 3 confidence, 3 lifting conv, 2 lifting dense widths")

    @property
    def heatmap_height(self) -> int:
        return self.input_height // 4

    @property
    def heatmap_width(self) -> int:
        return self.input_width // 4

    def to_dict(self) -> dict:
        return {
            "input_height": self.input_height, "input_width": self.input_width,
            "input_channels": self.input_channels,
            "encoder": list(self.encoder), "decoder": list(self.decoder),
            "confidence": list(self.confidence),
            "lifting_conv": list(self.lifting_conv),
            "lifting_dense": list(self.lifting_dense),
            "num_joints": self.num_joints, "bn_momentum": self.bn_momentum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        for key in ("encoder", "decoder", "confidence", "lifting_conv", "lifting_dense"):
            d[key] = tuple(d[key])
        return cls(**d)


def toy_config() -> NetConfig:
    """Small configuration for CPU-real-time streaming and the test suite."""
    return NetConfig()


def paper_config() -> NetConfig:
    """Channel widths sized to the published capacity of the full model
    (about 1.25M parameters and 417M FLOPs per frame)."""
    return NetConfig(
        encoder=(24, 48, 96, 144, 192, 256),
        decoder=(96, 72, 56, 40),
        confidence=(16, 24, 16),
        lifting_conv=(48, 72, 128),
        lifting_dense=(288, 96),
    )


class LayerSpec(NamedTuple):
    name: str           # parameter name prefix
    kind: str           # depthwise | pointwise | conv | dense | prelu | bn
    shape: tuple        # weight shape ((), for prelu scalar)
    fan_in: int
    macs: int           # multiply-accumulates at this layer's output size
    meta: dict


def _enc_dims(cfg: NetConfig):
    """Spatial dims after each encoder block (and the input dims first)."""
    dims = [(cfg.input_height, cfg.input_width)]
    for _ in range(6):
        h, w = dims[-1]
        dims.append((h // 2, w // 2))
    return dims


def layer_specs(cfg: NetConfig) -> list:
    """Every learnable tensor of the network, in declaration order.

    Single source of truth shared by the parameter builder, the model file
    serializer, and the parameter/FLOP calculators.
    """
    specs = []
    dims = _enc_dims(cfg)

    def blaze(prefix, cin, cout, oh, ow):
        px = oh * ow
        specs.append(LayerSpec(f"{prefix}.dw", "depthwise", (5, 5, cin), 25,
                               25 * cin * px, {}))
        specs.append(LayerSpec(f"{prefix}.pw", "pointwise", (cin, cout), cin,
                               cin * cout * px, {}))
        specs.append(LayerSpec(f"{prefix}.sc", "pointwise", (cin, cout), cin,
                               cin * cout * px, {}))

    chans = [cfg.input_channels] + list(cfg.encoder)
    for i in range(6):
        oh, ow = dims[i + 1]
        blaze(f"encoder.block{i + 1}", chans[i], chans[i + 1], oh, ow)

    # decoder blocks run at the resolution of their skip connection
    skip_chans = [cfg.encoder[4], cfg.encoder[3], cfg.encoder[2], cfg.encoder[1]]
    skip_dims = [dims[5], dims[4], dims[3], dims[2]]
    for branch in ("hm", "seg"):
        prev = cfg.encoder[5]
        for i in range(4):
            cin = prev + skip_chans[i]
            oh, ow = skip_dims[i]
            blaze(f"{branch}.block{i + 1}", cin, cfg.decoder[i], oh, ow)
            prev = cfg.decoder[i]
        if branch == "hm":
            for i in range(4):
                oh, ow = skip_dims[i]
                specs.append(LayerSpec(
                    f"hm.head{i + 1}", "pointwise",
                    (cfg.decoder[i], cfg.num_joints), cfg.decoder[i],
                    cfg.decoder[i] * cfg.num_joints * oh * ow, {}))
        else:
            oh, ow = skip_dims[3]
            specs.append(LayerSpec(
                "seg.head", "pointwise", (cfg.decoder[3], 1), cfg.decoder[3],
                cfg.decoder[3] * oh * ow, {}))

    hh, hw = cfg.heatmap_height, cfg.heatmap_width
    conf_chain = [1] + list(cfg.confidence) + [1]
    for i in range(4):
        cin, cout = conf_chain[i], conf_chain[i + 1]
        specs.append(LayerSpec(f"conf.conv{i + 1}", "conv", (3, 3, cin, cout),
                               9 * cin, 9 * cin * cout * hh * hw,
                               {"stride": 1, "pad": 1}))
        if i < 3:
            specs.append(LayerSpec(f"conf.prelu{i + 1}", "prelu", (), 1, 0, {}))

    lh, lw = hh, hw
    lift_chain = [cfg.num_joints] + list(cfg.lifting_conv)
    for i in range(3):
        lh, lw = lh // 2, lw // 2
        cin, cout = lift_chain[i], lift_chain[i + 1]
        specs.append(LayerSpec(f"lift.conv{i + 1}", "conv", (4, 4, cin, cout),
                               16 * cin, 16 * cin * cout * lh * lw,
                               {"stride": 2, "pad": 1}))
        specs.append(LayerSpec(f"lift.bn{i + 1}", "bn", (cout,), 1, 0, {}))
    flat = (lh // 2) * (lw // 2) * cfg.lifting_conv[2]
    dense_chain = [flat] + list(cfg.lifting_dense) + [3 * cfg.num_joints]
    for i in range(3):
        specs.append(LayerSpec(f"lift.dense{i + 1}", "dense",
                               (dense_chain[i], dense_chain[i + 1]),
                               dense_chain[i],
                               dense_chain[i] * dense_chain[i + 1], {}))
    return specs


def count_params(cfg: NetConfig) -> int:
    total = 0
    for s in layer_specs(cfg):
        if s.kind == "prelu":
            total += 1
        elif s.kind == "bn":
            total += 2 * s.shape[0]
        elif s.kind == "depthwise":
            total += int(np.prod(s.shape)) + s.shape[2]
        else:
            total += int(np.prod(s.shape)) + s.shape[-1]
    return total


def estimate_flops(cfg: NetConfig) -> int:
    """Multiply-add count x2 over all conv/dense layers for one frame."""
    return 2 * sum(s.macs for s in layer_specs(cfg))


@dataclass
class FrameBufferState:
    """Recurrence state: previous raw composed input + previous confidence."""

    prev_input: np.ndarray       # (H, W, 2)
    prev_confidence: np.ndarray  # (hh, hw, 1)

    @classmethod
    def zeros(cls, cfg: NetConfig, dtype=np.float64) -> "FrameBufferState":
        return cls(
            np.zeros((cfg.input_height, cfg.input_width, 2), dtype=dtype),
            np.zeros((cfg.heatmap_height, cfg.heatmap_width, 1), dtype=dtype))


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resize (half-pixel centers) of an HxW or HxWxC array."""
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(img.dtype)
    wx = np.clip(xs - x0, 0.0, 1.0).astype(img.dtype)
    # separable: blend rows at the source width first, then columns
    if img.ndim == 2:
        rows = img[y0] * (1 - wy)[:, None] + img[y1] * wy[:, None]
        return rows[:, x0] * (1 - wx)[None, :] + rows[:, x1] * wx[None, :]
    rows = img[y0] * (1 - wy)[:, None, None] + img[y1] * wy[:, None, None]
    return (rows[:, x0] * (1 - wx)[None, :, None]
            + rows[:, x1] * wx[None, :, None])


if numba is not None:
    @numba.njit(cache=True)
    def _compose_blend_jit(prev, conf, lq, y0, y1, wy, wy1, x0, x1, wx, wx1, raw):
        """raw = prev * bilinear_up(conf) + lq in one pass; returns max(raw)."""
        h, w = raw.shape[0], raw.shape[1]
        peak = raw.dtype.type(-np.inf)
        for i in range(h):
            ia, ib = y0[i], y1[i]
            va, vb = wy1[i], wy[i]
            for j in range(w):
                c0 = conf[ia, x0[j]] * va + conf[ib, x0[j]] * vb
                c1 = conf[ia, x1[j]] * va + conf[ib, x1[j]] * vb
                c = c0 * wx1[j] + c1 * wx[j]
                r0 = prev[i, j, 0] * c + lq[i, j, 0]
                r1 = prev[i, j, 1] * c + lq[i, j, 1]
                raw[i, j, 0] = r0
                raw[i, j, 1] = r1
                if r0 > peak:
                    peak = r0
                if r1 > peak:
                    peak = r1
        return peak
else:  # pragma: no cover - exercised only without numba
    _compose_blend_jit = None


def compose_input(lq: LnesFrame | np.ndarray, buf: FrameBufferState):
    """Blend the remembered frame into the new event frame.

    raw = prev_input * upsampled(prev_confidence) + lq, then mapped onto
    [-1, 1] by out = 2 * raw / max(1, raw.max()) - 1. Returns (out, raw);
    the caller stores raw (pre-normalization) as the next prev_input.
    """
    vals = lq.values if isinstance(lq, LnesFrame) else np.asarray(lq)
    if vals.shape != buf.prev_input.shape:
        raise ValueError(f"event frame shape {vals.shape} does not match "
                         f"buffer {buf.prev_input.shape}")
    h, w = vals.shape[:2]
    prev = buf.prev_input
    conf = buf.prev_confidence[:, :, 0]
    if (_compose_blend_jit is not None and vals.dtype == prev.dtype
            and conf.dtype == prev.dtype and prev.dtype in (np.float32, np.float64)):
        in_h, in_w = conf.shape
        ys = (np.arange(h) + 0.5) * (in_h / h) - 0.5
        xs = (np.arange(w) + 0.5) * (in_w / w) - 0.5
        y0 = np.clip(np.floor(ys).astype(np.int64), 0, in_h - 1)
        x0 = np.clip(np.floor(xs).astype(np.int64), 0, in_w - 1)
        wy = np.clip(ys - y0, 0.0, 1.0).astype(prev.dtype)
        wx = np.clip(xs - x0, 0.0, 1.0).astype(prev.dtype)
        raw = np.empty_like(prev)
        peak = _compose_blend_jit(
            prev, np.ascontiguousarray(conf), np.ascontiguousarray(vals),
            y0, np.minimum(y0 + 1, in_h - 1), wy, (1 - wy).astype(prev.dtype),
            x0, np.minimum(x0 + 1, in_w - 1), wx, (1 - wx).astype(prev.dtype),
            raw)
        peak = float(peak)
    else:
        conf_up = bilinear_resize(conf, h, w)
        # duplicate the confidence across the two polarity channels up front;
        # broadcasting (H, W, 1) against (H, W, 2) leaves numpy with a
        # two-element inner loop, which is several times slower
        conf2 = np.repeat(conf_up, 2).reshape(h, w, 2)
        raw = np.empty_like(prev)
        np.multiply(prev, conf2, out=raw)
        raw += vals
        peak = float(raw.max())
    out = raw * np.asarray(2.0 / max(1.0, peak), dtype=raw.dtype)
    out -= 1.0
    return out.astype(vals.dtype, copy=False), raw.astype(vals.dtype, copy=False)


@dataclass
class ForwardResult:
    heatmaps: ad.Var      # (B, hh, hw, 16)
    seg: ad.Var           # (B, hh, hw, 1), sigmoid output
    seg_logits: ad.Var
    conf_features: ad.Var  # (B, hh, hw, 1), pre-sigmoid product features
    confidence: ad.Var    # (B, hh, hw, 1)
    pose: ad.Var          # (B, 16, 3)


class PoseNet:
    """Parameter container plus forward pass."""

    def __init__(self, cfg: NetConfig, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, ad.Var] = {}
        self.state: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE)))
        for s in layer_specs(cfg):
            if s.kind == "prelu":
                self.params[s.name] = ad.Var(np.asarray(0.25, dtype=dtype),
                                             requires_grad=True)
                continue
            if s.kind == "bn":
                c = s.shape[0]
                self.params[s.name + ".gamma"] = ad.Var(np.ones(c, dtype=dtype),
                                                        requires_grad=True)
                self.params[s.name + ".beta"] = ad.Var(np.zeros(c, dtype=dtype),
                                                       requires_grad=True)
                self.state[s.name + ".mean"] = np.zeros(c, dtype=dtype)
                self.state[s.name + ".var"] = np.ones(c, dtype=dtype)
                continue
            bound = 1.0 / np.sqrt(s.fan_in)
            w = rng.uniform(-bound, bound, s.shape).astype(dtype)
            nbias = s.shape[2] if s.kind == "depthwise" else s.shape[-1]
            self.params[s.name + ".w"] = ad.Var(w, requires_grad=True)
            self.params[s.name + ".b"] = ad.Var(np.zeros(nbias, dtype=dtype),
                                                requires_grad=True)

    # -- parameter utilities ------------------------------------------------

    def param_groups(self) -> dict[str, list]:
        groups: dict[str, list] = {}
        for name, var in self.params.items():
            groups.setdefault(name.split(".")[0], []).append((name, var))
        return groups

    def zero_grad(self):
        for v in self.params.values():
            v.zero_grad()

    def num_params(self) -> int:
        return sum(v.data.size for v in self.params.values())

    def astype(self, dtype) -> "PoseNet":
        other = PoseNet.__new__(PoseNet)
        other.cfg = self.cfg
        other.dtype = dtype
        other.params = {k: ad.Var(v.data.astype(dtype), requires_grad=True)
                        for k, v in self.params.items()}
        other.state = {k: v.astype(dtype) for k, v in self.state.items()}
        return other

    # -- forward --------------------------------------------------------------

    def _check(self, name: str, v: ad.Var, enabled: bool):
        if enabled and not np.all(np.isfinite(v.data)):
            raise NonFiniteActivationError(f"non-finite activation at {name}")
        return v

    def _blaze(self, prefix: str, x: ad.Var, stride: int, check: bool) -> ad.Var:
        p = self.params
        main = ad.depthwise_conv(x, p[f"{prefix}.dw.w"], p[f"{prefix}.dw.b"],
                                 stride=stride, pad=2)
        main = ad.pointwise_conv(main, p[f"{prefix}.pw.w"], p[f"{prefix}.pw.b"])
        sc = ad.stride_slice2(x) if stride == 2 else x
        sc = ad.pointwise_conv(sc, p[f"{prefix}.sc.w"], p[f"{prefix}.sc.b"])
        return self._check(prefix, ad.relu(ad.add(main, sc)), check)

    def forward(self, x: np.ndarray, training: bool = False,
                check_finite: bool = False) -> ForwardResult:
        """x: (B, H, W, 2) composed input in [-1, 1]."""
        if x.ndim == 3:
            x = x[None]
        cfg = self.cfg
        if x.shape[1:] != (cfg.input_height, cfg.input_width, cfg.input_channels):
            raise ValueError(f"input shape {x.shape[1:]} does not match config")
        p = self.params
        v = ad.Var(np.ascontiguousarray(x, dtype=self.dtype))

        feats = []
        for i in range(6):
            v = self._blaze(f"encoder.block{i + 1}", v, 2, check_finite)
            feats.append(v)
        skips = [feats[4], feats[3], feats[2], feats[1]]

        def run_decoder(branch: str):
            d = feats[5]
            outs = []
            for i in range(4):
                up = ad.upsample_nearest(d, 2)
                cat = ad.concat([up, skips[i]], axis=-1)
                d = self._blaze(f"{branch}.block{i + 1}", cat, 1, check_finite)
                outs.append(d)
            return outs

        hm_feats = run_decoder("hm")
        heads = []
        for i, f in enumerate(hm_feats):
            h = ad.pointwise_conv(f, p[f"hm.head{i + 1}.w"], p[f"hm.head{i + 1}.b"])
            factor = 2 ** (3 - i)
            if factor > 1:
                h = ad.upsample_nearest(h, factor)
            heads.append(h)
        heatmaps = ad.scale(ad.add(ad.add(heads[0], heads[1]),
                                   ad.add(heads[2], heads[3])), 0.25)
        self._check("hm.average", heatmaps, check_finite)

        seg_feats = run_decoder("seg")
        seg_logits = ad.pointwise_conv(seg_feats[3], p["seg.head.w"], p["seg.head.b"])
        seg = ad.sigmoid(seg_logits)
        self._check("seg.head", seg, check_finite)

        c = seg
        for i in range(4):
            c = ad.conv2d(c, p[f"conf.conv{i + 1}.w"], p[f"conf.conv{i + 1}.b"],
                          stride=1, pad=1)
            if i < 3:
                c = ad.prelu(c, p[f"conf.prelu{i + 1}"])
            self._check(f"conf.conv{i + 1}", c, check_finite)
        conf_features = ad.mul(seg, c)
        confidence = ad.sigmoid(conf_features)

        l = heatmaps
        for i in range(3):
            l = ad.conv2d(l, p[f"lift.conv{i + 1}.w"], p[f"lift.conv{i + 1}.b"],
                          stride=2, pad=1)
            l = ad.batchnorm(l, p[f"lift.bn{i + 1}.gamma"], p[f"lift.bn{i + 1}.beta"],
                             self.state[f"lift.bn{i + 1}.mean"],
                             self.state[f"lift.bn{i + 1}.var"],
                             training=training, momentum=cfg.bn_momentum)
            l = ad.relu(l)
            self._check(f"lift.conv{i + 1}", l, check_finite)
        l = ad.avg_pool(l, 2)
        l = ad.reshape(l, (l.data.shape[0], -1))
        l = ad.relu(ad.dense(l, p["lift.dense1.w"], p["lift.dense1.b"]))
        l = ad.relu(ad.dense(l, p["lift.dense2.w"], p["lift.dense2.b"]))
        l = ad.dense(l, p["lift.dense3.w"], p["lift.dense3.b"])
        pose = ad.reshape(l, (l.data.shape[0], cfg.num_joints, 3))
        self._check("lift.dense3", pose, check_finite)

        return ForwardResult(heatmaps, seg, seg_logits, conf_features,
                             confidence, pose)


# -- losses ---------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    joints: float = 0.01
    heatmaps: float = 10.0
    seg: float = 1.0

    def __post_init__(self):
        if min(self.joints, self.heatmaps, self.seg) < 0:
            raise ValueError("loss weights must be non-negative")


BCE_EPS = 1e-7


@dataclass
class LossResult:
    heatmaps: ad.Var
    seg: ad.Var
    joints: ad.Var
    total: ad.Var

    def values(self) -> dict:
        return {"l_h": float(self.heatmaps.data), "l_seg": float(self.seg.data),
                "l_joints": float(self.joints.data), "l_total": float(self.total.data)}


def losses(result: ForwardResult, gt_heatmaps: np.ndarray, gt_mask: np.ndarray,
           gt_joints: np.ndarray, weights: LossWeights = LossWeights()) -> LossResult:
    """Per-batch-mean training losses.

    heatmap and joint terms: squared-error sums per sample, averaged over
    the 16 joints; mask term: mean pixel binary cross-entropy with the
    prediction clamped to [1e-7, 1 - 1e-7].
    """
    gt_heatmaps = np.asarray(gt_heatmaps)
    gt_mask = np.asarray(gt_mask)
    gt_joints = np.asarray(gt_joints)
    if gt_heatmaps.ndim == 3:
        gt_heatmaps = gt_heatmaps[None]
    if gt_mask.ndim == 3:
        gt_mask = gt_mask[None]
    if gt_joints.ndim == 2:
        gt_joints = gt_joints[None]
    if gt_mask.min() < 0 or gt_mask.max() > 1:
        raise ValueError("ground-truth mask values must lie in [0, 1]")
    batch = gt_heatmaps.shape[0]
    nj = gt_joints.shape[1]

    dtype = result.heatmaps.data.dtype
    l_h = ad.scale(ad.vsum(ad.square(ad.sub(result.heatmaps,
                                            ad.Var(gt_heatmaps.astype(dtype))))),
                   1.0 / (nj * batch))
    l_joints = ad.scale(ad.vsum(ad.square(ad.sub(result.pose,
                                                 ad.Var(gt_joints.astype(dtype))))),
                        1.0 / (nj * batch))
    pc = ad.clip(result.seg, BCE_EPS, 1.0 - BCE_EPS)
    gm = ad.Var(gt_mask.astype(dtype))
    gm_inv = ad.Var((1.0 - gt_mask).astype(dtype))
    one_minus = ad.shift(ad.scale(pc, -1.0), 1.0)
    l_seg = ad.scale(ad.vmean(ad.add(ad.mul(gm, ad.log(pc)),
                                     ad.mul(gm_inv, ad.log(one_minus)))), -1.0)
    total = ad.add(ad.add(ad.scale(l_joints, weights.joints),
                          ad.scale(l_h, weights.heatmaps)),
                   ad.scale(l_seg, weights.seg))
    return LossResult(l_h, l_seg, l_joints, total)


def infer_stream(windows, net: PoseNet, buf: FrameBufferState | None = None):
    """Run the recurrence over LNES windows in eval mode; one pose each."""
    if buf is None:
        buf = FrameBufferState.zeros(net.cfg, dtype=net.dtype)
    poses = []
    with ad.no_grad():
        for lq in windows:
            net_in, raw = compose_input(lq, buf)
            out = net.forward(net_in[None].astype(net.dtype), training=False)
            poses.append(out.pose.data[0].copy())
            buf.prev_input = raw.astype(buf.prev_input.dtype)
            buf.prev_confidence = out.confidence.data[0].astype(
                buf.prev_confidence.dtype)
    return poses
