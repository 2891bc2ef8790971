"""Model file serialization and the plain-text training config format.

The model container is a little-endian binary: magic "EE3D", a version
word, the channel configuration as a JSON blob, named float32 tensors in
parameter declaration order, and a trailing CRC-32 of everything before
it. Version 1 carries inference weights (parameters plus batch-norm
running state); version 2 appends the Adam moments and step counter so
training can resume bit-exactly.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .network import NetConfig, PoseNet

MAGIC = b"EE3D"
VERSION_INFER = 1
VERSION_TRAIN = 2


class ModelFileError(Exception):
    pass


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    head = struct.pack("<H", len(name)) + name.encode()
    head += struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + payload


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ModelFileError("truncated model file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def _unpack_tensor(r: _Reader):
    name = r.take(r.u("<H")).decode()
    ndim = r.u("<B")
    shape = tuple(r.u("<I") for _ in range(ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
    return name, data


def _model_tensors(net: PoseNet) -> list:
    out = [(k, v.data) for k, v in net.params.items()]
    out += [(k, v) for k, v in net.state.items()]
    return out


def save_model(path, net: PoseNet, extra: dict | None = None,
               version: int = VERSION_INFER, opt_tensors: list | None = None):
    """Write the network (and optionally optimizer state) to `path`."""
    if version not in (VERSION_INFER, VERSION_TRAIN):
        raise ModelFileError(f"unsupported version {version}")
    meta = dict(extra or {})
    cfg_blob = json.dumps(net.cfg.to_dict(), sort_keys=True).encode()
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    tensors = _model_tensors(net)
    if version == VERSION_TRAIN:
        tensors += list(opt_tensors or [])
    elif opt_tensors:
        raise ModelFileError("optimizer tensors require a version-2 file")
    body = bytearray()
    body += MAGIC
    body += struct.pack("<HH", version, 0)
    body += struct.pack("<I", len(cfg_blob)) + cfg_blob
    body += struct.pack("<I", len(meta_blob)) + meta_blob
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        body += _pack_tensor(name, np.asarray(arr))
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_model(path, dtype=np.float32):
    """Read a model file. Returns (net, meta, extra_tensors).

    extra_tensors holds anything beyond the network parameters and
    batch-norm state (the optimizer moments of a version-2 file), with
    values already cast to `dtype`.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    stored = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored:
        raise ModelFileError("checksum mismatch")
    r = _Reader(blob[:-4])
    r.take(4)
    version = r.u("<H")
    if version not in (VERSION_INFER, VERSION_TRAIN):
        raise ModelFileError(f"unsupported version {version}")
    r.u("<H")
    cfg = NetConfig.from_dict(json.loads(r.take(r.u("<I")).decode()))
    meta = json.loads(r.take(r.u("<I")).decode())
    count = r.u("<I")
    tensors = dict(_unpack_tensor(r) for _ in range(count))
    if len(tensors) != count:
        raise ModelFileError("duplicate tensor names")

    net = PoseNet(cfg, seed=0, dtype=dtype)
    for name, var in net.params.items():
        if name not in tensors:
            raise ModelFileError(f"missing parameter {name}")
        arr = tensors.pop(name).astype(dtype)
        if arr.shape != var.data.shape:
            raise ModelFileError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {var.data.shape}")
        var.data = arr
    for name in net.state:
        if name not in tensors:
            raise ModelFileError(f"missing state tensor {name}")
        net.state[name] = tensors.pop(name).astype(dtype)
    extra_tensors = [(k, v.astype(dtype)) for k, v in tensors.items()]
    return net, meta, extra_tensors


# -- training config text file ---------------------------------------------

_LIST_KEYS = {"encoder", "decoder", "confidence", "lifting_conv",
              "lifting_dense"}
_INT_KEYS = {"iters", "batch", "seq_len", "seed", "input_height",
             "input_width", "checkpoint_every"}
_FLOAT_KEYS = {"lr", "window_ms", "lambda_joints", "lambda_heatmaps",
               "lambda_seg"}


def format_train_config(values: dict) -> str:
    lines = []
    for key, val in values.items():
        if isinstance(val, (tuple, list)):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def parse_train_config(text: str) -> dict:
    """Parse `key = value` lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key in _LIST_KEYS:
            out[key] = tuple(int(v) for v in val.split(","))
        elif key in _INT_KEYS:
            out[key] = int(val)
        elif key in _FLOAT_KEYS:
            out[key] = float(val)
        else:
            out[key] = val
    return out
