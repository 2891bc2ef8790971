"""Reverse-mode automatic differentiation over numpy arrays.

Small tape-based engine: every operation returns a `Var` holding the result
and a closure that routes the output gradient to its parents. `backward`
topologically sorts the graph and runs the closures. Only the operations
the pose network needs are provided; all of them are exact analytic
gradients, verified against central finite differences in the test suite.
"""

from __future__ import annotations

import contextlib

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Var:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_consumed")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self._consumed = False
        if not _grad_enabled:
            requires_grad = False
        self.requires_grad = requires_grad
        if requires_grad and backward_fn is not None:
            self._parents = tuple(p for p in parents if p.requires_grad)
            self._backward_fn = backward_fn
        else:
            self._parents = ()
            self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Var":
        return Var(self.data, requires_grad=False)


def _result(data, parents, backward_fn):
    req = any(p.requires_grad for p in parents)
    return Var(data, requires_grad=req, parents=parents,
               backward_fn=backward_fn if req else None)


def backward(root: Var):
    """Accumulate gradients of `root` (a scalar) into every graph leaf."""
    if root.data.size != 1:
        raise ValueError("backward expects a scalar root")
    if root._consumed:
        raise RuntimeError("graph already differentiated; rebuild it with a "
                           "fresh forward pass before calling backward again")
    root._consumed = True
    topo, visited, stack = [], set(), [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic -------------------------------------------------------------

def add(a: Var, b: Var) -> Var:
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))
    return _result(out, (a, b), bwd)


def sub(a: Var, b: Var) -> Var:
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))
    return _result(out, (a, b), bwd)


def mul(a: Var, b: Var) -> Var:
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))
    return _result(out, (a, b), bwd)


def scale(a: Var, s: float) -> Var:
    def bwd(g):
        a.accumulate(g * s)
    return _result(a.data * s, (a,), bwd)


def shift(a: Var, c: float) -> Var:
    def bwd(g):
        a.accumulate(g)
    return _result(a.data + c, (a,), bwd)


def square(a: Var) -> Var:
    def bwd(g):
        a.accumulate(g * (2.0 * a.data))
    return _result(a.data * a.data, (a,), bwd)


def log(a: Var) -> Var:
    def bwd(g):
        a.accumulate(g / a.data)
    return _result(np.log(a.data), (a,), bwd)


def clip(a: Var, lo: float, hi: float) -> Var:
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        a.accumulate(g * inside)
    return _result(out, (a,), bwd)


def vsum(a: Var) -> Var:
    def bwd(g):
        a.accumulate(np.full_like(a.data, float(g)))
    return _result(np.asarray(a.data.sum()), (a,), bwd)


def vmean(a: Var) -> Var:
    n = a.data.size

    def bwd(g):
        a.accumulate(np.full_like(a.data, float(g) / n))
    return _result(np.asarray(a.data.mean()), (a,), bwd)


def reshape(a: Var, shape) -> Var:
    old = a.data.shape

    def bwd(g):
        a.accumulate(g.reshape(old))
    return _result(a.data.reshape(shape), (a,), bwd)


def concat(vars_, axis: int = -1) -> Var:
    datas = [v.data for v in vars_]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        for v, piece in zip(vars_, pieces):
            if v.requires_grad:
                v.accumulate(piece)
    return _result(out, tuple(vars_), bwd)


# -- activations ------------------------------------------------------------

def relu(a: Var) -> Var:
    out = np.maximum(a.data, 0)

    def bwd(g):
        a.accumulate(g * (a.data > 0))
    return _result(out, (a,), bwd)


def prelu(a: Var, slope: Var) -> Var:
    """PReLU with a single scalar slope parameter."""
    neg = a.data < 0
    out = np.where(neg, slope.data * a.data, a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * np.where(neg, slope.data, 1.0))
        if slope.requires_grad:
            slope.accumulate(np.asarray((g * a.data * neg).sum()).reshape(slope.data.shape))
    return _result(out, (a, slope), bwd)


def sigmoid(a: Var) -> Var:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        a.accumulate(g * out * (1.0 - out))
    return _result(out, (a,), bwd)


# -- linear layers -----------------------------------------------------------

def matmul(a: Var, b: Var) -> Var:
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)
    return _result(out, (a, b), bwd)


def dense(x: Var, w: Var, b: Var) -> Var:
    """x: (N, K), w: (K, M), b: (M,)."""
    out = x.data @ w.data + b.data

    def bwd(g):
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0))
    return _result(out, (x, w, b), bwd)


def pointwise_conv(x: Var, w: Var, b: Var) -> Var:
    """1x1 convolution. x: (B, H, W, C), w: (C, OC), b: (OC,)."""
    bs, h, ww, c = x.data.shape
    flat = x.data.reshape(-1, c)
    out = (flat @ w.data + b.data).reshape(bs, h, ww, -1)

    def bwd(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            x.accumulate((g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            w.accumulate(flat.T @ g2)
        if b.requires_grad:
            b.accumulate(g2.sum(axis=0))
    return _result(out, (x, w, b), bwd)


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad the two spatial axes of an NHWC array (np.pad is slow)."""
    if pad == 0:
        return x
    bs, h, w, c = x.shape
    xp = np.zeros((bs, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w, :] = x
    return xp


if numba is not None:
    @numba.njit(cache=True)
    def _dw_fwd_jit(xp, w, b, stride, oh, ow):
        bs = xp.shape[0]
        c = xp.shape[3]
        k = w.shape[0]
        out = np.empty((bs, oh, ow, c), xp.dtype)
        for bi in range(bs):
            for i in range(oh):
                for j in range(ow):
                    for ci in range(c):
                        out[bi, i, j, ci] = b[ci]
                for ki in range(k):
                    row = xp[bi, i * stride + ki]
                    for kj in range(k):
                        wv = w[ki, kj]
                        for j in range(ow):
                            src = row[j * stride + kj]
                            for ci in range(c):
                                out[bi, i, j, ci] += src[ci] * wv[ci]
        return out

    @numba.njit(cache=True)
    def _dw_fwd_c2_jit(xp, w, b, oh, ow):
        # two-channel stride-2 case (the full-resolution input layer): the
        # generic kernel cannot vectorize a two-element inner loop, so run
        # the output row innermost with both channels in registers
        bs = xp.shape[0]
        k = w.shape[0]
        out = np.empty((bs, oh, ow, 2), xp.dtype)
        for bi in range(bs):
            for i in range(oh):
                row_o = out[bi, i]
                for j in range(ow):
                    row_o[j, 0] = b[0]
                    row_o[j, 1] = b[1]
                for ki in range(k):
                    src = xp[bi, 2 * i + ki]
                    for kj in range(k):
                        w0 = w[ki, kj, 0]
                        w1 = w[ki, kj, 1]
                        for j in range(ow):
                            row_o[j, 0] += src[2 * j + kj, 0] * w0
                            row_o[j, 1] += src[2 * j + kj, 1] * w1
        return out

    @numba.njit(cache=True)
    def _dw_bwd_jit(g, xp, w, stride):
        bs, oh, ow, c = g.shape
        k = w.shape[0]
        gxp = np.zeros(xp.shape, g.dtype)
        gw = np.zeros(w.shape, g.dtype)
        for bi in range(bs):
            for i in range(oh):
                for ki in range(k):
                    xrow = xp[bi, i * stride + ki]
                    grow = gxp[bi, i * stride + ki]
                    for kj in range(k):
                        wv = w[ki, kj]
                        gwv = gw[ki, kj]
                        for j in range(ow):
                            gv = g[bi, i, j]
                            col = j * stride + kj
                            for ci in range(c):
                                grow[col, ci] += gv[ci] * wv[ci]
                                gwv[ci] += gv[ci] * xrow[col, ci]
        return gxp, gw
else:  # pragma: no cover - exercised only without numba
    _dw_fwd_jit = None
    _dw_fwd_c2_jit = None
    _dw_bwd_jit = None

# the jitted kernels win for wide channel counts; the numpy tap loop wins
# when C is tiny (the ufunc work per tap is then one long contiguous pass)
_JIT_MIN_CHANNELS = 4


def depthwise_conv(x: Var, w: Var, b: Var, stride: int = 1, pad: int = 2) -> Var:
    """Depthwise convolution. x: (B, H, W, C), w: (k, k, C), b: (C,).

    Evaluated as a shift-and-add over the k*k taps, which keeps peak memory
    at one activation map per tap instead of an im2col buffer.
    """
    bs, h, ww, c = x.data.shape
    k = w.data.shape[0]
    oh, ow = _out_size(h, k, stride, pad), _out_size(ww, k, stride, pad)
    xp = _pad_spatial(x.data, pad)
    use_c2 = _dw_fwd_jit is not None and c == 2 and stride == 2
    use_jit = _dw_fwd_jit is not None and (use_c2 or c >= _JIT_MIN_CHANNELS)
    if use_c2:
        out = _dw_fwd_c2_jit(xp, w.data, b.data, oh, ow)
    elif use_jit:
        out = _dw_fwd_jit(xp, w.data, b.data, stride, oh, ow)
    else:
        out = np.empty((bs, oh, ow, c), dtype=x.data.dtype)
        out[:] = b.data
        tmp = np.empty_like(out)
        # Broadcasting w[ki, kj] (shape (C,)) leaves the ufunc inner loop at C
        # elements, which dominates runtime for small C. Tiling the tap weights
        # across the output row makes the inner loop OW*C contiguous elements.
        wt = np.empty((k, k, ow, c), dtype=w.data.dtype)
        wt[:] = w.data[:, :, None, :]
        if stride == 2:
            # split into parity phases so every tap reads a dense block
            phases = [[np.ascontiguousarray(xp[:, pi::2, pj::2, :]) for pj in (0, 1)]
                      for pi in (0, 1)]
            for ki in range(k):
                for kj in range(k):
                    ph = phases[ki % 2][kj % 2]
                    sl = ph[:, ki // 2:ki // 2 + oh, kj // 2:kj // 2 + ow, :]
                    np.multiply(sl, wt[ki, kj], out=tmp)
                    out += tmp
        else:
            for ki in range(k):
                for kj in range(k):
                    sl = xp[:, ki:ki + stride * oh:stride,
                            kj:kj + stride * ow:stride, :]
                    np.multiply(sl, wt[ki, kj], out=tmp)
                    out += tmp

    def bwd(g):
        need_x, need_w = x.requires_grad, w.requires_grad
        if use_jit and (need_x or need_w):
            gxp, gw = _dw_bwd_jit(np.ascontiguousarray(g), xp, w.data, stride)
        elif need_x or need_w:
            gxp = np.zeros_like(xp)
            gtmp = np.empty_like(g)
            gw = np.zeros_like(w.data)
            wt_ = np.empty((k, k, ow, c), dtype=w.data.dtype)
            wt_[:] = w.data[:, :, None, :]
            for ki in range(k):
                for kj in range(k):
                    sl_i = slice(ki, ki + stride * oh, stride)
                    sl_j = slice(kj, kj + stride * ow, stride)
                    if need_x:
                        np.multiply(g, wt_[ki, kj], out=gtmp)
                        gxp[:, sl_i, sl_j, :] += gtmp
                    if need_w:
                        gw[ki, kj] = np.einsum("bijc,bijc->c", g,
                                               xp[:, sl_i, sl_j, :])
        if need_x:
            x.accumulate(gxp[:, pad:pad + h, pad:pad + ww, :] if pad else gxp)
        if need_w:
            w.accumulate(gw)
        if b.requires_grad:
            b.accumulate(g.sum(axis=(0, 1, 2)))
    return _result(out, (x, w, b), bwd)


def conv2d(x: Var, w: Var, b: Var, stride: int = 1, pad: int = 0) -> Var:
    """Full convolution via im2col. x: (B,H,W,C), w: (k,k,C,OC), b: (OC,)."""
    bs, h, ww, c = x.data.shape
    k = w.data.shape[0]
    oc = w.data.shape[3]
    oh, ow = _out_size(h, k, stride, pad), _out_size(ww, k, stride, pad)
    xp = _pad_spatial(x.data, pad)
    n = bs * oh * ow
    wmat = w.data.reshape(k * k * c, oc)
    # For narrow inputs the (N, k*k*C) gather writes with a C-element inner
    # loop, which is overhead-bound; building the transpose instead makes
    # every tap row one dense copy and BLAS absorbs the transposed operand.
    narrow = c <= 4
    if narrow:
        flat_t = np.empty((k * k * c, n), dtype=x.data.dtype)
        for ki in range(k):
            for kj in range(k):
                sl = xp[:, ki:ki + stride * oh:stride,
                        kj:kj + stride * ow:stride, :]
                for ci in range(c):
                    row = (ki * k + kj) * c + ci
                    np.copyto(flat_t[row].reshape(bs, oh, ow), sl[:, :, :, ci])
        flat = flat_t.T
    else:
        cols = np.empty((bs, oh, ow, k, k, c), dtype=x.data.dtype)
        for ki in range(k):
            for kj in range(k):
                cols[:, :, :, ki, kj, :] = xp[:, ki:ki + stride * oh:stride,
                                              kj:kj + stride * ow:stride, :]
        flat = cols.reshape(n, k * k * c)
    out = (flat @ wmat + b.data).reshape(bs, oh, ow, oc)

    def bwd(g):
        g2 = g.reshape(n, oc)
        if w.requires_grad:
            gw = flat_t @ g2 if narrow else flat.T @ g2
            w.accumulate(gw.reshape(w.data.shape))
        if b.requires_grad:
            b.accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            if narrow:
                gcols_t = wmat @ g2.T
                for ki in range(k):
                    for kj in range(k):
                        sl = gxp[:, ki:ki + stride * oh:stride,
                                 kj:kj + stride * ow:stride, :]
                        for ci in range(c):
                            row = (ki * k + kj) * c + ci
                            sl[:, :, :, ci] += gcols_t[row].reshape(bs, oh, ow)
            else:
                gcols = (g2 @ wmat.T).reshape(bs, oh, ow, k, k, c)
                for ki in range(k):
                    for kj in range(k):
                        gxp[:, ki:ki + stride * oh:stride,
                            kj:kj + stride * ow:stride, :] += \
                            gcols[:, :, :, ki, kj, :]
            x.accumulate(gxp[:, pad:pad + h, pad:pad + ww, :] if pad else gxp)
    return _result(out, (x, w, b), bwd)


def stride_slice2(x: Var) -> Var:
    """Spatial 2x subsampling, the stride-2 shortcut path of encoder blocks."""
    out = x.data[:, ::2, ::2, :]

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, ::2, ::2, :] = g
        x.accumulate(gx)
    return _result(out, (x,), bwd)


# -- pooling / resampling ----------------------------------------------------

def avg_pool(x: Var, k: int) -> Var:
    bs, h, w, c = x.data.shape
    if h % k or w % k:
        raise ValueError("pooling window must divide the spatial dims")
    oh, ow = h // k, w // k
    out = x.data.reshape(bs, oh, k, ow, k, c).mean(axis=(2, 4))

    def bwd(g):
        gx = np.broadcast_to(g[:, :, None, :, None, :] / (k * k),
                             (bs, oh, k, ow, k, c))
        x.accumulate(gx.reshape(bs, h, w, c))
    return _result(out, (x,), bwd)


def upsample_nearest(x: Var, factor: int) -> Var:
    bs, h, w, c = x.data.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def bwd(g):
        gx = g.reshape(bs, h, factor, w, factor, c).sum(axis=(2, 4))
        x.accumulate(gx)
    return _result(out, (x,), bwd)


# -- batch normalization -------------------------------------------------------

def batchnorm(x: Var, gamma: Var, beta: Var, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, momentum: float = 0.1,
              eps: float = 1e-5) -> Var:
    """Channel-wise batch norm over (B, H, W) for NHWC activations.

    In training mode the running statistics arrays are updated in place
    (biased variance, matching the normalization itself).
    """
    axes = (0, 1, 2)
    n = x.data.shape[0] * x.data.shape[1] * x.data.shape[2]
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * ivar
    out = gamma.data * xhat + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=axes))
        if not x.requires_grad:
            return
        if training:
            gxhat = g * gamma.data
            gvar = (gxhat * (x.data - mu)).sum(axis=axes) * (-0.5) * ivar ** 3
            gmu = -(gxhat.sum(axis=axes)) * ivar \
                - gvar * 2.0 * (x.data - mu).mean(axis=axes)
            gx = gxhat * ivar + gvar * 2.0 * (x.data - mu) / n + gmu / n
            x.accumulate(gx)
        else:
            x.accumulate(g * gamma.data * ivar)
    return _result(out, (x, gamma, beta), bwd)
