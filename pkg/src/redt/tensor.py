"""Dense-tensor engine with taped reverse-mode differentiation.

Design notes:
  - A Tensor wraps a numpy array plus an optional gradient slot. Every
    primitive records a backward closure on the result; ``backward()`` on a
    scalar walks the tape once and then frees it.
  - All ops preserve the dtype of their inputs (float32 for training,
    float64 for gradient checking) and use a fixed numpy op ordering, so a
    given graph evaluates bit-identically across runs on one machine.
  - Gradients accumulate: ``backward()`` adds into any grad already present.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import NumericalError, UsageError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """A view of the same data with no tape history."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- autograd ------------------------------------------------------------

    def backward(self, free_graph=True):
        """Reverse-mode sweep from a scalar; accumulates into ``.grad``.

        Raises UsageError when called on a non-scalar or on a value that was
        never recorded on the tape.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar, got shape {self.data.shape}")
        if not self._parents and not self.requires_grad:
            raise UsageError("backward() on a value that is not on the tape")
        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        if free_graph:
            for node in topo:
                node._backward = None
                node._parents = ()
                if not node.requires_grad:
                    node.grad = None

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    """Create a result node; records the closure only when grads can flow."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t, g, own=False):
    """Add ``g`` into ``t.grad``. ``own=True`` promises ``g`` is a fresh array
    no other node aliases, so the first accumulation can adopt it directly."""
    if t.grad is None:
        t.grad = g if own else g.copy()
    else:
        t.grad += g


def _unbroadcast(g, shape, owned=False):
    """Reduce a broadcasted gradient back to ``shape`` by summing.

    Returns (array, owned): owned means the result is a fresh array.
    """
    while g.ndim > len(shape):
        g = g.sum(axis=0)
        owned = True
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
            owned = True
    return g.reshape(shape), owned


# -- arithmetic ---------------------------------------------------------------


def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    data = a.data + b.data

    def back(g):
        if a.requires_grad or a._parents:
            _accum(a, *_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            _accum(b, *_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), back)


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    data = a.data - b.data

    def back(g):
        if a.requires_grad or a._parents:
            _accum(a, *_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            _accum(b, *_unbroadcast(-g, b.data.shape, owned=True))

    return _make(data, (a, b), back)


def mul(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _as_tensor(a)
        c = float(b)
        data = a.data * c

        def back_scalar(g):
            _accum(a, g * c, own=True)

        return _make(data, (a,), back_scalar)
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    data = a.data * b.data

    def back(g):
        if a.requires_grad or a._parents:
            _accum(a, *_unbroadcast(g * b.data, a.data.shape, owned=True))
        if b.requires_grad or b._parents:
            _accum(b, *_unbroadcast(g * a.data, b.data.shape, owned=True))

    return _make(data, (a, b), back)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise UsageError("matmul operands must be at least 2-D")
    data = np.matmul(a.data, b.data)

    def back(g):
        if a.requires_grad or a._parents:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, *_unbroadcast(ga, a.data.shape, owned=True))
        if b.requires_grad or b._parents:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, *_unbroadcast(gb, b.data.shape, owned=True))

    return _make(data, (a, b), back)


# -- shape manipulation ---------------------------------------------------------


def reshape(x, shape):
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def back(g):
        _accum(x, g.reshape(x.data.shape))

    return _make(data, (x,), back)


def transpose(x, axes):
    x = _as_tensor(x)
    axes = tuple(axes)
    data = np.ascontiguousarray(x.data.transpose(axes))
    inv = np.argsort(axes)

    def back(g):
        _accum(x, g.transpose(inv))

    return _make(data, (x,), back)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad or t._parents:
                _accum(t, piece)

    return _make(data, tuple(tensors), back)


def narrow_last(x, start, size):
    """Contiguous slice along the last axis."""
    x = _as_tensor(x)
    data = np.ascontiguousarray(x.data[..., start : start + size])

    def back(g):
        gx = np.zeros_like(x.data)
        gx[..., start : start + size] = g
        _accum(x, gx, own=True)

    return _make(data, (x,), back)


def index_select(x, idx, unique=False):
    """Gather rows along axis 0; backward scatter-adds (duplicates sum).

    ``unique=True`` promises no duplicate indices (a permutation or subset),
    allowing the cheaper assignment scatter.
    """
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    data = x.data[idx]

    def back(g):
        gx = np.zeros_like(x.data)
        if unique:
            gx[idx] = g
        elif gx.ndim == 2 and idx.size >= gx.shape[0]:
            # heavy-duplicate table gather: per-column bincount beats add.at
            for j in range(gx.shape[1]):
                gx[:, j] = np.bincount(idx, weights=g[:, j], minlength=gx.shape[0]).astype(gx.dtype)
        else:
            np.add.at(gx, idx, g)
        _accum(x, gx, own=True)

    return _make(data, (x,), back)


def masked_select(x, mask):
    """Flattened entries of ``x`` where ``mask`` is true, as a 1-D tensor."""
    x = _as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.data.shape:
        raise UsageError(f"mask shape {mask.shape} != tensor shape {x.data.shape}")
    idx = np.flatnonzero(mask.reshape(-1))
    flat = reshape(x, (-1,))
    return index_select(flat, idx, unique=True)


# -- reductions -----------------------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape).copy(), own=True)
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(g, x.data.shape).copy(), own=True)

    return _make(data, (x,), back)


def tmean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    if axis is None:
        n = x.data.size
    else:
        n = x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- elementwise nonlinearities ----------------------------------------------------


def _sigmoid_stable(d):
    # exp(-|d|) never overflows; both branches share it
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    x = _as_tensor(x)
    out = _sigmoid_stable(x.data)

    def back(g):
        _accum(x, g * out * (1.0 - out), own=True)

    return _make(out, (x,), back)


def tlog(x):
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericalError("log of a non-positive value")
    data = np.log(x.data)

    def back(g):
        _accum(x, g / x.data, own=True)

    return _make(data, (x,), back)


def tsqrt(x):
    """sqrt with the radicand clamped at 0; subgradient 0 on the clamped side."""
    x = _as_tensor(x)
    clamped = np.maximum(x.data, 0.0)
    data = np.sqrt(clamped)

    def back(g):
        gx = np.where(x.data > 0, 0.5 / np.maximum(data, np.finfo(data.dtype).tiny), 0.0)
        _accum(x, (g * gx).astype(x.data.dtype, copy=False), own=True)

    return _make(data, (x,), back)


def glu(x):
    """Gated linear unit over the last axis: first half * sigmoid(second half)."""
    x = _as_tensor(x)
    c = x.data.shape[-1]
    if c % 2 != 0:
        raise UsageError("glu needs an even last dimension")
    h = c // 2
    a = x.data[..., :h]
    b = x.data[..., h:]
    s = _sigmoid_stable(b)
    data = a * s

    def back(g):
        gx = np.empty_like(x.data)
        gx[..., :h] = g * s
        gx[..., h:] = g * a * s * (1.0 - s)
        _accum(x, gx, own=True)

    return _make(data, (x,), back)


def silu(x):
    """x * sigmoid(x), composed from taped primitives."""
    return mul(x, sigmoid(x))


def softmax_rows(x):
    """Row-wise softmax of a 2-D tensor, computed with max subtraction."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise UsageError(f"softmax_rows needs a 2-D input, got {x.data.shape}")
    return _softmax_last(x)


def _softmax_last(x):
    m = np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    s = np.sum(e, axis=-1, keepdims=True)
    y = e / s

    def back(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        _accum(x, y * (g - dot), own=True)

    return _make(y, (x,), back)


def softmax_lastaxis(x):
    """Softmax over the last axis for tensors of any rank."""
    x = _as_tensor(x)
    return _softmax_last(x)


# -- normalization -----------------------------------------------------------------


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def back(g):
        if gamma.requires_grad or gamma._parents:
            _accum(gamma, *_unbroadcast(g * xhat, gamma.data.shape, owned=True))
        if beta.requires_grad or beta._parents:
            _accum(beta, *_unbroadcast(g, beta.data.shape))
        if x.requires_grad or x._parents:
            dxhat = g * gamma.data
            m1 = np.mean(dxhat, axis=-1, keepdims=True)
            m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2), own=True)

    return _make(data, (x, gamma, beta), back)


def batch_norm(x, gamma, beta, mean, var, eps=1e-5, stats_from_batch=True):
    """Per-channel (last axis) normalization.

    When ``stats_from_batch`` the supplied mean/var must be the batch moments
    of ``x`` (biased variance) and the backward pass differentiates through
    them; otherwise they are treated as constants (running statistics).
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    data = xhat * gamma.data + beta.data
    red_axes = tuple(range(x.data.ndim - 1))
    n_red = int(np.prod([x.data.shape[a] for a in red_axes])) if red_axes else 1

    def back(g):
        if gamma.requires_grad or gamma._parents:
            _accum(gamma, np.sum(g * xhat, axis=red_axes), own=True)
        if beta.requires_grad or beta._parents:
            _accum(beta, np.sum(g, axis=red_axes), own=True)
        if x.requires_grad or x._parents:
            dxhat = g * gamma.data
            if stats_from_batch:
                s1 = np.sum(dxhat, axis=red_axes, keepdims=True)
                s2 = np.sum(dxhat * xhat, axis=red_axes, keepdims=True)
                _accum(x, inv * (dxhat - s1 / n_red - xhat * s2 / n_red), own=True)
            else:
                _accum(x, dxhat * inv, own=True)

    return _make(data, (x, gamma, beta), back)


# -- spatial ops (single image, HWC layout) ----------------------------------------


def _pad_hw(x, pad):
    if pad == 0:
        return x
    h, w, c = x.shape
    out = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    out[pad:-pad, pad:-pad, :] = x
    return out


def _im2col(padded, kh, kw, h, w):
    cin = padded.shape[2]
    s0, s1, s2 = padded.strides
    view = np.lib.stride_tricks.as_strided(
        padded, shape=(h, w, kh, kw, cin), strides=(s0, s1, s0, s1, s2), writeable=False
    )
    return np.ascontiguousarray(view).reshape(h * w, kh * kw * cin)


def _col2im(gcols, kh, kw, h, w, cin, pad):
    gp = np.zeros((h + 2 * pad, w + 2 * pad, cin), dtype=gcols.dtype)
    gcols = gcols.reshape(h, w, kh, kw, cin)
    for i in range(kh):
        for j in range(kw):
            gp[i : i + h, j : j + w, :] += gcols[:, :, i, j, :]
    if pad:
        return gp[pad:-pad, pad:-pad, :]
    return gp


def conv2d(x, w, b, pad=1):
    """Stride-1 2-D convolution; x is H,W,Cin, w is kh,kw,Cin,Cout."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    h, wid, cin = x.data.shape
    kh, kw, wcin, cout = w.data.shape
    if wcin != cin:
        raise UsageError(f"conv2d channel mismatch: input {cin}, kernel {wcin}")
    padded = _pad_hw(x.data, pad)
    cols = _im2col(padded, kh, kw, h, wid)
    wmat = w.data.reshape(kh * kw * cin, cout)
    data = (cols @ wmat + b.data).reshape(h, wid, cout)

    def back(g):
        g2 = g.reshape(h * wid, cout)
        if w.requires_grad or w._parents:
            _accum(w, (cols.T @ g2).reshape(w.data.shape), own=True)
        if b.requires_grad or b._parents:
            _accum(b, g2.sum(axis=0), own=True)
        if x.requires_grad or x._parents:
            gcols = g2 @ wmat.T
            _accum(x, _col2im(gcols, kh, kw, h, wid, cin, pad), own=True)

    return _make(data, (x, w, b), back)


def depthwise_conv2d(x, w, b, pad=1):
    """Per-channel 2-D convolution; x is H,W,C, w is kh,kw,C."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    h, wid, c = x.data.shape
    kh, kw, wc = w.data.shape
    if wc != c:
        raise UsageError(f"depthwise_conv2d channel mismatch: input {c}, kernel {wc}")
    padded = _pad_hw(x.data, pad)
    cols = _im2col(padded, kh, kw, h, wid).reshape(h * wid, kh * kw, c)
    data = (np.einsum("nkc,kc->nc", cols, w.data.reshape(kh * kw, c)) + b.data).reshape(h, wid, c)

    def back(g):
        g2 = g.reshape(h * wid, c)
        if w.requires_grad or w._parents:
            _accum(w, np.einsum("nkc,nc->kc", cols, g2).reshape(w.data.shape), own=True)
        if b.requires_grad or b._parents:
            _accum(b, g2.sum(axis=0), own=True)
        if x.requires_grad or x._parents:
            gcols = g2[:, None, :] * w.data.reshape(1, kh * kw, c)
            _accum(x, _col2im(gcols.reshape(h * wid, kh * kw * c), kh, kw, h, wid, c, pad), own=True)

    return _make(data, (x, w, b), back)


def _resize_matrix(n_in, n_out, dtype):
    """(n_out, n_in) interpolation weights with corner alignment, so a linear
    ramp resizes to a linear ramp."""
    mat = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1:
        mat[:, 0] = 1.0
        return mat
    pos = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1) if n_out > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    mat[rows, lo] = (1.0 - frac).astype(dtype)
    mat[rows, lo + 1] += frac.astype(dtype)
    return mat


def bilinear_resize(x, out_h, out_w):
    """Bilinear resize of an H,W,C (or H,W) tensor with corner alignment.

    Separable: out = Wy @ x @ Wxᵀ per channel, adjoint is the transpose pair.
    """
    x = _as_tensor(x)
    squeeze = x.data.ndim == 2
    d = x.data[..., None] if squeeze else x.data
    h, w, c = d.shape
    wy = _resize_matrix(h, out_h, d.dtype)
    wx = _resize_matrix(w, out_w, d.dtype)
    t1 = np.tensordot(wy, d, axes=(1, 0))  # (out_h, w, c)
    data = np.einsum("pw,owc->opc", wx, t1, optimize=True)
    if squeeze:
        data = data[..., 0]

    def back(g):
        gg = g[..., None] if squeeze else g
        g1 = np.tensordot(wy.T, gg, axes=(1, 0))  # (h, out_w, c)
        gx = np.einsum("pw,hpc->hwc", wx, g1, optimize=True)
        _accum(x, gx[..., 0] if squeeze else gx, own=True)

    return _make(data, (x,), back)
