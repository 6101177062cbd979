"""Dense tensors with a minimal reverse-mode autodiff engine.

Only the operations the rest of the library needs are implemented: broadcast
elementwise arithmetic, a handful of activations, reductions, shape
manipulation, 2D (cross-correlation) convolution, bilinear sampling and the
state-space scan primitive.  Arrays are plain numpy, float32 for training and
float64 for gradient-check mode.
"""

from __future__ import annotations

import numpy as np

from . import backend


class Tensor:
    """A numpy array plus an optional gradient and graph linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # ----- basic protocol -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # operators
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # ----- backward pass --------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def check_finite(self, name="tensor"):
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {name}")
        return self


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    """Wrap an op result; graph linkage only if some parent needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward pass."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----- elementwise arithmetic --------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, -_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), bwd)


def neg(a):
    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bwd)


def exp(a):
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), bwd)


def sigmoid(a):
    out_data = _sigmoid(a.data)

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a):
    s = _sigmoid(a.data)
    out_data = a.data * s

    def bwd(g):
        _accum(a, g * (s + a.data * s * (1.0 - s)))

    return _make(out_data, (a,), bwd)


def softplus(a):
    # log(1 + e^x), stable for large |x|
    out_data = np.logaddexp(0.0, a.data).astype(a.dtype)
    s = _sigmoid(a.data)

    def bwd(g):
        _accum(a, g * s)

    return _make(out_data, (a,), bwd)


def square(a):
    def bwd(g):
        _accum(a, g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), bwd)


def sqrt(a):
    out_data = np.sqrt(a.data)

    def bwd(g):
        _accum(a, g * 0.5 / out_data)

    return _make(out_data, (a,), bwd)


def absolute(a):
    sign = np.sign(a.data)

    def bwd(g):
        _accum(a, g * sign)

    return _make(np.abs(a.data), (a,), bwd)


def clamp(a, lo, hi):
    inside = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        _accum(a, g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), bwd)


# ----- reductions --------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(out_data, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in ax]))
    if count == 0:
        raise ValueError("mean over empty axis")
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape) / count)

    return _make(out_data, (a,), bwd)


def tmax(a, axis=None, keepdims=False):
    """Max reduction; ties route their subgradient to the first max index."""
    if axis is None:
        ax = tuple(range(a.ndim))
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
    ax = tuple(sorted(i % a.ndim for i in ax))
    if any(a.shape[i] == 0 for i in ax):
        raise ValueError("max over empty axis")
    keep = tuple(i for i in range(a.ndim) if i not in ax)
    perm = keep + ax
    moved = a.data.transpose(perm)
    lead = moved.shape[: len(keep)]
    red = int(np.prod(moved.shape[len(keep):])) if ax else 1
    flat = moved.reshape(lead + (red,))
    idx = flat.argmax(axis=-1)
    out_flat = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if keepdims:
        shp = tuple(1 if i in ax else a.shape[i] for i in range(a.ndim))
        out_data = out_flat.reshape(shp)
    else:
        out_data = out_flat

    def bwd(g):
        g = np.asarray(g).reshape(lead)
        gflat = np.zeros(lead + (red,), dtype=a.dtype)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        inv = np.argsort(perm)
        _accum(a, gflat.reshape(moved.shape).transpose(inv))

    return _make(out_data, (a,), bwd)


def softmax(a, axis):
    # shift by the max for stability; the extra path contributes zero gradient
    shifted = sub(a, tmax(a, axis=axis, keepdims=True))
    e = exp(shifted)
    return div(e, tsum(e, axis=axis, keepdims=True))


# ----- shape manipulation ------------------------------------------------


def reshape(a, shape):
    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def transpose(a, axes):
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bwd)


def flip(a, axis):
    def bwd(g):
        _accum(a, np.flip(g, axis=axis))

    return _make(np.flip(a.data, axis=axis), (a,), bwd)


def getitem(a, idx):
    out_data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        _accum(a, full)

    return _make(np.array(out_data, copy=True), (a,), bwd)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(out_data, tuple(tensors), bwd)


def pad2d(a, ph, pw):
    """Zero-pad the two trailing (spatial) axes of an NCHW tensor."""
    pads = [(0, 0)] * (a.ndim - 2) + [(ph, ph), (pw, pw)]
    out_data = np.pad(a.data, pads)

    def bwd(g):
        sl = [slice(None)] * (a.ndim - 2)
        sl += [slice(ph, g.shape[-2] - ph), slice(pw, g.shape[-1] - pw)]
        _accum(a, g[tuple(sl)])

    return _make(out_data, (a,), bwd)


def upsample_nearest(a, factor):
    """Nearest-neighbour upsampling of an (N,C,H,W) tensor."""
    out_data = a.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def bwd(g):
        n, c, h, w = a.shape
        _accum(a, g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    return _make(out_data, (a,), bwd)


# ----- linear algebra ----------------------------------------------------


def matmul(a, b):
    """2D matrix product (m,k) @ (k,n)."""
    out_data = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out_data, (a, b), bwd)


# ----- convolution -------------------------------------------------------


def _im2col(x, kh, kw, stride):
    """x already padded, (N,C,H,W) -> (N, C*kh*kw, OH*OW)."""
    from numpy.lib.stride_tricks import sliding_window_view

    sw = sliding_window_view(x, (kh, kw), axis=(2, 3))
    sw = sw[:, :, ::stride, ::stride]
    n, c, oh, ow = sw.shape[:4]
    cols = np.ascontiguousarray(sw.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _conv2d_raw(x, w, stride=1, padding=0):
    """Plain numpy cross-correlation used by forward and backward passes."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    co, ci, kh, kw = w.shape
    cols, oh, ow = _im2col(x, kh, kw, stride)
    out = np.matmul(w.reshape(co, ci * kh * kw)[None], cols)
    return out.reshape(x.shape[0], co, oh, ow), cols


def conv2d(x, w, b=None, stride=1, padding="same"):
    """Cross-correlation over (N,C,H,W).

    padding is "same" (odd kernels, stride 1), "valid", or an explicit int.
    """
    co, ci, kh, kw = w.shape
    if x.shape[1] != ci:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[1]}, kernel {ci}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0 or stride != 1:
            raise ValueError("'same' padding requires odd kernel and stride 1")
        pad = (kh - 1) // 2
    elif padding == "valid":
        pad = 0
    else:
        pad = int(padding)
    out_data, cols = _conv2d_raw(x.data, w.data, stride, pad)
    if b is not None:
        out_data = out_data + b.data.reshape(1, co, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        n, _, oh, ow = g.shape
        g2 = g.reshape(n, co, oh * ow)
        if w.requires_grad:
            dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
            _accum(w, dw)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            _accum(x, _conv2d_input_grad(g, w.data, x.shape, stride, pad))

    return _make(out_data, parents, bwd)


def _conv2d_input_grad(g, w, x_shape, stride, pad):
    """Gradient w.r.t. the conv input: transposed convolution."""
    n, co, oh, ow = g.shape
    _, ci, kh, kw = w.shape
    h, wd = x_shape[2], x_shape[3]
    # dilate by the stride
    if stride > 1:
        gd = np.zeros((n, co, (oh - 1) * stride + 1, (ow - 1) * stride + 1), dtype=g.dtype)
        gd[:, :, ::stride, ::stride] = g
    else:
        gd = g
    # extra right/bottom pad covers input columns the forward pass never reached
    rh = h + 2 * pad - kh - (oh - 1) * stride
    rw = wd + 2 * pad - kw - (ow - 1) * stride
    gd = np.pad(
        gd,
        ((0, 0), (0, 0), (kh - 1 - pad, kh - 1 - pad + rh), (kw - 1 - pad, kw - 1 - pad + rw)),
    )
    w_t = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    dx, _ = _conv2d_raw(gd, w_t, 1, 0)
    return dx


def dwconv2d(x, w, b=None):
    """Depthwise 3x3 convolution, stride 1, same padding; w is (C,1,kh,kw).

    Computed as kh*kw shifted multiply-adds, which beats an im2col round
    trip when the kernel is small.
    """
    c, _, kh, kw = w.shape
    if x.shape[1] != c:
        raise ValueError("dwconv2d channel mismatch")
    _, _, h, wid = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out_data = np.zeros_like(x.data)
    for u in range(kh):
        for v in range(kw):
            out_data += w.data[None, :, 0, u, v, None, None] * \
                xp[:, :, u : u + h, v : v + wid]
    if b is not None:
        out_data = out_data + b.data.reshape(1, c, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        if w.requires_grad:
            dw = np.empty_like(w.data)
            for u in range(kh):
                for v in range(kw):
                    dw[:, 0, u, v] = np.einsum(
                        "nchw,nchw->c", xp[:, :, u : u + h, v : v + wid], g)
            _accum(w, dw)
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1 - ph,) * 2,
                            (kw - 1 - pw,) * 2))
            dx = np.zeros_like(x.data)
            for u in range(kh):
                for v in range(kw):
                    dx += w.data[None, :, 0, kh - 1 - u, kw - 1 - v, None, None] * \
                        gp[:, :, u : u + h, v : v + wid]
            _accum(x, dx)

    return _make(out_data, parents, bwd)


# ----- bilinear sampling -------------------------------------------------


def bilinear_gather(x, ys, xs):
    """Sample x (N,C,H,W) at fractional positions, zero outside the image.

    ys, xs have shape (N,K,H,W); the result is (N,C,K,H,W).
    """
    n, c, h, w = x.shape
    plan = bilinear_plan(ys.data, xs.data, h, w)
    xf = np.ascontiguousarray(x.data.reshape(n, c, h * w))
    out_data = backend.impl().bilinear_forward(xf, plan)
    out_data = out_data.reshape((n, c) + ys.shape[1:])
    parents = (x, ys, xs)

    def bwd(g):
        dxf, dys, dxs = backend.impl().bilinear_backward(
            np.ascontiguousarray(g.reshape(n, c, -1)), xf, plan,
            x.requires_grad, ys.requires_grad or xs.requires_grad,
        )
        if dxf is not None:
            _accum(x, dxf.reshape(x.shape))
        if dys is not None:
            _accum(ys, dys.reshape(ys.shape))
            _accum(xs, dxs.reshape(xs.shape))

    return _make(out_data, parents, bwd)


def bilinear_plan(ys, xs, h, w):
    """Corner indices (flattened spatial), weights, masks and fractions."""
    n = ys.shape[0]
    ysf = ys.reshape(n, -1)
    xsf = xs.reshape(n, -1)
    y0 = np.floor(ysf)
    x0 = np.floor(xsf)
    fy = np.ascontiguousarray(ysf - y0, dtype=ys.dtype)
    fx = np.ascontiguousarray(xsf - x0, dtype=xs.dtype)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y1, x1 = y0 + 1, x0 + 1
    vy0 = (y0 >= 0) & (y0 < h)
    vy1 = (y1 >= 0) & (y1 < h)
    vx0 = (x0 >= 0) & (x0 < w)
    vx1 = (x1 >= 0) & (x1 < w)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x1, 0, w - 1)
    m00 = (vy0 & vx0).astype(np.uint8)
    m01 = (vy0 & vx1).astype(np.uint8)
    m10 = (vy1 & vx0).astype(np.uint8)
    m11 = (vy1 & vx1).astype(np.uint8)
    dt = ys.dtype
    return (
        np.ascontiguousarray(y0c * w + x0c),
        np.ascontiguousarray(y0c * w + x1c),
        np.ascontiguousarray(y1c * w + x0c),
        np.ascontiguousarray(y1c * w + x1c),
        np.ascontiguousarray((1 - fy) * (1 - fx) * m00, dtype=dt),
        np.ascontiguousarray((1 - fy) * fx * m01, dtype=dt),
        np.ascontiguousarray(fy * (1 - fx) * m10, dtype=dt),
        np.ascontiguousarray(fy * fx * m11, dtype=dt),
        m00, m01, m10, m11, fy, fx,
    )


# ----- selective-scan primitive ------------------------------------------


def scan_core(abar, bu, cmat):
    """Linear recurrence h_t = abar_t * h_{t-1} + bu_t, y_t = <cmat_t, h_t>.

    abar, bu: (N,L,C,S); cmat: (N,L,S); returns y (N,L,C).
    """
    y, h = backend.impl().scan_forward(abar.data, bu.data, cmat.data)

    def bwd(g):
        da, dbu, dc = backend.impl().scan_backward(
            abar.data, cmat.data, h, np.ascontiguousarray(g)
        )
        _accum(abar, da)
        _accum(bu, dbu)
        _accum(cmat, dc)

    return _make(y, (abar, bu, cmat), bwd)
