"""Per-branch building blocks: Mamba block wrapper, deform block, modulator,
channel attention, and the patch embed / un-patchify pair."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .scan import SsmParams, ss2d_global, ss2d_local
from .tensor import Tensor


def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    w = rng.standard_normal(shape) * std
    return np.clip(w, -2 * std, 2 * std).astype(dtype)


def zeros(shape, dtype=np.float32):
    return np.zeros(shape, dtype=dtype)


class LayerNorm:
    """Normalization over the channel axis of an (N,C,H,W) map."""

    def __init__(self, channels, dtype=np.float32, eps=1e-5):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        c = x.shape[1]
        mu = T.tmean(x, axis=1, keepdims=True)
        d = x - mu
        var = T.tmean(T.square(d), axis=1, keepdims=True)
        xhat = d / T.sqrt(var + self.eps)
        g = T.reshape(self.gamma, (1, c, 1, 1))
        b = T.reshape(self.beta, (1, c, 1, 1))
        return xhat * g + b

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}


class Conv2d:
    def __init__(self, c_in, c_out, k, rng=None, stride=1, padding="same",
                 zero_init=False, dtype=np.float32):
        if zero_init:
            w = zeros((c_out, c_in, k, k), dtype)
        else:
            w = trunc_normal(rng, (c_out, c_in, k, k), dtype=dtype)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(zeros(c_out, dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def parameters(self):
        return {"w": self.w, "b": self.b}


class ChannelAttention:
    """Squeeze-excite gate over channels; reduction ratio 4."""

    RATIO = 4

    def __init__(self, channels, rng, dtype=np.float32):
        hidden = max(1, channels // self.RATIO)
        self.w1 = Tensor(trunc_normal(rng, (hidden, channels), dtype=dtype), requires_grad=True)
        self.b1 = Tensor(zeros(hidden, dtype), requires_grad=True)
        self.w2 = Tensor(trunc_normal(rng, (channels, hidden), dtype=dtype), requires_grad=True)
        self.b2 = Tensor(zeros(channels, dtype), requires_grad=True)

    def __call__(self, x):
        n, c = x.shape[0], x.shape[1]
        gap = T.tmean(x, axis=(2, 3))
        h = T.silu(T.matmul(gap, T.transpose(self.w1, (1, 0))) + self.b1)
        s = T.sigmoid(T.matmul(h, T.transpose(self.w2, (1, 0))) + self.b2)
        return x * T.reshape(s, (n, c, 1, 1))

    def parameters(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def channel_attention(x, ca):
    return ca(x)


class MambaBlock:
    """Two-path block: gated linear path times the SS2D path, then channel
    attention, with an optional residual."""

    def __init__(self, channels, n_state, rng, mode="global", residual=True,
                 direction_specific=False, euler=False, dtype=np.float32):
        if mode not in ("global", "local"):
            raise ValueError(f"unknown scan mode {mode!r}")
        self.mode = mode
        self.residual = residual
        self.euler = euler
        self.ln1 = LayerNorm(channels, dtype)
        self.ln2 = LayerNorm(channels, dtype)
        self.lin_a = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.lin_b = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.lin_out = Conv2d(channels, channels, 1, rng, dtype=dtype)
        self.dw_w = Tensor(trunc_normal(rng, (channels, 1, 3, 3), dtype=dtype), requires_grad=True)
        self.dw_b = Tensor(zeros(channels, dtype), requires_grad=True)
        if direction_specific:
            self.ssm = [SsmParams(channels, n_state, rng, dtype) for _ in range(4)]
        else:
            self.ssm = SsmParams(channels, n_state, rng, dtype)
        self.ca = ChannelAttention(channels, rng, dtype)

    def __call__(self, x):
        xn = self.ln1(x)
        p1 = T.silu(self.lin_a(xn))
        p2 = T.silu(T.dwconv2d(self.lin_b(xn), self.dw_w, self.dw_b))
        scan2d = ss2d_global if self.mode == "global" else ss2d_local
        p2 = self.ln2(scan2d(p2, self.ssm, euler=self.euler))
        out = self.ca(self.lin_out(p1 * p2))
        return x + out if self.residual else out

    def parameters(self):
        params = {}
        for name, sub in (
            ("ln1", self.ln1), ("ln2", self.ln2), ("lin_a", self.lin_a),
            ("lin_b", self.lin_b), ("lin_out", self.lin_out), ("ca", self.ca),
        ):
            for k, v in sub.parameters().items():
                params[f"{name}.{k}"] = v
        params["dw.w"] = self.dw_w
        params["dw.b"] = self.dw_b
        ssms = self.ssm if isinstance(self.ssm, list) else [self.ssm]
        for i, s in enumerate(ssms):
            prefix = f"ssm{i}." if len(ssms) > 1 else "ssm."
            for k, v in s.parameters().items():
                params[prefix + k] = v
        return params


class DeformBlock:
    """3x3 deformable convolution with content-predicted offsets and masks.

    The offset and mask predictors are zero-initialised so the block starts
    as a plain convolution with half-open masks.
    """

    K = 9

    def __init__(self, channels, rng, dtype=np.float32):
        self.w = Tensor(trunc_normal(rng, (channels, channels, 3, 3), dtype=dtype),
                        requires_grad=True)
        self.b = Tensor(zeros(channels, dtype), requires_grad=True)
        self.offset_conv = Conv2d(channels, 2 * self.K, 3, zero_init=True, dtype=dtype)
        self.mask_conv = Conv2d(channels, self.K, 3, zero_init=True, dtype=dtype)
        # predefined 3x3 offsets, row-major over {-1,0,1}^2
        pk = np.array([(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)])
        self.pk_y = pk[:, 0].astype(dtype)
        self.pk_x = pk[:, 1].astype(dtype)

    def __call__(self, x):
        return deform_conv(x, self)

    def parameters(self):
        params = {"w": self.w, "b": self.b}
        for k, v in self.offset_conv.parameters().items():
            params[f"offset.{k}"] = v
        for k, v in self.mask_conv.parameters().items():
            params[f"mask.{k}"] = v
        return params


def deform_conv(x, params):
    """Eq-style deformable conv: sample at p + p_k + dp_k, weight by dm_k."""
    n, c, h, w = x.shape
    k = params.K
    off = params.offset_conv(x)
    off.check_finite("deform offsets")
    off_y = T.clamp(off[:, :k], -float(h), float(h))
    off_x = T.clamp(off[:, k:], -float(w), float(w))
    mask = T.sigmoid(params.mask_conv(x))
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    base_y = gy[None, None] + params.pk_y[None, :, None, None]
    base_x = gx[None, None] + params.pk_x[None, :, None, None]
    ys = off_y + Tensor(base_y.astype(x.dtype))
    xs = off_x + Tensor(base_x.astype(x.dtype))
    sampled = T.bilinear_gather(x, ys, xs)
    masked = sampled * T.reshape(mask, (n, 1, k, h, w))
    flat = T.reshape(masked, (n, c * k, h, w))
    w_flat = T.reshape(params.w, (params.w.shape[0], c * k, 1, 1))
    return T.conv2d(flat, w_flat, params.b, stride=1, padding=0)


def modulator(f_deform, f_mamba):
    """Gate the Mamba features by the deformable ones, then recombine."""
    if f_deform.shape != f_mamba.shape:
        raise ValueError("modulator operands must share shape")
    return T.sigmoid(f_deform) * f_mamba + f_deform


class PatchEmbed:
    """Non-overlapping patch embedding: k=patch conv with stride=patch."""

    def __init__(self, channels, patch, rng, dtype=np.float32):
        self.patch = patch
        self.conv = Conv2d(channels, channels, patch, rng, stride=patch,
                           padding=0, dtype=dtype)

    def __call__(self, x):
        if x.shape[2] % self.patch or x.shape[3] % self.patch:
            raise ValueError("spatial extent not divisible by patch size")
        return self.conv(x)

    def parameters(self):
        return {f"conv.{k}": v for k, v in self.conv.parameters().items()}


class Unpatchify:
    """Nearest-neighbour upsample back to pixel resolution plus a 3x3 conv."""

    def __init__(self, channels, patch, rng, dtype=np.float32):
        self.patch = patch
        self.conv = Conv2d(channels, channels, 3, rng, dtype=dtype)

    def __call__(self, x):
        return self.conv(T.upsample_nearest(x, self.patch))

    def parameters(self):
        return {f"conv.{k}": v for k, v in self.conv.parameters().items()}
