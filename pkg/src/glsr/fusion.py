"""Multi-modality feature fusion: difference, similarity, complementary
mixing, and the learned three-way weighted combination."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class FusionParams:
    """comp_conv: 1x1 conv over the concatenated features giving the two
    per-pixel competition logits; mix_fc: 3C pooled features -> 3 logits.

    Both are zero-initialised so the untrained block reduces to uniform
    averaging.
    """

    def __init__(self, channels, dtype=np.float32):
        self.comp_w = Tensor(np.zeros((2, 2 * channels, 1, 1), dtype=dtype), requires_grad=True)
        self.comp_b = Tensor(np.zeros(2, dtype=dtype), requires_grad=True)
        self.mix_w = Tensor(np.zeros((3, 3 * channels), dtype=dtype), requires_grad=True)
        self.mix_b = Tensor(np.zeros(3, dtype=dtype), requires_grad=True)

    def parameters(self):
        return {
            "comp_w": self.comp_w,
            "comp_b": self.comp_b,
            "mix_w": self.mix_w,
            "mix_b": self.mix_b,
        }


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ValueError(f"fusion shape mismatch: {a.shape} vs {b.shape}")


def fuse_difference(f_lr, f_ref):
    _check_shapes(f_lr, f_ref)
    return f_lr - f_ref


def fuse_similarity(f_lr, f_ref):
    _check_shapes(f_lr, f_ref)
    return f_lr * f_ref


def fuse_complementary(f_lr, f_ref, params):
    """Per-pixel softmax competition between the two modalities."""
    _check_shapes(f_lr, f_ref)
    logits = T.conv2d(T.concat([f_lr, f_ref], axis=1), params.comp_w,
                      params.comp_b, stride=1, padding=0)
    w = T.softmax(logits, axis=1)
    return f_lr * w[:, 0:1] + f_ref * w[:, 1:2]


def fuse_weighted(f_di, f_sim, f_com, params):
    """Global-max-pool the three maps, mix with softmax scalar weights."""
    _check_shapes(f_di, f_sim)
    _check_shapes(f_di, f_com)
    n = f_di.shape[0]
    pooled = T.tmax(T.concat([f_di, f_sim, f_com], axis=1), axis=(2, 3))
    logits = T.matmul(pooled, T.transpose(params.mix_w, (1, 0))) + params.mix_b
    w = T.softmax(logits, axis=1)
    w_di = T.reshape(w[:, 0:1], (n, 1, 1, 1))
    w_sim = T.reshape(w[:, 1:2], (n, 1, 1, 1))
    w_com = T.reshape(w[:, 2:3], (n, 1, 1, 1))
    return f_di * w_di + f_sim * w_sim + f_com * w_com


def fuse(f_lr, f_ref, params):
    """Full fusion block: three fusion maps, then the weighted combination."""
    f_di = fuse_difference(f_lr, f_ref)
    f_sim = fuse_similarity(f_lr, f_ref)
    f_com = fuse_complementary(f_lr, f_ref, params)
    return fuse_weighted(f_di, f_sim, f_com, params)
