"""L1 reconstruction losses, the contrastive edge loss with its three fixed
kernels, the weighted total objective, and PSNR/SSIM metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

E1 = np.array([[0, -1, 0], [-1, 4, -1], [0, -1, 0]], dtype=np.float64)
# E2 carries an asymmetric +1 in the bottom-right corner (kernel sum 2);
# implemented verbatim, with a symmetric variant behind a flag.
E2 = np.array([[-1, 0, -1], [0, 4, 0], [-1, 0, 1]], dtype=np.float64)
E2_SYMMETRIC = np.array([[-1, 0, -1], [0, 4, 0], [-1, 0, -1]], dtype=np.float64)
E3 = np.array([[1, 1, 1], [1, -8, 1], [1, 1, 1]], dtype=np.float64)


def edge_kernels(e2_symmetric=False, dtype=np.float32):
    """The three fixed 3x3 edge kernels as a non-trainable conv weight."""
    e2 = E2_SYMMETRIC if e2_symmetric else E2
    return Tensor(np.stack([E1, e2, E3])[:, None].astype(dtype))


@dataclass
class LossWeights:
    alpha: float = 0.7
    beta: float = 0.3
    gamma: float = 0.1


def l1_loss(a, b):
    if a.shape != b.shape:
        raise ValueError(f"l1_loss shape mismatch: {a.shape} vs {b.shape}")
    return T.tmean(T.absolute(a - b))


def celoss(sr, hr, e2_symmetric=False):
    """Mean squared difference of the three edge-filter responses, valid
    (interior-only) convolution, averaged over interior pixels and kernels."""
    if sr.shape != hr.shape:
        raise ValueError(f"celoss shape mismatch: {sr.shape} vs {hr.shape}")
    if sr.shape[1] != 1:
        raise ValueError("celoss expects single-channel images")
    if sr.shape[2] < 3 or sr.shape[3] < 3:
        raise ValueError("celoss needs images of at least 3x3")
    kern = edge_kernels(e2_symmetric, dtype=sr.dtype)
    resp = T.conv2d(sr - hr, kern, stride=1, padding="valid")
    return T.tmean(T.square(resp))


def total_loss(sr, hr, rec_ref, ref, w: LossWeights, e2_symmetric=False):
    l_sr = l1_loss(sr, hr)
    l_ref = l1_loss(rec_ref, ref)
    l_ce = celoss(sr, hr, e2_symmetric)
    total = w.alpha * l_sr + w.beta * l_ref + w.gamma * l_ce
    return total, (l_sr, l_ref, l_ce)


# ----- metrics (plain numpy) ---------------------------------------------


PSNR_CAP_DB = 100.0


def psnr(a, b, data_range=1.0):
    """10*log10(range^2 / MSE); zero error reports the 100 dB cap."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(data_range**2 / mse), PSNR_CAP_DB)


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img, window):
    from numpy.lib.stride_tricks import sliding_window_view

    sw = sliding_window_view(img, window.shape)
    return np.einsum("ijuv,uv->ij", sw, window)


def ssim(a, b, data_range=1.0, window_size=11, sigma=1.5):
    """Mean local SSIM with a Gaussian window (11x11, sigma 1.5)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a.reshape(a.shape[-2:])
    b = b.reshape(b.shape[-2:])
    if a.shape != b.shape:
        raise ValueError("ssim shape mismatch")
    if min(a.shape) < window_size:
        raise ValueError("image smaller than the SSIM window")
    w = _gaussian_window(window_size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a**2
    var_b = _filter_valid(b * b, w) - mu_b**2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
