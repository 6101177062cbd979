"""Pure-numpy fallback kernels.

Same contracts as the compiled extension: the scan loops over the sequence in
Python but keeps the per-step work vectorised over (batch, channel, state).
"""

import numpy as np


def scan_forward(abar, bu, cmat):
    """h_t = abar_t * h_{t-1} + bu_t; y_t[c] = sum_s cmat_t[s] * h_t[c,s].

    abar, bu: (N,L,C,S); cmat: (N,L,S).  Returns (y (N,L,C), h (N,L,C,S)).
    """
    n, l, c, s = abar.shape
    h = np.empty_like(abar)
    y = np.empty((n, l, c), dtype=abar.dtype)
    state = np.zeros((n, c, s), dtype=abar.dtype)
    for t in range(l):
        state = abar[:, t] * state + bu[:, t]
        h[:, t] = state
        y[:, t] = np.einsum("ncs,ns->nc", state, cmat[:, t])
    return y, h


def scan_backward(abar, cmat, h, dy):
    """Reverse-mode gradients of scan_forward."""
    n, l, c, s = abar.shape
    da = np.empty_like(abar)
    dbu = np.empty_like(abar)
    dc = np.empty((n, l, s), dtype=abar.dtype)
    g = np.zeros((n, c, s), dtype=abar.dtype)
    for t in range(l - 1, -1, -1):
        dc[:, t] = np.einsum("ncs,nc->ns", h[:, t], dy[:, t])
        g = cmat[:, t, None, :] * dy[:, t, :, None] + g
        dbu[:, t] = g
        if t > 0:
            da[:, t] = g * h[:, t - 1]
        else:
            da[:, t] = 0.0
        g = g * abar[:, t]
    return da, dbu, dc


def ssm_prep(xd, a, bd, dd, euler):
    """Discretize and gate: abar = exp(delta*a), coef = delta*phi(delta*a)
    (delta itself for the Euler rule), bu = coef * B * x.

    xd, dd: (N,L,C); a: (C,S); bd: (N,L,S).  Returns (abar, coef, bu),
    each (N,L,C,S).
    """
    z = dd[..., None] * a
    abar = np.exp(z)
    if euler:
        coef = np.broadcast_to(dd[..., None], z.shape).astype(z.dtype)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = (abar - 1.0) / z
        small = np.abs(z) < 1e-6
        if np.any(small):
            zs = z[small]
            phi[small] = 1.0 + zs / 2.0 + zs * zs / 6.0
        coef = dd[..., None] * phi
    bu = coef * bd[:, :, None, :] * xd[..., None]
    return abar, coef, bu


def ssm_grad(da_bar, dbu, xd, a, bd, dd, abar, coef, euler):
    """Gradients of ssm_prep.  Returns (db (N,L,S), dx (N,L,C),
    ddelta (N,L,C), dza (C,S)); dza = sum over (n,t) of dz * delta."""
    dcoef = dbu * bd[:, :, None, :] * xd[..., None]
    db = (dbu * coef * xd[..., None]).sum(axis=2)
    dx = (dbu * coef * bd[:, :, None, :]).sum(axis=3)
    dz = da_bar * abar
    if euler:
        ddelta = dcoef.sum(axis=3)
    else:
        z = dd[..., None] * a
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = (abar - 1.0) / z
            dphi = (abar * (z - 1.0) + 1.0) / (z * z)
        small = np.abs(z) < 1e-6
        if np.any(small):
            zs = z[small]
            phi[small] = 1.0 + zs / 2.0 + zs * zs / 6.0
            dphi[small] = 0.5 + zs / 3.0 + zs * zs / 8.0
        ddelta = (dcoef * phi).sum(axis=3)
        dz = dz + dcoef * dd[..., None] * dphi
    ddelta = ddelta + (dz * a).sum(axis=3)
    dza = (dz * dd[..., None]).sum(axis=(0, 1))
    return db, dx, ddelta, dza


def bilinear_forward(xf, plan):
    """Gather-and-blend the four corner pixels for each sample.

    xf: (N,C,HW); plan holds (N,Q) corner indices, weights, validity masks
    and fractional offsets.  Returns (N,C,Q).
    """
    i00, i01, i10, i11, w00, w01, w10, w11 = plan[:8]
    return (
        np.take_along_axis(xf, i00[:, None], axis=2) * w00[:, None]
        + np.take_along_axis(xf, i01[:, None], axis=2) * w01[:, None]
        + np.take_along_axis(xf, i10[:, None], axis=2) * w10[:, None]
        + np.take_along_axis(xf, i11[:, None], axis=2) * w11[:, None]
    )


def bilinear_backward(grad, xf, plan, need_dx, need_coord):
    """Gradients of bilinear_forward w.r.t. the image and the sample coords.

    grad: (N,C,Q).  Returns (dxf or None, dys or None, dxs or None) with
    dxf (N,C,HW) and dys/dxs (N,Q).
    """
    i00, i01, i10, i11, w00, w01, w10, w11, m00, m01, m10, m11, fy, fx = plan
    n, c, q = grad.shape
    hw = xf.shape[2]
    dxf = dys = dxs = None
    if need_dx:
        dxf = np.zeros((n * c * hw,), dtype=grad.dtype)
        base = (np.arange(n * c) * hw)[:, None]
        for idx, wgt in ((i00, w00), (i01, w01), (i10, w10), (i11, w11)):
            flat_idx = (np.repeat(idx, c, axis=0).reshape(n * c, q) + base).ravel()
            vals = (grad * wgt[:, None]).ravel()
            dxf += np.bincount(flat_idx, weights=vals, minlength=n * c * hw
                               ).astype(grad.dtype)
        dxf = dxf.reshape(n, c, hw)
    if need_coord:
        v00 = np.take_along_axis(xf, i00[:, None], axis=2) * m00[:, None]
        v01 = np.take_along_axis(xf, i01[:, None], axis=2) * m01[:, None]
        v10 = np.take_along_axis(xf, i10[:, None], axis=2) * m10[:, None]
        v11 = np.take_along_axis(xf, i11[:, None], axis=2) * m11[:, None]
        dy = ((v10 - v00) * (1 - fx)[:, None] + (v11 - v01) * fx[:, None]) * grad
        dx = ((v01 - v00) * (1 - fy)[:, None] + (v11 - v10) * fy[:, None]) * grad
        dys = dy.sum(axis=1)
        dxs = dx.sum(axis=1)
    return dxf, dys, dxs
