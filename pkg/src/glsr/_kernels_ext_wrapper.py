"""Thin wrapper giving the compiled kernels the same API as the fallback."""

import numpy as np

from . import _kernels


def scan_forward(abar, bu, cmat):
    abar = np.ascontiguousarray(abar)
    bu = np.ascontiguousarray(bu)
    cmat = np.ascontiguousarray(cmat)
    n, l, c, s = abar.shape
    h = np.empty_like(abar)
    y = np.empty((n, l, c), dtype=abar.dtype)
    _kernels.scan_forward_impl(abar, bu, cmat, h, y)
    return y, h


def scan_backward(abar, cmat, h, dy):
    abar = np.ascontiguousarray(abar)
    cmat = np.ascontiguousarray(cmat)
    h = np.ascontiguousarray(h)
    dy = np.ascontiguousarray(dy)
    n, l, c, s = abar.shape
    da = np.empty_like(abar)
    dbu = np.empty_like(abar)
    dc = np.empty((n, l, s), dtype=abar.dtype)
    g = np.zeros((c, s), dtype=abar.dtype)
    _kernels.scan_backward_impl(abar, cmat, h, dy, da, dbu, dc, g)
    return da, dbu, dc


def ssm_prep(xd, a, bd, dd, euler):
    xd = np.ascontiguousarray(xd)
    a = np.ascontiguousarray(a)
    bd = np.ascontiguousarray(bd)
    dd = np.ascontiguousarray(dd)
    n, l, c = xd.shape
    s = a.shape[1]
    abar = np.empty((n, l, c, s), dtype=xd.dtype)
    coef = np.empty_like(abar)
    bu = np.empty_like(abar)
    _kernels.ssm_prep_impl(xd, a, bd, dd, abar, coef, bu, euler)
    return abar, coef, bu


def ssm_grad(da_bar, dbu, xd, a, bd, dd, abar, coef, euler):
    n, l, c = xd.shape
    s = a.shape[1]
    dt = xd.dtype
    db = np.zeros((n, l, s), dtype=dt)
    dx = np.zeros((n, l, c), dtype=dt)
    ddelta = np.zeros((n, l, c), dtype=dt)
    dza = np.zeros((c, s), dtype=dt)
    _kernels.ssm_grad_impl(np.ascontiguousarray(da_bar),
                           np.ascontiguousarray(dbu), xd, a, bd, dd,
                           abar, coef, db, dx, ddelta, dza, euler)
    return db, dx, ddelta, dza


def bilinear_forward(xf, plan):
    n, c, _ = xf.shape
    q = plan[0].shape[1]
    out = np.empty((n, c, q), dtype=xf.dtype)
    _kernels.bilinear_forward_impl(xf, out, *plan[:8])
    return out


def bilinear_backward(grad, xf, plan, need_dx, need_coord):
    grad = np.ascontiguousarray(grad)
    n, c, q = grad.shape
    hw = xf.shape[2]
    dt = grad.dtype
    dxf = np.zeros((n, c, hw), dtype=dt) if need_dx else np.zeros((1, 1, 1), dtype=dt)
    dys = np.zeros((n, q), dtype=dt) if need_coord else np.zeros((1, 1), dtype=dt)
    dxs = np.zeros_like(dys)
    _kernels.bilinear_backward_impl(grad, xf, *plan, dxf, dys, dxs,
                                    need_dx, need_coord)
    return (dxf if need_dx else None,
            dys if need_coord else None,
            dxs if need_coord else None)
