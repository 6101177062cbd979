# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: sequential scan recurrence and bilinear scatter-add."""

import numpy as np

cimport cython
from libc.math cimport exp, expf

ctypedef fused real:
    float
    double


def scan_forward_impl(real[:, :, :, ::1] abar, real[:, :, :, ::1] bu,
                      real[:, :, ::1] cmat, real[:, :, :, ::1] h,
                      real[:, :, ::1] y):
    cdef Py_ssize_t n = abar.shape[0], l = abar.shape[1]
    cdef Py_ssize_t c = abar.shape[2], s = abar.shape[3]
    cdef Py_ssize_t i, t, j, k
    cdef real acc, hv
    for i in range(n):
        for t in range(l):
            for j in range(c):
                acc = 0
                if t == 0:
                    for k in range(s):
                        hv = bu[i, t, j, k]
                        h[i, t, j, k] = hv
                        acc += cmat[i, t, k] * hv
                else:
                    for k in range(s):
                        hv = abar[i, t, j, k] * h[i, t - 1, j, k] + bu[i, t, j, k]
                        h[i, t, j, k] = hv
                        acc += cmat[i, t, k] * hv
                y[i, t, j] = acc


def scan_backward_impl(real[:, :, :, ::1] abar, real[:, :, ::1] cmat,
                       real[:, :, :, ::1] h, real[:, :, ::1] dy,
                       real[:, :, :, ::1] da, real[:, :, :, ::1] dbu,
                       real[:, :, ::1] dc, real[:, ::1] g):
    cdef Py_ssize_t n = abar.shape[0], l = abar.shape[1]
    cdef Py_ssize_t c = abar.shape[2], s = abar.shape[3]
    cdef Py_ssize_t i, t, j, k
    cdef real gv, dyv
    for i in range(n):
        for j in range(c):
            for k in range(s):
                g[j, k] = 0
        for t in range(l - 1, -1, -1):
            for k in range(s):
                dc[i, t, k] = 0
            for j in range(c):
                dyv = dy[i, t, j]
                for k in range(s):
                    dc[i, t, k] += dyv * h[i, t, j, k]
                    gv = cmat[i, t, k] * dyv + g[j, k]
                    dbu[i, t, j, k] = gv
                    if t > 0:
                        da[i, t, j, k] = gv * h[i, t - 1, j, k]
                    else:
                        da[i, t, j, k] = 0
                    g[j, k] = gv * abar[i, t, j, k]


def ssm_prep_impl(real[:, :, ::1] xd, real[:, ::1] a, real[:, :, ::1] bd,
                  real[:, :, ::1] dd, real[:, :, :, ::1] abar,
                  real[:, :, :, ::1] coef, real[:, :, :, ::1] bu,
                  bint euler):
    """Discretize and gate: abar = exp(delta*a), coef = delta*phi(delta*a)
    (or just delta for the Euler rule), bu = coef * B * x."""
    cdef Py_ssize_t n = xd.shape[0], l = xd.shape[1], c = xd.shape[2]
    cdef Py_ssize_t s = a.shape[1]
    cdef Py_ssize_t i, t, j, k
    cdef real z, ab, ph, dv, cf
    for i in range(n):
        for t in range(l):
            for j in range(c):
                dv = dd[i, t, j]
                for k in range(s):
                    z = dv * a[j, k]
                    if real is float:
                        ab = expf(z)
                    else:
                        ab = exp(z)
                    abar[i, t, j, k] = ab
                    if euler:
                        cf = dv
                    else:
                        if z < 1e-6 and z > -1e-6:
                            ph = 1.0 + z / 2.0 + z * z / 6.0
                        else:
                            ph = (ab - 1.0) / z
                        cf = dv * ph
                    coef[i, t, j, k] = cf
                    bu[i, t, j, k] = cf * bd[i, t, k] * xd[i, t, j]


def ssm_grad_impl(real[:, :, :, ::1] da_bar, real[:, :, :, ::1] dbu,
                  real[:, :, ::1] xd, real[:, ::1] a, real[:, :, ::1] bd,
                  real[:, :, ::1] dd, real[:, :, :, ::1] abar,
                  real[:, :, :, ::1] coef, real[:, :, ::1] db,
                  real[:, :, ::1] dx, real[:, :, ::1] ddelta,
                  real[:, ::1] dza, bint euler):
    """Gradients of the discretize-and-gate step.

    Fills db (N,L,S), dx (N,L,C), ddelta (N,L,C) and dza (C,S); dza holds
    sum over (n,t) of dz * delta, i.e. the gradient w.r.t. a before the
    chain through a = -exp(a_log)."""
    cdef Py_ssize_t n = xd.shape[0], l = xd.shape[1], c = xd.shape[2]
    cdef Py_ssize_t s = a.shape[1]
    cdef Py_ssize_t i, t, j, k
    cdef real z, ab, ph, dph, dv, xv, dcoef, dz, dd_acc, gbu, cf
    for i in range(n):
        for t in range(l):
            for j in range(c):
                dv = dd[i, t, j]
                xv = xd[i, t, j]
                dd_acc = 0
                for k in range(s):
                    gbu = dbu[i, t, j, k]
                    cf = coef[i, t, j, k]
                    ab = abar[i, t, j, k]
                    dcoef = gbu * bd[i, t, k] * xv
                    db[i, t, k] += gbu * cf * xv
                    dx[i, t, j] += gbu * cf * bd[i, t, k]
                    dz = da_bar[i, t, j, k] * ab
                    if euler:
                        dd_acc += dcoef
                    else:
                        z = dv * a[j, k]
                        if z < 1e-6 and z > -1e-6:
                            ph = 1.0 + z / 2.0 + z * z / 6.0
                            dph = 0.5 + z / 3.0 + z * z / 8.0
                        else:
                            ph = (ab - 1.0) / z
                            dph = (ab * (z - 1.0) + 1.0) / (z * z)
                        dd_acc += dcoef * ph
                        dz = dz + dcoef * dv * dph
                    dd_acc += dz * a[j, k]
                    dza[j, k] += dz * dv
                ddelta[i, t, j] += dd_acc


def bilinear_forward_impl(real[:, :, ::1] xf, real[:, :, ::1] out,
                          long[:, ::1] i00, long[:, ::1] i01,
                          long[:, ::1] i10, long[:, ::1] i11,
                          real[:, ::1] w00, real[:, ::1] w01,
                          real[:, ::1] w10, real[:, ::1] w11):
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], q = out.shape[2]
    cdef Py_ssize_t i, j, p
    for i in range(n):
        for j in range(c):
            for p in range(q):
                out[i, j, p] = (xf[i, j, i00[i, p]] * w00[i, p]
                                + xf[i, j, i01[i, p]] * w01[i, p]
                                + xf[i, j, i10[i, p]] * w10[i, p]
                                + xf[i, j, i11[i, p]] * w11[i, p])


def bilinear_backward_impl(real[:, :, ::1] grad, real[:, :, ::1] xf,
                           long[:, ::1] i00, long[:, ::1] i01,
                           long[:, ::1] i10, long[:, ::1] i11,
                           real[:, ::1] w00, real[:, ::1] w01,
                           real[:, ::1] w10, real[:, ::1] w11,
                           unsigned char[:, ::1] m00, unsigned char[:, ::1] m01,
                           unsigned char[:, ::1] m10, unsigned char[:, ::1] m11,
                           real[:, ::1] fy, real[:, ::1] fx,
                           real[:, :, ::1] dx, real[:, ::1] dys,
                           real[:, ::1] dxs, bint need_dx, bint need_coord):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], q = grad.shape[2]
    cdef Py_ssize_t i, j, p
    cdef real gv, v00, v01, v10, v11
    for i in range(n):
        for j in range(c):
            for p in range(q):
                gv = grad[i, j, p]
                if gv == 0:
                    continue
                if need_dx:
                    dx[i, j, i00[i, p]] += gv * w00[i, p]
                    dx[i, j, i01[i, p]] += gv * w01[i, p]
                    dx[i, j, i10[i, p]] += gv * w10[i, p]
                    dx[i, j, i11[i, p]] += gv * w11[i, p]
                if need_coord:
                    v00 = xf[i, j, i00[i, p]] if m00[i, p] else 0
                    v01 = xf[i, j, i01[i, p]] if m01[i, p] else 0
                    v10 = xf[i, j, i10[i, p]] if m10[i, p] else 0
                    v11 = xf[i, j, i11[i, p]] if m11[i, p] else 0
                    dys[i, p] += gv * ((v10 - v00) * (1 - fx[i, p])
                                       + (v11 - v01) * fx[i, p])
                    dxs[i, p] += gv * ((v01 - v00) * (1 - fy[i, p])
                                       + (v11 - v10) * fy[i, p])
