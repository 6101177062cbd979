"""Invariant and gradient verification suite behind the `check` command.

Every property is a small named function; the runner prints one PASS/FAIL
line per property and reports the failure count.  All gradient checks run
in 64-bit with central finite differences.
"""

from __future__ import annotations

import io
import os
import tempfile

import numpy as np

from . import backend, blocks, data, fusion, gt1, losses, scan
from . import tensor as T
from .model import (
    Adam,
    GLMamba,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from .tensor import Tensor

FD_EPS = 1e-5
OP_TOL = 1e-4
MODEL_TOL = 1e-3


def fd_check(fn, tensors, rng, eps=FD_EPS, samples=10):
    """Worst relative error between analytic and central-difference grads.

    fn builds the output tensor from scratch on each call; a fixed random
    weighting reduces it to a scalar.
    """
    w = rng.standard_normal(fn().shape)

    def lossval():
        return float((fn().data * w).sum())

    for t in tensors:
        t.grad = None
    T.tsum(fn() * Tensor(w)).backward()
    worst = 0.0
    for t in tensors:
        g = t.grad.reshape(-1)
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            lp = lossval()
            flat[i] = old - eps
            lm = lossval()
            flat[i] = old
            fd = (lp - lm) / (2 * eps)
            # the floor keeps FD round-off (~ulp(loss)/eps) from dominating
            # entries whose true gradient is near zero
            rel = abs(fd - g[i]) / max(1e-6, abs(fd) + abs(g[i]))
            worst = max(worst, rel)
    return worst


def _randomize(params, rng, scale=0.3):
    """Give every parameter an O(scale) value so gradients are well above
    finite-difference round-off."""
    for t in params:
        t.data[:] = rng.standard_normal(t.shape) * scale


def _assert_le(value, bound, label):
    if not value <= bound:
        raise AssertionError(f"{label}: {value:.3e} > {bound:.1e}")


# ----- discretization and scan oracles ------------------------------------


def check_discretize_closed_form():
    abar, bbar = scan.discretize(np.array(-1.0), np.array(1.0), np.log(2.0))
    _assert_le(abs(abar - 0.5), 1e-12, "abar")
    _assert_le(abs(bbar - 0.5), 1e-12, "bbar")


def check_discretize_series_limits():
    # delta -> 0: abar -> 1, bbar -> delta*b (phi -> 1)
    d = 1e-9
    abar, bbar = scan.discretize(np.array(-2.0), np.array(3.0), d)
    _assert_le(abs(abar - 1.0), 1e-8, "abar limit")
    _assert_le(abs(bbar - d * 3.0) / (d * 3.0), 1e-8, "bbar limit")


def check_recurrent_vs_conv():
    rng = np.random.default_rng(11)
    for _ in range(20):
        c, s, length = 3, 4, 32
        a = -np.exp(rng.standard_normal((c, s)))
        b = rng.standard_normal(s)
        cm = rng.standard_normal(s)
        abar, bbar = scan.discretize(a, b, float(rng.uniform(0.05, 0.5)))
        x = rng.standard_normal((length, c))
        yr = scan.selective_scan_recurrent(x, abar, bbar, cm)
        yc = scan.selective_scan_conv(x, abar, bbar, cm)
        _assert_le(np.abs(yr - yc).max(), 1e-5, "recurrent vs conv")


def check_scan_expand_merge():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((5, 7, 3))
    seqs = scan.scan_expand(x)
    merged = scan.scan_merge(seqs)
    _assert_le(np.abs(merged - 4.0 * x).max(), 1e-12, "merge of 4 copies")


def check_quadrant_locality():
    rng = np.random.default_rng(13)
    params = scan.SsmParams(3, 4, rng, dtype=np.float64)
    x = rng.standard_normal((1, 3, 6, 6))
    base = scan.ss2d_local(Tensor(x.copy()), params).data
    x2 = x.copy()
    x2[:, :, 4:, 4:] += rng.standard_normal((1, 3, 2, 2))  # bottom-right only
    pert = scan.ss2d_local(Tensor(x2), params).data
    diff = np.abs(pert - base)
    _assert_le(diff[:, :, :3, :].max(), 0.0, "top rows sensitivity")
    _assert_le(diff[:, :, 3:, :3].max(), 0.0, "bottom-left sensitivity")


def check_backend_agreement():
    py = backend.get("python")
    try:
        cx = backend.get("compiled")
    except ImportError:
        return  # pure-python build; nothing to compare
    rng = np.random.default_rng(14)
    abar = rng.uniform(0.1, 0.9, (2, 9, 3, 4))
    bu = rng.standard_normal((2, 9, 3, 4))
    cm = rng.standard_normal((2, 9, 4))
    y1, h1 = py.scan_forward(abar, bu, cm)
    y2, h2 = cx.scan_forward(abar, bu, cm)
    _assert_le(np.abs(y1 - y2).max(), 1e-12, "scan forward")
    dy = rng.standard_normal(y1.shape)
    for g1, g2 in zip(py.scan_backward(abar, cm, h1, dy),
                      cx.scan_backward(abar, cm, h2, dy)):
        _assert_le(np.abs(g1 - g2).max(), 1e-12, "scan backward")


# ----- degenerate equivalences --------------------------------------------


def check_deform_degenerate():
    rng = np.random.default_rng(15)
    db = blocks.DeformBlock(3, rng, dtype=np.float64)
    db.mask_conv.b.data[:] = 100.0  # sigmoid saturates to exactly 1.0
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    yd = blocks.deform_conv(x, db)
    yc = T.conv2d(x, db.w, db.b, 1, "same")
    if not np.array_equal(yd.data, yc.data):
        raise AssertionError(
            f"deform_conv != conv2d, max diff {np.abs(yd.data - yc.data).max():.3e}"
        )


def check_fusion_zero_init():
    rng = np.random.default_rng(16)
    params = fusion.FusionParams(4, dtype=np.float64)
    a = Tensor(rng.standard_normal((2, 4, 5, 5)))
    b = Tensor(rng.standard_normal((2, 4, 5, 5)))
    com = fusion.fuse_complementary(a, b, params)
    _assert_le(np.abs(com.data - 0.5 * (a.data + b.data)).max(), 1e-12,
               "complementary zero-init")
    di = fusion.fuse_difference(a, b)
    sim = fusion.fuse_similarity(a, b)
    out = fusion.fuse_weighted(di, sim, com, params)
    expect = (di.data + sim.data + com.data) / 3.0
    _assert_le(np.abs(out.data - expect).max(), 1e-12, "weighted zero-init")


def check_celoss_values():
    rng = np.random.default_rng(17)
    x = Tensor(rng.standard_normal((2, 1, 8, 8)))
    _assert_le(abs(losses.celoss(x, x).item()), 0.0, "celoss(x,x)")
    sr = Tensor(np.ones((1, 1, 8, 8)))
    hr = Tensor(np.zeros((1, 1, 8, 8)))
    _assert_le(abs(losses.celoss(sr, hr).item() - 4.0 / 3.0), 1e-9,
               "constant case")


def check_metric_values():
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.1)
    _assert_le(abs(losses.psnr(a, b) - 20.0), 1e-9, "psnr mse=0.01")
    x = np.random.default_rng(18).uniform(0, 1, (16, 16))
    _assert_le(abs(losses.ssim(x, x) - 1.0), 1e-12, "ssim(x,x)")
    _assert_le(losses.psnr(a, a), losses.PSNR_CAP_DB, "psnr cap")


def check_degrade_kspace():
    rng = np.random.default_rng(19)
    const = np.full((16, 16), 0.375)
    _assert_le(np.abs(data.degrade_kspace(const, 2) - 0.375).max(), 1e-9,
               "DC preservation")
    img = rng.uniform(0, 1, (16, 16))
    _assert_le(np.abs(data.degrade_kspace(img, 1) - img).max(), 1e-6,
               "scale=1 identity")


def check_gt1_roundtrip():
    rng = np.random.default_rng(20)
    arr = rng.standard_normal((3, 4, 5)).astype(np.float32)
    buf = io.BytesIO()
    gt1.write_gt1(buf, arr)
    buf.seek(0)
    back = gt1.read_gt1(buf)
    if not np.array_equal(arr, back):
        raise AssertionError("GT1 round trip not bit-identical")


# ----- gradient audit ------------------------------------------------------


def check_grad_conv_ops():
    rng = np.random.default_rng(21)
    x = Tensor(rng.standard_normal((2, 3, 6, 6)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    _assert_le(fd_check(lambda: T.conv2d(x, w, b, 1, "same"), [x, w, b], rng),
               OP_TOL, "conv2d")
    dw = Tensor(rng.standard_normal((3, 1, 3, 3)), requires_grad=True)
    _assert_le(fd_check(lambda: T.dwconv2d(x, dw), [x, dw], rng),
               OP_TOL, "dwconv2d")


def check_grad_deform():
    rng = np.random.default_rng(22)
    db = blocks.DeformBlock(3, rng, dtype=np.float64)
    db.offset_conv.w.data[:] = rng.standard_normal(db.offset_conv.w.shape) * 0.05
    db.mask_conv.b.data[:] = 0.1
    x = Tensor(rng.standard_normal((1, 3, 7, 7)), requires_grad=True)
    ps = [x, db.w, db.b, db.offset_conv.w, db.offset_conv.b,
          db.mask_conv.w, db.mask_conv.b]
    _assert_le(fd_check(lambda: blocks.deform_conv(x, db), ps, rng),
               OP_TOL, "deform_conv")


def check_grad_scans():
    rng = np.random.default_rng(23)
    p = scan.SsmParams(3, 4, rng, dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 3, 6, 6)), requires_grad=True)
    ps = [x, p.a_log, p.x_proj_w, p.delta_bias]
    _assert_le(fd_check(lambda: scan.ss2d_global(x, p), ps, rng),
               OP_TOL, "ss2d_global")
    _assert_le(fd_check(lambda: scan.ss2d_local(x, p), ps, rng),
               OP_TOL, "ss2d_local")


def check_grad_mamba_block():
    rng = np.random.default_rng(24)
    mb = blocks.MambaBlock(4, 3, rng, mode="global", dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 4, 5, 5)), requires_grad=True)
    ps = [x] + list(mb.parameters().values())
    _randomize(mb.parameters().values(), rng)
    _assert_le(fd_check(lambda: mb(x), ps, rng, samples=4),
               OP_TOL, "mamba_block")


def check_grad_fusion():
    rng = np.random.default_rng(25)
    params = fusion.FusionParams(4, dtype=np.float64)
    for t in (params.comp_w, params.comp_b, params.mix_w, params.mix_b):
        t.data[:] = rng.standard_normal(t.shape) * 0.3
    a = Tensor(rng.standard_normal((2, 4, 5, 5)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 4, 5, 5)), requires_grad=True)
    _assert_le(fd_check(lambda: fusion.fuse_difference(a, b), [a, b], rng),
               OP_TOL, "fuse_difference")
    _assert_le(fd_check(lambda: fusion.fuse_similarity(a, b), [a, b], rng),
               OP_TOL, "fuse_similarity")
    _assert_le(fd_check(lambda: fusion.fuse_complementary(a, b, params),
                        [a, b, params.comp_w, params.comp_b], rng),
               OP_TOL, "fuse_complementary")
    _assert_le(fd_check(lambda: fusion.fuse(a, b, params),
                        [a, b, params.comp_w, params.comp_b,
                         params.mix_w, params.mix_b], rng),
               OP_TOL, "fuse (weighted)")


def check_grad_losses():
    rng = np.random.default_rng(26)
    sr = Tensor(rng.uniform(0, 1, (1, 1, 8, 8)), requires_grad=True)
    hr = Tensor(rng.uniform(0, 1, (1, 1, 8, 8)))
    _assert_le(fd_check(lambda: losses.l1_loss(sr, hr), [sr], rng),
               OP_TOL, "l1_loss")
    _assert_le(fd_check(lambda: losses.celoss(sr, hr), [sr], rng),
               OP_TOL, "celoss")


def check_grad_full_model():
    rng = np.random.default_rng(27)
    cfg = ModelConfig(channels=4, num_blocks=1, n_state=2, scale=2,
                      precision="f64", seed=5)
    model = GLMamba(cfg)
    _randomize(model.parameters().values(), rng, scale=0.1)
    lr = rng.uniform(0, 1, (1, 1, 4, 4))
    ref = rng.uniform(0, 1, (1, 1, 8, 8))
    hr = rng.uniform(0, 1, (1, 1, 8, 8))

    def loss_fn():
        sr, rec = model.forward(lr, ref)
        total, _ = losses.total_loss(sr, Tensor(hr), rec, Tensor(ref),
                                     cfg.loss_weights)
        return total

    params = model.parameters()
    model.zero_grad()
    loss_fn().backward()
    rng2 = np.random.default_rng(28)
    names = list(params)
    picked = list(rng2.choice(names, size=min(32, len(names)), replace=False))
    worst = 0.0
    for name in picked:
        p = params[name]
        flat = p.data.reshape(-1)
        i = int(rng2.integers(flat.size))
        g = p.grad.reshape(-1)[i]
        old = flat[i]
        flat[i] = old + FD_EPS
        lp = loss_fn().item()
        flat[i] = old - FD_EPS
        lm = loss_fn().item()
        flat[i] = old
        fd = (lp - lm) / (2 * FD_EPS)
        worst = max(worst, abs(fd - g) / max(1e-8, abs(fd) + abs(g)))
    _assert_le(worst, MODEL_TOL, "full model")


# ----- training-step and persistence sanity --------------------------------


def check_checkpoint_roundtrip():
    rng = np.random.default_rng(29)
    cfg = ModelConfig(channels=4, num_blocks=1, n_state=2, seed=7)
    model = GLMamba(cfg)
    opt = Adam(model.parameters(), lr=cfg.lr)
    lr = rng.uniform(0, 1, (1, 1, 4, 4)).astype(np.float32)
    ref = rng.uniform(0, 1, (1, 1, 8, 8)).astype(np.float32)
    hr = rng.uniform(0, 1, (1, 1, 8, 8)).astype(np.float32)
    train_step(model, opt, lr, ref, hr)
    before, _ = model.forward(lr, ref)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ck.glck")
        save_checkpoint(path, model, opt)
        model2, _ = load_checkpoint(path)
    after, _ = model2.forward(lr, ref)
    if not np.array_equal(before.data, after.data):
        raise AssertionError("forward output changed after save/load")


def check_train_determinism():
    def run():
        rng = np.random.default_rng(31)
        cfg = ModelConfig(channels=4, num_blocks=1, n_state=2, seed=9)
        model = GLMamba(cfg)
        opt = Adam(model.parameters(), lr=cfg.lr)
        lr = rng.uniform(0, 1, (1, 1, 4, 4)).astype(np.float32)
        ref = rng.uniform(0, 1, (1, 1, 8, 8)).astype(np.float32)
        hr = rng.uniform(0, 1, (1, 1, 8, 8)).astype(np.float32)
        return [train_step(model, opt, lr, ref, hr)[0] for _ in range(3)]

    if run() != run():
        raise AssertionError("same seed produced different loss sequences")


CHECKS = [
    ("discretize_closed_form", check_discretize_closed_form),
    ("discretize_series_limits", check_discretize_series_limits),
    ("recurrent_vs_conv", check_recurrent_vs_conv),
    ("scan_expand_merge", check_scan_expand_merge),
    ("quadrant_locality", check_quadrant_locality),
    ("backend_agreement", check_backend_agreement),
    ("deform_degenerate_conv", check_deform_degenerate),
    ("fusion_zero_init", check_fusion_zero_init),
    ("celoss_values", check_celoss_values),
    ("metric_values", check_metric_values),
    ("degrade_kspace", check_degrade_kspace),
    ("gt1_roundtrip", check_gt1_roundtrip),
    ("grad_conv_ops", check_grad_conv_ops),
    ("grad_deform", check_grad_deform),
    ("grad_scans", check_grad_scans),
    ("grad_mamba_block", check_grad_mamba_block),
    ("grad_fusion", check_grad_fusion),
    ("grad_losses", check_grad_losses),
    ("grad_full_model", check_grad_full_model),
    ("checkpoint_roundtrip", check_checkpoint_roundtrip),
    ("train_determinism", check_train_determinism),
]


def run_checks(out=print):
    """Run every property; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as exc:  # report and keep going
            failures += 1
            out(f"FAIL {name}: {exc}")
        else:
            out(f"PASS {name}")
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} properties passed")
    return failures
