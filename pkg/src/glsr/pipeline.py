"""Training, evaluation, and inference drivers shared by the CLI and tests."""

from __future__ import annotations

import os

import numpy as np

from . import data, losses
from .model import (
    Adam,
    GLMamba,
    ModelConfig,
    save_checkpoint,
    train_step,
    upsample_bicubic,
)

LOSS_CSV_HEADER = "step,loss,l1_sr,l1_ref,celoss"
METRIC_CSV_HEADER = "image_id,psnr_db,ssim"


def make_batches(n_pairs, batch, steps, seed):
    """Deterministic batch index sequence for a whole run."""
    rng = np.random.default_rng(seed)
    return [rng.choice(n_pairs, size=batch, replace=n_pairs < batch)
            for _ in range(steps)]


def run_train(cfg: ModelConfig, pairs, steps, outdir, log=None,
              model=None, optimizer=None):
    """Train for `steps` update steps; writes loss.csv and model.glck.

    Returns (model, optimizer, loss_rows).  Pass model/optimizer to resume.
    """
    os.makedirs(outdir, exist_ok=True)
    if not pairs:
        raise ValueError("empty dataset")
    if model is None:
        model = GLMamba(cfg)
    if optimizer is None:
        optimizer = Adam(model.parameters(), lr=cfg.lr)
    hr = np.stack([p.hr for p in pairs]).astype(cfg.dtype)
    ref = np.stack([p.ref for p in pairs]).astype(cfg.dtype)
    lr = np.stack([p.lr for p in pairs]).astype(cfg.dtype)
    rows = []
    # +1 decouples batch order from the weight-init stream
    for step, idx in enumerate(make_batches(len(pairs), cfg.batch, steps,
                                            cfg.seed + 1)):
        loss, l_sr, l_ref, l_ce = train_step(
            model, optimizer, lr[idx], ref[idx], hr[idx]
        )
        rows.append((step, loss, l_sr, l_ref, l_ce))
        if log is not None and (step % 50 == 0 or step == steps - 1):
            log(f"step {step}: loss={loss:.6f}")
    with open(os.path.join(outdir, "loss.csv"), "w") as fh:
        fh.write(LOSS_CSV_HEADER + "\n")
        for step, loss, l_sr, l_ref, l_ce in rows:
            fh.write(f"{step},{loss:.10f},{l_sr:.10f},{l_ref:.10f},{l_ce:.10f}\n")
    save_checkpoint(os.path.join(outdir, "model.glck"), model, optimizer)
    return model, optimizer, rows


def evaluate_pairs(model, pairs):
    """Per-image metrics, sorted by id.

    Returns (rows, error_maps) with rows = [(id, psnr_db, ssim)] and
    error_maps = {id: (H,W) absolute error array}.
    """
    rows = []
    error_maps = {}
    for p in sorted(pairs, key=lambda q: q.id):
        sr, _ = model.forward(p.lr[None], p.ref[None])
        sr_img = np.clip(sr.data[0, 0], 0.0, 1.0)
        rows.append((p.id,
                     losses.psnr(sr_img, p.hr[0]),
                     losses.ssim(sr_img, p.hr[0])))
        error_maps[p.id] = np.abs(sr_img - p.hr[0])
    return rows, error_maps


def bicubic_baseline(pairs, scale):
    """PSNR of plain bicubic upsampling for the same pairs, sorted by id."""
    rows = []
    for p in sorted(pairs, key=lambda q: q.id):
        up = np.clip(upsample_bicubic(p.lr[0], scale), 0.0, 1.0)
        rows.append((p.id, losses.psnr(up, p.hr[0])))
    return rows


def run_eval(model, pairs, outdir):
    """Writes metrics.csv and per-image error maps; returns the metric rows."""
    os.makedirs(outdir, exist_ok=True)
    rows, error_maps = evaluate_pairs(model, pairs)
    with open(os.path.join(outdir, "metrics.csv"), "w") as fh:
        fh.write(METRIC_CSV_HEADER + "\n")
        for pid, p, s in rows:
            fh.write(f"{pid},{p:.6f},{s:.6f}\n")
    for pid, err in error_maps.items():
        data.write_png(os.path.join(outdir, f"{pid}_err.png"), err)
    return rows


def run_infer(model, lr_path, ref_path, outdir):
    """Super-resolve one LR/Ref pair; writes sr.png and rec_ref.png."""
    os.makedirs(outdir, exist_ok=True)
    lr = data.read_png(lr_path)[None, None]
    ref = data.read_png(ref_path)[None, None]
    sr, rec_ref = model.forward(lr, ref)
    sr_path = os.path.join(outdir, "sr.png")
    rec_path = os.path.join(outdir, "rec_ref.png")
    data.write_png(sr_path, np.clip(sr.data[0, 0], 0, 1), bits=16)
    data.write_png(rec_path, np.clip(rec_ref.data[0, 0], 0, 1), bits=16)
    return sr_path, rec_path
