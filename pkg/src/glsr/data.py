"""Synthetic paired-modality data, frequency-domain degradation, image I/O,
and plain-text config handling."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image


# ----- frequency-domain degradation ---------------------------------------


def degrade_kspace(hr, scale):
    """Keep the centred low-frequency block of the spectrum and invert.

    hr: (H,W) in [0,1]; returns (H/scale, W/scale), clamped to [0,1].
    """
    hr = np.asarray(hr, dtype=np.float64)
    h, w = hr.shape
    if h % scale or w % scale:
        raise ValueError(f"image size {h}x{w} not divisible by scale {scale}")
    hs, ws = h // scale, w // scale
    spec = np.fft.fftshift(np.fft.fft2(hr))
    # centre crop; the DC bin sits at H//2, the lower-frequency half keeps
    # the Nyquist row/column for even crop sizes
    r0 = h // 2 - hs // 2
    c0 = w // 2 - ws // 2
    cropped = spec[r0 : r0 + hs, c0 : c0 + ws]
    lr = np.fft.ifft2(np.fft.ifftshift(cropped)).real / (scale * scale)
    return np.clip(lr, 0.0, 1.0)


# ----- synthetic scenes ---------------------------------------------------


@dataclass
class SyntheticSceneSpec:
    seed: int = 0
    count: int = 16
    size: int = 64
    scale: int = 2
    n_ellipses: int = 4
    n_waves: int = 2

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in vars(self).items())


@dataclass
class ImagePair:
    hr: np.ndarray  # (1,H,W)
    ref: np.ndarray  # (1,H,W)
    lr: np.ndarray  # (1,H/scale,W/scale)
    id: str


def _gaussian_blur(img, sigma):
    size = int(3 * sigma) * 2 + 1
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    out = np.apply_along_axis(lambda r: np.convolve(np.pad(r, size // 2, mode="edge"), g, "valid"), 0, img)
    out = np.apply_along_axis(lambda r: np.convolve(np.pad(r, size // 2, mode="edge"), g, "valid"), 1, out)
    return out


def _render_anatomy(rng, size, spec):
    """A smooth shared structure field both modalities derive from."""
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    img = 0.25 * (rng.uniform(-1, 1) * yy + rng.uniform(-1, 1) * xx)
    for _ in range(spec.n_ellipses):
        cy, cx = rng.uniform(-0.6, 0.6, 2)
        ry, rx = rng.uniform(0.15, 0.55, 2)
        theta = rng.uniform(0, np.pi)
        yr = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
        xr = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
        d = (yr / ry) ** 2 + (xr / rx) ** 2
        img += rng.uniform(0.3, 1.0) * np.exp(-(d**2)) * np.sign(rng.uniform(-1, 1))
    for _ in range(spec.n_waves):
        fy, fx = rng.uniform(1.0, 4.0, 2)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.05, 0.15) * np.sin(np.pi * (fy * yy + fx * xx) + phase)
    img = _gaussian_blur(img, sigma=1.0)
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo + 1e-12)


def gen_synthetic(spec: SyntheticSceneSpec):
    """Deterministic list of HR/Ref/LR pairs for one seed."""
    rng = np.random.default_rng(spec.seed)
    pairs = []
    for i in range(spec.count):
        anatomy = _render_anatomy(rng, spec.size, spec)
        gamma_hr = rng.uniform(0.7, 1.3)
        gamma_ref = rng.uniform(0.6, 1.6)
        inv_w = rng.uniform(0.6, 1.0)
        hr = np.clip(anatomy**gamma_hr, 0, 1)
        remap = np.clip(anatomy**gamma_ref, 0, 1)
        ref = inv_w * (1.0 - remap) + (1.0 - inv_w) * remap
        lr = degrade_kspace(hr, spec.scale)
        pairs.append(ImagePair(
            hr=hr[None].astype(np.float32),
            ref=ref[None].astype(np.float32),
            lr=lr[None].astype(np.float32),
            id=f"{i:04d}",
        ))
    return pairs


# ----- image I/O ----------------------------------------------------------


def write_png(path, img, bits=8):
    """img: (H,W) or (1,H,W) in [0,1]; written as grayscale PNG."""
    img = np.asarray(img)
    if img.ndim == 3:
        img = img[0]
    img = np.clip(img, 0.0, 1.0)
    if bits == 8:
        Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L").save(path)
    elif bits == 16:
        arr = np.round(img * 65535).astype(np.uint16)
        Image.fromarray(arr).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def read_png(path):
    """Grayscale PNG to a (H,W) float array in [0,1]."""
    img = Image.open(path)
    if img.mode == "L":
        return np.asarray(img, dtype=np.float32) / 255.0
    if img.mode in ("I;16", "I"):
        return np.asarray(img, dtype=np.float32) / 65535.0
    raise ValueError(f"expected grayscale PNG, got mode {img.mode!r} for {path}")


# ----- dataset directory layout -------------------------------------------


def save_dataset(outdir, pairs, spec):
    os.makedirs(os.path.join(outdir, "pairs"), exist_ok=True)
    for p in pairs:
        write_png(os.path.join(outdir, "pairs", f"{p.id}_hr.png"), p.hr, bits=16)
        write_png(os.path.join(outdir, "pairs", f"{p.id}_ref.png"), p.ref, bits=16)
        write_png(os.path.join(outdir, "pairs", f"{p.id}_lr.png"), p.lr, bits=16)
    with open(os.path.join(outdir, "manifest.txt"), "w") as fh:
        fh.write("".join(p.id + "\n" for p in pairs))
    with open(os.path.join(outdir, "spec.txt"), "w") as fh:
        fh.write(spec.to_text())


def load_dataset(datadir):
    with open(os.path.join(datadir, "manifest.txt")) as fh:
        ids = [line.strip() for line in fh if line.strip()]
    pairs = []
    for pid in ids:
        base = os.path.join(datadir, "pairs", pid)
        hr = read_png(base + "_hr.png")[None]
        ref = read_png(base + "_ref.png")[None]
        lr = read_png(base + "_lr.png")[None]
        pairs.append(ImagePair(hr=hr, ref=ref, lr=lr, id=pid))
    return pairs


# ----- config files -------------------------------------------------------


def parse_config_text(text):
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"bad config line: {line!r}")
        out[key.strip()] = val.strip()
    return out


def load_config(path=None, overrides=None):
    """Merge config file, GLSR_SEED env var, and CLI overrides (in that order)."""
    cfg = {}
    if path:
        with open(path) as fh:
            cfg.update(parse_config_text(fh.read()))
    env_seed = os.environ.get("GLSR_SEED")
    if env_seed is not None:
        cfg["seed"] = env_seed
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg
