"""Synthetic data, k-space degradation, image/tensor I/O, config handling."""

import io
import os

import numpy as np
import pytest
from PIL import Image

from glsr import data, gt1


# ----- k-space degradation --------------------------------------------------


def test_degrade_constant_image_preserved():
    # only the DC bin is non-zero, and it survives the centre crop
    hr = np.full((16, 16), 0.6)
    lr = data.degrade_kspace(hr, 2)
    assert lr.shape == (8, 8)
    assert np.allclose(lr, 0.6, atol=1e-12)


def test_degrade_scale_one_is_identity():
    rng = np.random.default_rng(0)
    hr = rng.random((12, 12))
    assert np.allclose(data.degrade_kspace(hr, 1), hr, atol=1e-12)


def test_degrade_low_frequency_cosine_survives():
    # one cycle across the image stays below the crop's Nyquist limit
    h = 16
    x = np.arange(h)
    hr = 0.5 + 0.25 * np.cos(2 * np.pi * x / h)[None, :] * np.ones((h, 1))
    lr = data.degrade_kspace(hr, 2)
    expect = 0.5 + 0.25 * np.cos(2 * np.pi * np.arange(8) / 8)
    assert np.allclose(lr, expect[None, :] * np.ones((8, 1)), atol=1e-10)


def test_degrade_high_frequency_cosine_removed():
    # 6 cycles per 16 pixels exceeds the 8-pixel crop's band
    h = 16
    x = np.arange(h)
    hr = 0.5 + 0.25 * np.cos(2 * np.pi * 6 * x / h)[None, :] * np.ones((h, 1))
    lr = data.degrade_kspace(hr, 2)
    assert np.allclose(lr, 0.5, atol=1e-10)


def test_degrade_output_range():
    rng = np.random.default_rng(1)
    lr = data.degrade_kspace(rng.random((32, 32)), 4)
    assert lr.shape == (8, 8)
    assert lr.min() >= 0.0 and lr.max() <= 1.0


def test_degrade_rejects_indivisible():
    with pytest.raises(ValueError):
        data.degrade_kspace(np.zeros((15, 16)), 2)


# ----- synthetic scenes -----------------------------------------------------


def test_gen_deterministic():
    spec = data.SyntheticSceneSpec(seed=3, count=2, size=32)
    a = data.gen_synthetic(spec)
    b = data.gen_synthetic(spec)
    for pa, pb in zip(a, b):
        assert np.array_equal(pa.hr, pb.hr)
        assert np.array_equal(pa.ref, pb.ref)
        assert np.array_equal(pa.lr, pb.lr)


def test_gen_count_and_shapes():
    spec = data.SyntheticSceneSpec(seed=4, count=3, size=32, scale=2)
    pairs = data.gen_synthetic(spec)
    assert len(pairs) == 3
    assert [p.id for p in pairs] == ["0000", "0001", "0002"]
    for p in pairs:
        assert p.hr.shape == (1, 32, 32)
        assert p.ref.shape == (1, 32, 32)
        assert p.lr.shape == (1, 16, 16)
        for arr in (p.hr, p.ref, p.lr):
            assert arr.min() >= 0.0 and arr.max() <= 1.0


def test_gen_count_zero():
    assert data.gen_synthetic(data.SyntheticSceneSpec(count=0)) == []


def test_gen_modalities_share_structure():
    # the reference is a remap of the same anatomy: edge gradients correlate
    spec = data.SyntheticSceneSpec(seed=5, count=4, size=48)
    for p in data.gen_synthetic(spec):
        ghr = np.abs(np.diff(p.hr[0], axis=0))[:, :-1] + np.abs(np.diff(p.hr[0], axis=1))[:-1]
        gref = np.abs(np.diff(p.ref[0], axis=0))[:, :-1] + np.abs(np.diff(p.ref[0], axis=1))[:-1]
        rho = np.corrcoef(ghr.ravel(), gref.ravel())[0, 1]
        assert abs(rho) > 0.5


def test_gen_modalities_differ():
    p = data.gen_synthetic(data.SyntheticSceneSpec(seed=6, count=1, size=32))[0]
    assert np.abs(p.hr - p.ref).max() > 0.1


# ----- PNG round trips ------------------------------------------------------


def test_png_roundtrip_8bit(tmp_path):
    img = np.linspace(0, 1, 64).reshape(8, 8)
    path = str(tmp_path / "a.png")
    data.write_png(path, img, bits=8)
    back = data.read_png(path)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6


def test_png_roundtrip_16bit_exact_grid(tmp_path):
    # values on the u16 grid survive a 16-bit round trip exactly
    img = np.round(np.random.default_rng(7).random((6, 6)) * 65535) / 65535
    path = str(tmp_path / "b.png")
    data.write_png(path, img, bits=16)
    assert np.allclose(data.read_png(path), img, atol=1e-7)


def test_png_clamps_out_of_range(tmp_path):
    path = str(tmp_path / "c.png")
    data.write_png(path, np.array([[-1.0, 2.0]]), bits=8)
    assert data.read_png(path).tolist() == [[0.0, 1.0]]


def test_png_rgb_rejected(tmp_path):
    path = str(tmp_path / "rgb.png")
    Image.new("RGB", (4, 4), (10, 20, 30)).save(path)
    with pytest.raises(ValueError):
        data.read_png(path)


def test_png_bad_bits():
    with pytest.raises(ValueError):
        data.write_png("/tmp/never.png", np.zeros((2, 2)), bits=12)


# ----- dataset directory ----------------------------------------------------


def test_dataset_save_load_roundtrip(tmp_path):
    spec = data.SyntheticSceneSpec(seed=8, count=2, size=16)
    pairs = data.gen_synthetic(spec)
    data.save_dataset(str(tmp_path), pairs, spec)
    back = data.load_dataset(str(tmp_path))
    assert [p.id for p in back] == [p.id for p in pairs]
    for pa, pb in zip(pairs, back):
        assert np.abs(pa.hr - pb.hr).max() <= 0.5 / 65535 + 1e-7
        assert np.abs(pa.lr - pb.lr).max() <= 0.5 / 65535 + 1e-7


def test_dataset_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.load_dataset(str(tmp_path))


# ----- GT1 tensor format ----------------------------------------------------


def test_gt1_roundtrip_exact_for_f32():
    arr = np.random.default_rng(9).standard_normal((3, 4, 5)).astype(np.float32)
    buf = io.BytesIO()
    gt1.write_gt1(buf, arr)
    buf.seek(0)
    assert np.array_equal(gt1.read_gt1(buf), arr)


def test_gt1_header_layout():
    buf = io.BytesIO()
    gt1.write_gt1(buf, np.zeros((2, 3), dtype=np.float32))
    raw = buf.getvalue()
    assert raw[:4] == b"GT1\0"
    assert raw[4:8] == (2).to_bytes(4, "little")
    assert raw[8:12] == (2).to_bytes(4, "little")
    assert raw[12:16] == (3).to_bytes(4, "little")
    assert len(raw) == 16 + 4 * 6


def test_gt1_f64_truncates_to_f32():
    arr = np.array([1.0 + 1e-12])
    buf = io.BytesIO()
    gt1.write_gt1(buf, arr)
    buf.seek(0)
    back = gt1.read_gt1(buf)
    assert back.dtype == np.float32
    assert back[0] == np.float32(1.0)


def test_gt1_bad_magic():
    with pytest.raises(ValueError):
        gt1.read_gt1(io.BytesIO(b"NOPE" + b"\0" * 16))


def test_gt1_truncated_payload():
    buf = io.BytesIO()
    gt1.write_gt1(buf, np.zeros(8, dtype=np.float32))
    with pytest.raises(ValueError):
        gt1.read_gt1(io.BytesIO(buf.getvalue()[:-4]))


def test_gt1_file_helpers(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = str(tmp_path / "t.gt1")
    gt1.save(path, arr)
    assert np.array_equal(gt1.load(path), arr)


# ----- config ---------------------------------------------------------------


def test_parse_config_comments_and_blanks():
    text = "# header\nchannels = 32\n\nseed=7  # trailing\n"
    assert data.parse_config_text(text) == {"channels": "32", "seed": "7"}


def test_parse_config_bad_line():
    with pytest.raises(ValueError):
        data.parse_config_text("no equals sign here")


def test_config_precedence(tmp_path, monkeypatch):
    path = tmp_path / "c.cfg"
    path.write_text("seed = 1\nchannels = 32\n")
    monkeypatch.delenv("GLSR_SEED", raising=False)
    assert data.load_config(str(path))["seed"] == "1"
    monkeypatch.setenv("GLSR_SEED", "2")
    assert data.load_config(str(path))["seed"] == "2"
    cfg = data.load_config(str(path), {"seed": 3})
    assert cfg["seed"] == 3  # flags beat the env var
    assert cfg["channels"] == "32"


def test_config_none_override_ignored():
    cfg = data.load_config(None, {"seed": None, "batch": 4})
    assert "seed" not in cfg or os.environ.get("GLSR_SEED") is not None
    assert cfg["batch"] == 4
