"""Selective-scan core: discretization, recurrence, 2D scans."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import glsr.scan as S
from glsr.checks import fd_check
from glsr.tensor import Tensor


# ----- discretization ------------------------------------------------------


def test_discretize_ln2_case():
    abar, bbar = S.discretize(np.array(-1.0), np.array(1.0), np.log(2.0))
    assert abs(abar - 0.5) < 1e-12
    assert abs(bbar - 0.5) < 1e-12


def test_discretize_a_to_zero_limit():
    d, b = 0.7, 2.0
    abar, bbar = S.discretize(np.array(-1e-9), np.array(b), d)
    assert abs(abar - 1.0) < 1e-8
    assert abs(bbar - d * b) < 1e-8


def test_discretize_delta_to_zero_limit():
    abar, bbar = S.discretize(np.array(-3.0), np.array(5.0), 1e-10)
    assert abs(abar - 1.0) < 1e-8
    assert abs(bbar) < 1e-8


def test_discretize_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        S.discretize(np.array(-1.0), np.array(1.0), 0.0)


def test_phi_series_branch_continuous():
    # series and direct evaluation must agree around the switch point
    for z in (-2e-6, -1e-6, -5e-7, 5e-7, 1e-6, 2e-6):
        direct = np.expm1(z) / z
        assert abs(S.phi(z) - direct) < 1e-12


# ----- recurrence and LTI convolution --------------------------------------


def test_recurrent_hand_example():
    x = np.ones((3, 1))
    y = S.selective_scan_recurrent(x, np.array([[0.5]]), np.array([[0.5]]),
                                   np.array([1.0]))
    assert np.allclose(y[:, 0], [0.5, 0.75, 0.875], atol=1e-12)


def test_recurrent_zero_input():
    y = S.selective_scan_recurrent(np.zeros((5, 2)), np.full((2, 3), 0.5),
                                   np.full((2, 3), 0.2), np.ones(3))
    assert np.array_equal(y, np.zeros((5, 2)))


def test_recurrent_null_readout():
    rng = np.random.default_rng(0)
    y = S.selective_scan_recurrent(rng.standard_normal((6, 2)),
                                   np.full((2, 3), 0.5), np.full((2, 3), 0.2),
                                   np.zeros(3))
    assert np.allclose(y, 0.0)


def test_conv_matches_recurrent_hand_example():
    x = np.ones((3, 1))
    args = (np.array([[0.5]]), np.array([[0.5]]), np.array([1.0]))
    yr = S.selective_scan_recurrent(x, *args)
    yc = S.selective_scan_conv(x, *args)
    assert np.abs(yr - yc).max() < 1e-5


def test_conv_single_step():
    x = np.array([[2.0]])
    y = S.selective_scan_conv(x, np.array([[0.3]]), np.array([[0.4]]),
                              np.array([1.5]))
    assert np.allclose(y, 1.5 * 0.4 * 2.0)


def test_conv_memoryless_when_abar_zero():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((8, 2))
    abar = np.zeros((2, 3))
    bbar = rng.standard_normal((2, 3))
    cm = rng.standard_normal(3)
    y = S.selective_scan_conv(x, abar, bbar, cm)
    expect = x * (bbar @ cm)
    assert np.allclose(y, expect, atol=1e-12)


def test_equivalence_random_lti():
    rng = np.random.default_rng(2)
    for _ in range(100):
        c = int(rng.integers(1, 4))
        s = int(rng.integers(1, 17))
        length = int(rng.integers(1, 65))
        a = -np.exp(rng.standard_normal((c, s)))
        abar, bbar = S.discretize(a, rng.standard_normal(s),
                                  float(rng.uniform(0.05, 1.0)))
        cm = rng.standard_normal(s)
        x = rng.standard_normal((length, c))
        yr = S.selective_scan_recurrent(x, abar, bbar, cm)
        yc = S.selective_scan_conv(x, abar, bbar, cm)
        assert np.abs(yr - yc).max() < 1e-5


def test_stability_bounded_state():
    rng = np.random.default_rng(3)
    c, s = 2, 8
    a = -np.exp(rng.standard_normal((c, s)))
    abar, bbar = S.discretize(a, rng.standard_normal(s), 0.5)
    x = rng.uniform(-1, 1, (10 * s, c))
    y = S.selective_scan_recurrent(x, abar, bbar, rng.standard_normal(s))
    assert np.all(np.isfinite(y))
    assert np.abs(y).max() < 1e3


# ----- 4-direction expand/merge --------------------------------------------


def test_expand_directions_2x2():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    grid = np.array([[[a], [b]], [[c], [d]]])
    seqs = {s.direction: s.tokens[:, 0].tolist() for s in S.scan_expand(grid)}
    assert seqs["lr"] == [a, b, c, d]
    assert seqs["tb"] == [a, c, b, d]
    assert seqs["rl"] == [d, c, b, a]
    assert seqs["bt"] == [d, b, c, a]


def test_expand_1x1():
    grid = np.array([[[7.0]]])
    for s in S.scan_expand(grid):
        assert s.tokens.tolist() == [[7.0]]


def test_relayout_inverts_expand():
    rng = np.random.default_rng(4)
    grid = rng.standard_normal((3, 5, 2))
    for s in S.scan_expand(grid):
        assert np.array_equal(S.relayout(s), grid)


def test_merge_identity_is_times_four():
    rng = np.random.default_rng(5)
    grid = rng.standard_normal((4, 6, 3))
    merged = S.scan_merge(S.scan_expand(grid))
    assert np.allclose(merged, 4 * grid, atol=1e-12)


def test_merge_single_nonzero_path():
    rng = np.random.default_rng(6)
    grid = rng.standard_normal((3, 4, 2))
    seqs = S.scan_expand(grid)
    for i, s in enumerate(seqs):
        if i != 2:
            s.tokens = np.zeros_like(s.tokens)
    assert np.allclose(S.scan_merge(seqs), grid, atol=1e-12)


def test_merge_length_mismatch():
    seqs = S.scan_expand(np.zeros((2, 2, 1)))
    seqs[0] = S.ScanSequence(np.zeros((9, 1)), "lr", (3, 3))
    with pytest.raises(ValueError):
        S.scan_merge(seqs)


def test_expand_empty_grid_rejected():
    with pytest.raises(ValueError):
        S.scan_expand(np.zeros((0, 2, 1)))


# ----- ss2d ---------------------------------------------------------------


def make_params(c=3, s=4, seed=7):
    return S.SsmParams(c, s, np.random.default_rng(seed), dtype=np.float64)


def test_ss2d_global_zero_grid():
    p = make_params()
    out = S.ss2d_global(Tensor(np.zeros((1, 3, 4, 4))), p)
    assert np.allclose(out.data, 0.0)


@given(st.integers(1, 5), st.integers(1, 5))
@settings(max_examples=15, deadline=None)
def test_ss2d_shapes_preserved(h, w):
    p = make_params()
    x = Tensor(np.random.default_rng(h * 7 + w).standard_normal((1, 3, h, w)))
    assert S.ss2d_global(x, p).shape == (1, 3, h, w)
    assert S.ss2d_local(x, p).shape == (1, 3, h, w)


def test_ss2d_global_long_range_dependence():
    p = make_params()
    x = Tensor(np.random.default_rng(8).standard_normal((1, 3, 4, 4)),
               requires_grad=True)
    out = S.ss2d_global(x, p)
    from glsr.tensor import tsum
    tsum(out[:, :, 3:, 3:]).backward()
    # the last LR token's output must see the first token
    assert np.abs(x.grad[:, :, 0, 0]).max() > 0


def test_ss2d_local_quadrant_independence():
    rng = np.random.default_rng(9)
    p = make_params()
    x = rng.standard_normal((1, 3, 4, 4))
    base = S.ss2d_local(Tensor(x.copy()), p).data
    x2 = x.copy()
    x2[:, :, :2, :2] += 1.0  # top-left quadrant only
    pert = S.ss2d_local(Tensor(x2), p).data
    diff = np.abs(pert - base)
    assert diff[:, :, :2, :2].max() > 0
    assert diff[:, :, 2:, :].max() == 0.0
    assert diff[:, :, :2, 2:].max() == 0.0


def test_ss2d_local_1x1_equals_global():
    p = make_params()
    x = Tensor(np.random.default_rng(10).standard_normal((1, 3, 1, 1)))
    assert np.allclose(S.ss2d_local(x, p).data, S.ss2d_global(x, p).data,
                       atol=1e-12)


def test_ss2d_local_ceil_split_5x5():
    # quadrants 3x3, 3x2, 2x3, 2x2: verify by sensitivity pattern
    rng = np.random.default_rng(11)
    p = make_params()
    x = rng.standard_normal((1, 3, 5, 5))
    base = S.ss2d_local(Tensor(x.copy()), p).data
    x2 = x.copy()
    x2[:, :, 2, 2] += 1.0  # inside the 3x3 top-left quadrant
    diff = np.abs(S.ss2d_local(Tensor(x2), p).data - base)
    assert diff[:, :, :3, :3].max() > 0
    assert diff[:, :, 3:, :].max() == 0.0
    assert diff[:, :, :, 3:].max() == 0.0


def test_selective_scan_is_input_dependent():
    # same params, different tokens -> different effective dynamics
    p = make_params()
    t1 = Tensor(np.random.default_rng(12).standard_normal((1, 6, 3)))
    t2 = Tensor(t1.data * 2.0)
    y1 = S.selective_scan(t1, p).data
    y2 = S.selective_scan(t2, p).data
    assert not np.allclose(y2, 2.0 * y1)  # would hold for an LTI system


def test_scan_gradients():
    rng = np.random.default_rng(13)
    p = make_params()
    x = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
    ps = [x, p.a_log, p.x_proj_w, p.delta_bias]
    assert fd_check(lambda: S.ss2d_global(x, p), ps, rng) < 1e-4
    assert fd_check(lambda: S.ss2d_local(x, p), ps, rng) < 1e-4


def test_euler_variant_differs_but_converges_for_small_delta():
    rng = np.random.default_rng(14)
    p = make_params()
    x = Tensor(rng.standard_normal((1, 3, 4, 4)))
    zoh = S.ss2d_global(x, p).data
    eul = S.ss2d_global(x, p, euler=True).data
    assert not np.array_equal(zoh, eul)
    # shrink delta via the bias: the two rules agree in the limit
    p.delta_bias.data[:] = -12.0
    zoh = S.ss2d_global(x, p).data
    eul = S.ss2d_global(x, p, euler=True).data
    assert np.abs(zoh - eul).max() < 1e-4


def test_ssm_params_a_negative():
    p = make_params(c=5, s=8)
    assert np.all(-np.exp(p.a_log.data) < 0)
