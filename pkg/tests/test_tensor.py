"""Autodiff engine: forward semantics, gradients, broadcasting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import glsr.tensor as T
from glsr.checks import fd_check
from glsr.tensor import Tensor

RNG = np.random.default_rng(0)


def rand(*shape, grad=True):
    return Tensor(np.random.default_rng(sum(shape) + 7).standard_normal(shape),
                  requires_grad=grad)


# ----- elementwise ---------------------------------------------------------


def test_sub_self_is_zero():
    x = rand(2, 3, 4, 4)
    assert np.array_equal(T.sub(x, x).data, np.zeros((2, 3, 4, 4)))


def test_sigmoid_midpoint():
    z = Tensor(np.zeros((2, 2)))
    assert np.allclose(T.sigmoid(z).data, 0.5)


def test_mul_identity():
    x = rand(1, 2, 3, 3)
    assert np.array_equal(T.mul(x, Tensor(np.ones(x.shape))).data, x.data)


def test_broadcast_matches_tiled():
    a = Tensor(RNG.standard_normal((2, 3, 1, 4)))
    b = Tensor(RNG.standard_normal((1, 3, 5, 1)))
    out = T.add(a, b)
    tiled = np.broadcast_to(a.data, (2, 3, 5, 4)) + np.broadcast_to(
        b.data, (2, 3, 5, 4))
    assert np.array_equal(out.data, tiled)


def test_shape_mismatch_raises():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((4, 5)))
    with pytest.raises(ValueError):
        T.add(a, b)


@given(st.integers(1, 4), st.integers(1, 4))
@settings(max_examples=20, deadline=None)
def test_mul_gradient_is_other_operand(h, w):
    a = Tensor(np.random.default_rng(h * 10 + w).standard_normal((h, w)),
               requires_grad=True)
    b = Tensor(np.random.default_rng(h + w).standard_normal((h, w)),
               requires_grad=True)
    T.tsum(a * b).backward()
    assert np.allclose(a.grad, b.data)
    assert np.allclose(b.grad, a.data)


# ----- backward contract ---------------------------------------------------


def test_sum_backward_is_ones():
    x = rand(3, 2, 5, 4)
    T.tsum(x).backward()
    assert np.array_equal(x.grad, np.ones(x.shape))


def test_square_sum_backward_is_2x():
    x = rand(2, 2, 3, 3)
    T.tsum(x * x).backward()
    assert np.allclose(x.grad, 2 * x.data)


def test_backward_requires_scalar():
    x = rand(2, 2)
    with pytest.raises(ValueError):
        (x * x).backward()


def test_fanout_accumulates():
    x = Tensor(np.array([1.5, -0.5]), requires_grad=True)
    y = x * x + x  # d/dx = 2x + 1
    T.tsum(y).backward()
    assert np.allclose(x.grad, 2 * x.data + 1)


def test_residual_through_deep_graph():
    # x reachable both directly and through a chain must get both terms
    x = Tensor(np.array([0.3, -1.2, 0.7]), requires_grad=True)
    out = x + T.silu(x * x)
    T.tsum(out).backward()
    s = T.sigmoid(Tensor(x.data * x.data)).data
    inner = s + x.data * x.data * s * (1 - s)
    assert np.allclose(x.grad, 1 + 2 * x.data * inner)


# ----- reductions ----------------------------------------------------------


def test_max_of_constant():
    x = Tensor(np.full((2, 3, 4, 4), 2.5))
    assert np.allclose(T.tmax(x, axis=(2, 3)).data, 2.5)


def test_mean_simple():
    assert T.tmean(Tensor(np.array([1.0, 2.0, 3.0]))).item() == 2.0


def test_max_ties_route_to_first():
    x = Tensor(np.array([[1.0, 3.0, 3.0, 0.0]]), requires_grad=True)
    T.tsum(T.tmax(x, axis=1)).backward()
    assert np.array_equal(x.grad, [[0.0, 1.0, 0.0, 0.0]])


def test_empty_axis_reduction_rejected():
    x = Tensor(np.zeros((2, 0, 3)))
    with pytest.raises(ValueError):
        T.tmax(x, axis=1)


# ----- convolution ---------------------------------------------------------


def test_conv_1x1_identity():
    x = rand(2, 1, 4, 4, grad=False)
    w = Tensor(np.ones((1, 1, 1, 1)))
    out = T.conv2d(x, w, None, 1, 0)
    assert np.allclose(out.data, x.data)


def test_conv_all_ones_valid():
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = T.conv2d(x, w, None, 1, "valid")
    assert out.shape == (1, 1, 1, 1)
    assert out.item() == 9.0


def test_conv_stride2_shape():
    x = Tensor(np.zeros((1, 1, 4, 4)))
    w = Tensor(np.zeros((1, 1, 2, 2)))
    assert T.conv2d(x, w, None, 2, 0).shape == (1, 1, 2, 2)


def test_conv_channel_mismatch():
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))),
                 Tensor(np.zeros((1, 3, 3, 3))), None)


def test_conv_gradients():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal(4), requires_grad=True)
    assert fd_check(lambda: T.conv2d(x, w, b, 1, "same"), [x, w, b], rng) < 1e-4
    w2 = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
    assert fd_check(lambda: T.conv2d(x, w2, None, 2, 1), [x, w2], rng) < 1e-4


def test_dwconv_matches_grouped_conv():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((1, 3, 5, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 1, 3, 3)), requires_grad=True)
    out = T.dwconv2d(x, w)
    # oracle: per-channel full conv
    for c in range(3):
        ref = T.conv2d(Tensor(x.data[:, c : c + 1]),
                       Tensor(w.data[c : c + 1]), None, 1, "same")
        assert np.allclose(out.data[:, c], ref.data[:, 0], atol=1e-12)
    assert fd_check(lambda: T.dwconv2d(x, w), [x, w], rng) < 1e-4


# ----- bilinear sampling ---------------------------------------------------


def test_bilinear_integer_offsets_equal_indexing():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((1, 2, 4, 5)))
    gy, gx = np.meshgrid(np.arange(4), np.arange(5), indexing="ij")
    ys = Tensor(gy[None, None].astype(np.float64))
    xs = Tensor(gx[None, None].astype(np.float64))
    out = T.bilinear_gather(x, ys, xs)
    assert np.allclose(out.data[:, :, 0], x.data, atol=1e-12)


def test_bilinear_outside_is_zero():
    x = Tensor(np.ones((1, 1, 3, 3)))
    ys = Tensor(np.full((1, 1, 1, 1), -5.0))
    xs = Tensor(np.full((1, 1, 1, 1), 1.0))
    assert T.bilinear_gather(x, ys, xs).item() == 0.0


def test_bilinear_midpoint():
    x = Tensor(np.arange(4, dtype=np.float64).reshape(1, 1, 1, 4))
    ys = Tensor(np.zeros((1, 1, 1, 1)))
    xs = Tensor(np.full((1, 1, 1, 1), 1.5))
    assert T.bilinear_gather(x, ys, xs).item() == pytest.approx(1.5)


def test_bilinear_gradients():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
    ys = Tensor(rng.uniform(-0.5, 3.5, (2, 2, 4, 4)), requires_grad=True)
    xs = Tensor(rng.uniform(-0.5, 3.5, (2, 2, 4, 4)), requires_grad=True)
    assert fd_check(lambda: T.bilinear_gather(x, ys, xs), [x, ys, xs],
                    rng) < 1e-4


# ----- determinism ---------------------------------------------------------


def test_forward_deterministic():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((1, 4, 6, 6)))
    w = Tensor(rng.standard_normal((4, 4, 3, 3)))
    a = T.conv2d(x, w, None, 1, "same").data
    b = T.conv2d(x, w, None, 1, "same").data
    assert np.array_equal(a, b)
