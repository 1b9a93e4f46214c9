"""Tensor core: op semantics against brute-force oracles, and gradient checks."""

import math

import numpy as np
import pytest

from fmdd.rng import SplitMix64
from fmdd.tensor import (ShapeError, TapeError, Tensor, backward, clamp_min,
                         concat, conv1d_temporal, conv2d, gelu, grad_check,
                         layer_norm, matmul, mul, narrow, no_grad, permute,
                         reshape, softmax, tensor_sum)


def _rand(stream, shape, scale=1.0):
    return stream.normal(int(np.prod(shape))).reshape(shape) * scale


# -- matmul ------------------------------------------------------------------

def test_matmul_identity():
    eye = Tensor(np.eye(2))
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(eye, a).data, a.data)


def test_matmul_known_product():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_against_triple_loop():
    stream = SplitMix64(42)
    a = _rand(stream, (3, 4))
    b = _rand(stream, (4, 5))
    expected = np.zeros((3, 5))
    for i in range(3):
        for j in range(5):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    got = matmul(Tensor(a), Tensor(b)).data
    assert np.max(np.abs(got - expected)) < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as err:
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)


def test_matmul_backward_matches_finite_differences():
    stream = SplitMix64(7)
    b = Tensor(_rand(stream, (4, 3)))
    x = Tensor(_rand(stream, (2, 4)), requires_grad=True)
    report = grad_check(lambda t: tensor_sum(matmul(t, b)), x, tol=1e-6)
    assert report.max_rel_err < 1e-6


# -- conv1d ------------------------------------------------------------------

def test_conv1d_identity_kernel():
    x = Tensor([[1.0, 2.0, 3.0]])
    w = Tensor([[[1.0]]])
    out = conv1d_temporal(x, w, Tensor([0.0]), padding=0)
    assert np.array_equal(out.data, [[1.0, 2.0, 3.0]])


def test_conv1d_length_preserved_k5_pad2():
    x = Tensor(np.zeros((3, 20)))
    w = Tensor(np.zeros((6, 3, 5)))
    out = conv1d_temporal(x, w, Tensor(np.zeros(6)), padding=2)
    assert out.shape == (6, 20)


def test_conv1d_box_filter():
    x = Tensor([[0.0, 3.0, 6.0]])
    w = Tensor(np.full((1, 1, 3), 1.0 / 3.0))
    out = conv1d_temporal(x, w, Tensor([0.0]), padding=1)
    assert np.allclose(out.data, [[1.0, 3.0, 3.0]])


def _conv1d_brute(x, w, b, padding):
    cin, length = x.shape
    cout, _, k = w.shape
    out_len = length + 2 * padding - k + 1
    xp = np.pad(x, ((0, 0), (padding, padding)))
    out = np.zeros((cout, out_len))
    for o in range(cout):
        for pos in range(out_len):
            acc = b[o]
            for c in range(cin):
                for j in range(k):
                    acc += w[o, c, j] * xp[c, pos + j]
            out[o, pos] = acc
    return out


def test_conv1d_against_sliding_window_oracle():
    stream = SplitMix64(3)
    x = _rand(stream, (2, 9))
    w = _rand(stream, (4, 2, 3))
    b = _rand(stream, (4,))
    got = conv1d_temporal(Tensor(x), Tensor(w), Tensor(b), padding=1).data
    assert np.max(np.abs(got - _conv1d_brute(x, w, b, 1))) < 1e-12


def test_conv1d_length_preserving_for_all_lengths():
    for k in (1, 3, 5):
        for length in range(1, 11):
            x = Tensor(np.ones((2, length)))
            w = Tensor(np.ones((2, 2, k)))
            out = conv1d_temporal(x, w, Tensor(np.zeros(2)), padding=k // 2)
            assert out.shape == (2, length)


def test_conv1d_errors():
    with pytest.raises(ShapeError):
        conv1d_temporal(Tensor(np.zeros((3, 5))), Tensor(np.zeros((2, 4, 3))),
                        Tensor(np.zeros(2)), padding=1)
    with pytest.raises(ShapeError):  # non-positive output length
        conv1d_temporal(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 1, 5))),
                        Tensor(np.zeros(1)), padding=0)


# -- conv2d ------------------------------------------------------------------

def test_conv2d_pointwise_identity():
    stream = SplitMix64(5)
    x = _rand(stream, (1, 4, 4))
    w = np.ones((1, 1, 1, 1))
    out = conv2d(Tensor(x), Tensor(w), Tensor([0.0]), stride=1, padding=0)
    assert np.allclose(out.data, x)


def test_conv2d_all_ones_sum():
    x = Tensor(np.ones((1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = conv2d(x, w, Tensor([0.0]), stride=1, padding=0)
    assert out.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == 9.0


def _conv2d_brute(x, w, b, stride, padding):
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((cout, oh, ow))
    for o in range(cout):
        for i in range(oh):
            for j in range(ow):
                acc = b[o]
                for c in range(cin):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += w[o, c, di, dj] * xp[c, i * stride + di, j * stride + dj]
                out[o, i, j] = acc
    return out


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_against_quadruple_loop_oracle(stride, padding):
    stream = SplitMix64(9 + stride + padding)
    x = _rand(stream, (2, 4, 4))
    w = _rand(stream, (3, 2, 3, 3))
    b = _rand(stream, (3,))
    got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding).data
    assert np.max(np.abs(got - _conv2d_brute(x, w, b, stride, padding))) < 1e-12


def test_conv2d_batched_matches_per_frame():
    stream = SplitMix64(13)
    x = _rand(stream, (3, 2, 6, 6))
    w = _rand(stream, (4, 2, 3, 3))
    b = _rand(stream, (4,))
    batched = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    for i in range(3):
        single = conv2d(Tensor(x[i]), Tensor(w), Tensor(b), stride=2, padding=1).data
        assert np.array_equal(batched[i], single)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))),
               Tensor(np.zeros(1)))


# -- layer_norm --------------------------------------------------------------

def test_layer_norm_constant_token_collapses():
    out = layer_norm(Tensor([5.0, 5.0, 5.0, 5.0]), Tensor(np.ones(4)),
                     Tensor(np.zeros(4)))
    assert np.max(np.abs(out.data)) <= 1e-2


def test_layer_norm_two_point_token():
    out = layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    # mean 0, population variance 1; eps shrinks the output by ~5e-6
    assert np.allclose(out.data, [1.0, -1.0], atol=1e-4)


def test_layer_norm_output_mean_and_variance():
    stream = SplitMix64(21)
    x = _rand(stream, (6, 8), scale=3.0)
    out = layer_norm(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    assert np.max(np.abs(out.mean(axis=-1))) <= 1e-12
    var = x.var(axis=-1)
    expected = var / (var + 1e-5)
    assert np.max(np.abs(out.var(axis=-1) - expected)) < 1e-6


# -- gelu --------------------------------------------------------------------

def _erf_series(z, terms=40):
    """Taylor series of erf, independent of scipy."""
    total = 0.0
    for n in range(terms):
        total += (-1) ** n * z ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1))
    return 2.0 / math.sqrt(math.pi) * total


def test_gelu_values():
    assert gelu(Tensor([0.0])).data[0] == 0.0
    expected = 0.5 * 1.0 * (1.0 + _erf_series(1.0 / math.sqrt(2.0)))
    assert abs(gelu(Tensor([1.0])).data[0] - expected) < 1e-10
    assert abs(gelu(Tensor([1.0])).data[0] - 0.841345) < 1e-5
    assert abs(gelu(Tensor([-10.0])).data[0]) < 1e-6


# -- softmax -----------------------------------------------------------------

def test_softmax_uniform():
    out = softmax(Tensor([3.3, 3.3, 3.3]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_log2_point():
    out = softmax(Tensor([0.0, math.log(2.0)]))
    assert np.allclose(out.data, [1 / 3, 2 / 3], atol=1e-12)


def test_softmax_overflow_safe():
    out = softmax(Tensor([1000.0, 0.0]))
    assert np.isfinite(out.data).all()
    assert out.data[0] == pytest.approx(1.0)


def test_softmax_rows_sum_to_one():
    stream = SplitMix64(31)
    x = _rand(stream, (5, 7), scale=20.0)
    out = softmax(Tensor(x)).data
    assert (out >= 0).all()
    assert np.max(np.abs(out.sum(axis=-1) - 1.0)) <= 1e-12


# -- backward ----------------------------------------------------------------

def test_backward_sum_of_squares():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    backward(tensor_sum(mul(x, x)))
    assert np.allclose(x.grad, [2.0, -4.0, 6.0])


def test_backward_fanout_accumulates():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(tensor_sum(x + x))
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_backward_gelu_linear_chain_matches_fd():
    stream = SplitMix64(17)
    w = Tensor(_rand(stream, (4, 3)))
    x = Tensor(_rand(stream, (3, 2)), requires_grad=True)
    report = grad_check(lambda t: tensor_sum(gelu(matmul(w, t))), x, h=1e-5, tol=1e-4)
    assert report.max_rel_err < 1e-4


def test_backward_requires_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = mul(x, x)
    with pytest.raises(TapeError):
        backward(y)


def test_backward_without_tape_errors():
    loss = Tensor(1.0, requires_grad=True)
    with pytest.raises(TapeError):
        backward(loss)


def test_backward_reproducible_after_zero_grad():
    stream = SplitMix64(23)
    x = Tensor(_rand(stream, (3, 3)), requires_grad=True)

    def run():
        x.grad = None
        backward(tensor_sum(gelu(mul(x, x))))
        return np.array(x.grad)

    first, second = run(), run()
    assert np.array_equal(first, second)


def test_no_grad_suppresses_taping():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = mul(x, x)
    assert not y.requires_grad
    with pytest.raises(TapeError):
        backward(tensor_sum(mul(x, x) if False else y))


# -- structure ops -----------------------------------------------------------

def test_concat_narrow_roundtrip():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    b = Tensor(np.arange(6.0, 12.0).reshape(2, 3))
    joined = concat([a, b], axis=0)
    assert np.array_equal(narrow(joined, 0, 2, 2).data, b.data)


def test_permute_reshape_shapes():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    assert permute(x, (2, 0, 1)).shape == (4, 2, 3)
    assert reshape(x, (6, 4)).shape == (6, 4)


def test_clamp_min_gradient_masks_clamped_region():
    x = Tensor([0.5, 2.0], requires_grad=True)
    backward(tensor_sum(clamp_min(x, 1.0)))
    assert np.array_equal(x.grad, [0.0, 1.0])


# -- grad_check itself -------------------------------------------------------

def test_grad_check_linear_function_is_exact():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    report = grad_check(lambda t: tensor_sum(t), x)
    assert report.max_rel_err < 1e-9


def test_grad_check_layer_norm_composite():
    stream = SplitMix64(29)
    gamma = Tensor(_rand(stream, (6,), 0.3) + 1.0)
    beta = Tensor(_rand(stream, (6,), 0.3))
    x = Tensor(_rand(stream, (4, 6)), requires_grad=True)
    report = grad_check(lambda t: tensor_sum(gelu(layer_norm(t, gamma, beta))), x)
    assert report.max_rel_err < 1e-4


def test_grad_check_reports_worst_coordinate():
    stream = SplitMix64(37)
    x = Tensor(_rand(stream, (2, 3)), requires_grad=True)
    report = grad_check(lambda t: tensor_sum(mul(t, t)), x)
    assert len(report.worst_index) == 2
    assert report.tol == 1e-4
