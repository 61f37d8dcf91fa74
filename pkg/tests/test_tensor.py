import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stdan import tensor as T


def naive_conv2d(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for i in range(n):
        for o in range(co):
            for y in range(oh):
                for xx in range(ow):
                    acc = b[o]
                    for ci in range(c):
                        for dy in range(kh):
                            for dx in range(kw):
                                acc += w[o, ci, dy, dx] * xp[i, ci, y * stride + dy, xx * stride + dx]
                    out[i, o, y, xx] = acc
    return out


@pytest.mark.parametrize("seed", range(4))
def test_conv2d_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    n, c, h, w = rng.integers(1, 3), rng.integers(1, 5), rng.integers(5, 17), rng.integers(5, 17)
    co, k = rng.integers(1, 5), int(rng.choice([1, 3, 5]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 3))
    h += (h + 2 * pad - k) % stride  # ConvSpec rejects non-integer output sizes
    w += (w + 2 * pad - k) % stride
    x = rng.standard_normal((n, c, h, w))
    wt = rng.standard_normal((co, c, k, k))
    b = rng.standard_normal(co)
    got = T.conv2d(x, wt, b, stride=stride, padding=pad)
    np.testing.assert_allclose(got, naive_conv2d(x, wt, b, stride, pad), rtol=0, atol=1e-12)


def test_conv2d_largest_case_against_oracle():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 8, 16, 16))
    w = rng.standard_normal((3, 8, 3, 3))
    b = rng.standard_normal(3)
    np.testing.assert_allclose(T.conv2d(x, w, b, padding=1), naive_conv2d(x, w, b, 1, 1), atol=1e-12)


def test_conv_spec_output_size_and_errors():
    spec = T.ConvSpec(3, 3, 4, 8, stride=1, padding=1)
    assert spec.output_size(7, 9) == (7, 9)
    with pytest.raises(ValueError):
        T.ConvSpec(3, 3, 4, 8, stride=2, padding=0).output_size(8, 8)
    with pytest.raises(ValueError):
        T.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


def test_replicate_padding_repeats_edges():
    x = np.arange(6.0).reshape(1, 1, 2, 3)
    p = T.pad2d(x, 1, "replicate")
    assert p.shape == (1, 1, 4, 5)
    np.testing.assert_array_equal(p[0, 0, 0], [0, 0, 1, 2, 2])
    np.testing.assert_array_equal(p[0, 0, :, 0], [0, 0, 3, 3])


def test_pad_backward_is_adjoint(rng):
    x = rng.standard_normal((1, 2, 3, 4))
    for mode in T.PAD_MODES:
        g = rng.standard_normal((1, 2, 5, 8))
        pad = (1, 1, 2, 2)
        lhs = np.sum(T.pad2d(x, pad, mode) * g)
        rhs = np.sum(x * T.pad2d_backward(g, x.shape, pad, mode))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_linear_matches_loop_oracle(rng):
    x = rng.standard_normal((2, 5, 3, 4))
    w = rng.standard_normal((6, 5))
    b = rng.standard_normal(6)
    ref = np.zeros((2, 6, 3, 4))
    for i in range(2):
        for y in range(3):
            for xx in range(4):
                ref[i, :, y, xx] = w @ x[i, :, y, xx] + b
    np.testing.assert_allclose(T.linear(x, w, b), ref, atol=1e-12)


def test_layer_norm_normalizes_channels(rng):
    x = 3.0 + 5.0 * rng.standard_normal((2, 16, 4, 4))
    y = T.layer_norm(x, np.ones(16), np.zeros(16))
    assert np.abs(y.mean(axis=1)).max() <= 1e-9
    assert np.abs(y.var(axis=1) - 1).max() <= 1e-3


def test_layer_norm_applies_affine(rng):
    x = rng.standard_normal((1, 4, 2, 2))
    g, b = rng.standard_normal(4), rng.standard_normal(4)
    base = T.layer_norm(x, np.ones(4), np.zeros(4))
    np.testing.assert_allclose(T.layer_norm(x, g, b), base * g[:, None, None] + b[:, None, None], atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-700, 700)))
def test_softmax_sums_to_one(v):
    s = T.softmax(v)
    assert abs(s.sum() - 1.0) <= 1e-9
    assert np.all(s >= 0)


def test_softmax_is_shift_invariant(rng):
    v = rng.standard_normal(9)
    np.testing.assert_allclose(T.softmax(v), T.softmax(v + 123.0), atol=1e-15)


def test_leaky_relu_slope():
    x = np.array([-2.0, -0.5, 0.0, 1.5])
    np.testing.assert_array_equal(T.leaky_relu(x), [-0.2, -0.05, 0.0, 1.5])
    np.testing.assert_array_equal(T.leaky_relu_backward(np.ones(4), x), [0.1, 0.1, 1.0, 1.0])


def test_gelu_known_values():
    assert T.gelu(np.array(0.0)) == 0.0
    assert T.gelu(np.array(1.0)) == pytest.approx(0.8413447460685429, abs=1e-12)


def test_bilinear_sample_exact_at_integers(rng):
    x = rng.standard_normal((2, 3, 5, 6))
    for _ in range(20):
        b, c, yy, xx = rng.integers(2), rng.integers(3), rng.integers(5), rng.integers(6)
        assert T.bilinear_sample(x, xx, yy, channel=c, batch=b) == x[b, c, yy, xx]


def test_bilinear_sample_is_linear_between_pixels(rng):
    x = rng.standard_normal((1, 1, 4, 4))
    for t in np.linspace(0, 1, 7):
        expect = (1 - t) * x[0, 0, 2, 1] + t * x[0, 0, 2, 2]
        assert T.bilinear_sample(x, 1 + t, 2) == pytest.approx(expect, abs=1e-14)
        expect = (1 - t) * x[0, 0, 1, 3] + t * x[0, 0, 2, 3]
        assert T.bilinear_sample(x, 3, 1 + t) == pytest.approx(expect, abs=1e-14)


def test_bilinear_sample_clamps_to_border(rng):
    x = rng.standard_normal((1, 1, 3, 4))
    assert T.bilinear_sample(x, -5.0, -2.0) == x[0, 0, 0, 0]
    assert T.bilinear_sample(x, 10.0, 1.0) == x[0, 0, 1, 3]
    assert T.bilinear_sample(x, 1.5, 7.0) == pytest.approx(0.5 * (x[0, 0, 2, 1] + x[0, 0, 2, 2]))


def test_bilinear_gather_agrees_with_scalar_sampler(rng):
    x = rng.standard_normal((2, 3, 5, 6))
    px = rng.uniform(-1.5, 6.5, (2, 4, 3))
    py = rng.uniform(-1.5, 5.5, (2, 4, 3))
    got = T.bilinear_gather(x, px, py)
    assert got.shape == (2, 3, 4, 3)
    for b in range(2):
        for c in range(3):
            for i in range(4):
                for j in range(3):
                    ref = T.bilinear_sample(x, px[b, i, j], py[b, i, j], channel=c, batch=b)
                    assert got[b, c, i, j] == pytest.approx(ref, abs=1e-13)


def test_pixel_shuffle_round_trip_bitwise(rng):
    x = rng.standard_normal((2, 12, 3, 5))
    assert np.array_equal(T.pixel_unshuffle(T.pixel_shuffle(x, 2), 2), x)
    y = rng.standard_normal((1, 3, 6, 4))
    assert np.array_equal(T.pixel_shuffle(T.pixel_unshuffle(y, 2), 2), y)


def test_pixel_shuffle_layout():
    x = np.arange(4.0).reshape(1, 4, 1, 1)
    np.testing.assert_array_equal(T.pixel_shuffle(x, 2)[0, 0], [[0, 1], [2, 3]])
    with pytest.raises(ValueError):
        T.pixel_shuffle(np.zeros((1, 3, 2, 2)), 2)


def test_non_finite_values_raise():
    with pytest.raises(T.NonFiniteError):
        T.ensure_finite(np.array([1.0, np.nan]), "here")
