import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikegraph.errors import DimensionError
from spikegraph.fsc import FrequencySpikingConv, Residual, block_compose, joint_window, joint_window_backward
from spikegraph.numerics import ComplexPair, Module, dft_joints, finite_diff_check


class Identity(Module):
    def forward(self, x):
        return x

    def backward(self, g):
        return g


def bypass(fsc, c):
    """Identity convs with zero bias and unit-statistics eval BN."""
    fsc.eval()
    for conv in (fsc.re_conv, fsc.im_conv, fsc.f1_conv, fsc.f2_conv):
        conv.weight.value = np.eye(c)
        conv.bias.value = np.zeros(c)
    for bn in (fsc.re_bn, fsc.im_bn, fsc.f1_bn, fsc.f2_bn):
        bn.eps = 1e-12
        bn.running_mean = np.zeros(c)
        bn.running_var = np.ones(c)


def test_window_examples():
    g = np.random.default_rng(0).normal(size=(2, 3, 4))
    assert np.array_equal(joint_window(g, np.ones(4)), g)
    w = np.array([1.0, 0.0, 1.0, 1.0])
    assert not joint_window(g, w)[..., 1].any()
    assert joint_window(np.ones((1, 1, 2)), np.array([2.0, 0.5])).ravel().tolist() == [2.0, 0.5]
    with pytest.raises(DimensionError):
        joint_window(g, np.ones(3))


def test_window_gradient():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(2, 3, 5))
    w = rng.normal(size=5)
    up = rng.normal(size=g.shape)
    gg, gw = joint_window_backward(g, w, up)
    assert np.array_equal(gg, up * w)
    np.testing.assert_allclose(gw, (up * g).sum(axis=(0, 1)), atol=1e-12)


@settings(max_examples=30)
@given(st.integers(1, 8), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 16))
def test_window_dft_is_linear(v, a, b, seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=v)
    x, y = rng.normal(size=(2, 2, 3, v))

    def f(z):
        return dft_joints(joint_window(z, w))

    lhs = f(a * x + b * y)
    fx, fy = f(x), f(y)
    np.testing.assert_allclose(lhs.real, a * fx.real + b * fy.real, atol=1e-9)
    np.testing.assert_allclose(lhs.imag, a * fx.imag + b * fy.imag, atol=1e-9)


def test_complex_conv_single_step():
    fsc = FrequencySpikingConv(1, 1, dtype=np.float64)
    bypass(fsc, 1)
    spec = ComplexPair(np.full((1, 1, 1), 2.0), np.full((1, 1, 1), 1.0))
    plus, minus = fsc.complex_conv(spec)
    assert plus.item() == 1.0 and minus.item() == 0.0
    swapped_plus, swapped_minus = fsc.complex_conv(ComplexPair(spec.imag, spec.real))
    # R' + I' is unchanged, R' - I' flips sign
    assert swapped_plus.item() == 1.0 and swapped_minus.item() == 0.0
    zero = ComplexPair(np.zeros((1, 1, 1)), np.zeros((1, 1, 1)))
    assert not any(o.any() for o in fsc.complex_conv(zero))


def test_forward_zero_shape_and_values():
    fsc = FrequencySpikingConv(4, 6)
    assert not fsc.forward(np.zeros((2, 3, 4, 6), np.float32)).any()
    g = np.random.default_rng(2).normal(size=(2, 3, 4, 6)).astype(np.float32)
    out = fsc.forward(g)
    assert out.shape == g.shape
    assert set(np.unique(out)) <= {0.0, 1.0, 2.0}
    with pytest.raises(DimensionError):
        fsc.forward(np.zeros((1, 3, 5, 6), np.float32))


def test_constant_over_joints_only_dc():
    fsc = FrequencySpikingConv(2, 5, dtype=np.float64)
    fsc.record = True
    g = np.broadcast_to(np.random.default_rng(3).normal(size=(1, 3, 2, 1)), (1, 3, 2, 5)).copy()
    fsc.forward(g)
    spec = fsc.spectrum
    assert np.abs(spec.real[..., 1:]).max() < 1e-12 and np.abs(spec.imag).max() < 1e-12
    np.testing.assert_allclose(spec.real[..., 0], 5 * g[..., 0], atol=1e-12)


def test_gradients_with_spiking_stages_linearised():
    rng = np.random.default_rng(4)
    fsc = FrequencySpikingConv(3, 5, rng=rng, dtype=np.float64)
    fsc.eval()
    for name in ("plus_sn", "minus_sn", "f1_sn", "f2_sn"):
        setattr(fsc, name, Identity())
    fsc.window.value = rng.normal(size=5)
    g = rng.normal(size=(2, 3, 3, 5))
    params = [fsc.window, fsc.re_conv.weight, fsc.im_conv.weight, fsc.f1_conv.weight, fsc.f2_conv.bias]
    assert finite_diff_check(fsc.forward, fsc.backward, [g], params=params) < 1e-5


def test_block_compose_examples():
    x = np.random.default_rng(5).normal(size=(2, 3, 4, 5)).astype(np.float32)
    zero = np.zeros_like(x)
    assert np.array_equal(block_compose(zero, zero, x, Residual(4, 4)), x)
    assert not block_compose(zero, zero, zero, Residual(4, 4)).any()
    proj = Residual(4, 8)
    wide = np.zeros((2, 3, 8, 5), np.float32)
    assert block_compose(wide, wide, x, proj).shape == (2, 3, 8, 5)
    assert proj.conv is not None
    with pytest.raises(DimensionError):
        block_compose(zero, zero, x, proj)
