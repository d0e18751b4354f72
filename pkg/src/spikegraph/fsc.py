"""Frequency spiking convolution along the joint axis and block composition."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .lif import LIF, LifParams
from .numerics import (BatchNorm, ComplexPair, Conv, Module, Parameter, dft_joints,
                       dft_joints_backward)


def joint_window(g, w):
    if g.shape[-1] != len(w):
        raise DimensionError(f"window has {len(w)} taps for {g.shape[-1]} joints")
    return g * w


def joint_window_backward(g, w, grad):
    """Returns (grad_g, grad_w)."""
    gw = (grad * g).reshape(-1, g.shape[-1]).sum(axis=0)
    return grad * w, gw


class FrequencySpikingConv(Module):
    """Window -> joint DFT -> complex spiking conv -> two-branch spiking fusion.

    All V frequency bins are kept, so the joint axis length is unchanged.
    The output is the sum of two spike trains and lies in {0, 1, 2}.
    """

    def __init__(self, channels, joints, *, lif=LifParams(), rng=None, dtype=np.float32, name="fsc"):
        self.channels, self.name = channels, name
        self.window = Parameter(np.ones(joints, dtype=dtype))
        self.re_conv = Conv(channels, channels, rng=rng, dtype=dtype)
        self.re_bn = BatchNorm(channels, dtype=dtype)
        self.im_conv = Conv(channels, channels, rng=rng, dtype=dtype)
        self.im_bn = BatchNorm(channels, dtype=dtype)
        self.plus_sn = LIF(lif, f"{name}.plus_sn")
        self.minus_sn = LIF(lif, f"{name}.minus_sn")
        self.f1_conv = Conv(channels, channels, rng=rng, dtype=dtype)
        self.f1_bn = BatchNorm(channels, dtype=dtype)
        self.f1_sn = LIF(lif, f"{name}.f1_sn")
        self.f2_conv = Conv(channels, channels, rng=rng, dtype=dtype)
        self.f2_bn = BatchNorm(channels, dtype=dtype)
        self.f2_sn = LIF(lif, f"{name}.f2_sn")
        self.record = False
        self.spectrum = None
        self._cache = None

    def complex_conv(self, spec: ComplexPair):
        r = self.re_bn.forward(self.re_conv.forward(spec.real))
        i = self.im_bn.forward(self.im_conv.forward(spec.imag))
        return self.plus_sn.forward(r + i), self.minus_sn.forward(r - i)

    def forward(self, g):
        if g.shape[-2] != self.channels:
            raise DimensionError(f"{self.name}: expected {self.channels} channels, got {g.shape[-2]}")
        windowed = joint_window(g, self.window.value)
        spec = dft_joints(windowed)
        if self.record:
            self.spectrum = spec
        o1, o2 = self.complex_conv(spec)
        f1 = self.f1_sn.forward(self.f1_bn.forward(self.f1_conv.forward(o1)))
        f2 = self.f2_sn.forward(self.f2_bn.forward(self.f2_conv.forward(o2)))
        self._cache = g
        return f1 + f2

    def backward(self, grad):
        g = self._cache
        g_o1 = self.f1_conv.backward(self.f1_bn.backward(self.f1_sn.backward(grad)))
        g_o2 = self.f2_conv.backward(self.f2_bn.backward(self.f2_sn.backward(grad)))
        g_plus = self.plus_sn.backward(g_o1)
        g_minus = self.minus_sn.backward(g_o2)
        g_re = self.re_conv.backward(self.re_bn.backward(g_plus + g_minus))
        g_im = self.im_conv.backward(self.im_bn.backward(g_plus - g_minus))
        g_windowed = dft_joints_backward(g_re, g_im)
        gg, gw = joint_window_backward(g, self.window.value, g_windowed)
        self.window.accumulate(gw)
        return gg


class Residual(Module):
    """Identity when widths match, else conv + BN projection."""

    def __init__(self, c_in, c_out, *, rng=None, dtype=np.float32):
        self.c_in, self.c_out = c_in, c_out
        if c_in != c_out:
            self.conv = Conv(c_in, c_out, rng=rng, dtype=dtype)
            self.bn = BatchNorm(c_out, dtype=dtype)
        else:
            self.conv = self.bn = None

    def forward(self, x):
        if self.conv is None:
            return x
        return self.bn.forward(self.conv.forward(x))

    def backward(self, grad):
        if self.conv is None:
            return grad
        return self.conv.backward(self.bn.backward(grad))


def block_compose(f, g, x_prev, res: Residual):
    """X_l = F + G + res(X_prev)."""
    r = res.forward(x_prev)
    if not (f.shape == g.shape == r.shape):
        raise DimensionError(f"cannot compose shapes {f.shape}, {g.shape}, {r.shape}")
    return f + g + r
