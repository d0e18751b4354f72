"""Skeleton spike encoding and the spiking graph convolution."""

from __future__ import annotations

import numpy as np

from .errors import DataError, DimensionError
from .lif import LIF, LifParams
from .numerics import BatchNorm, Conv, Module, Parameter, pointwise_conv


def minmax_normalize(x_raw):
    """Map every coordinate channel of each sequence linearly onto [0, 1].

    Extremes are taken over all frames and joints; a constant channel maps
    to zero.
    """
    x = np.asarray(x_raw)
    if not np.all(np.isfinite(x)):
        raise DataError("skeleton coordinates contain non-finite values")
    lo = x.min(axis=(-3, -1), keepdims=True)
    hi = x.max(axis=(-3, -1), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0).astype(x.dtype)


class SpikeEncoder(Module):
    """Normalise raw (T, 3, V) coordinates, then conv + BN + LIF to spikes."""

    def __init__(self, c_in, c_out, *, lif=LifParams(), rng=None, dtype=np.float32):
        self.conv = Conv(c_in, c_out, rng=rng, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)
        self.sn = LIF(lif, "encoder.sn")

    def forward(self, x_raw):
        x = minmax_normalize(x_raw)
        return self.sn.forward(self.bn.forward(self.conv.forward(x)))

    def backward(self, grad):
        self.conv.backward(self.bn.backward(self.sn.backward(grad)))


def mix_joints(x, pa_slice):
    """(X * P)[..., d, v] = sum_u X[..., d, u] P[u, v]."""
    if x.shape[-1] != pa_slice.shape[0]:
        raise DimensionError(f"input has {x.shape[-1]} joints, relation matrix {pa_slice.shape[0]}")
    return np.matmul(x, pa_slice)


def sgc_aggregate(x, pa, weights, bn=None):
    """Functional form: BN of the sum over relations of conv_n(X * pa[n]).

    ``bn=None`` bypasses normalisation.
    """
    pa = pa.value if isinstance(pa, Parameter) else np.asarray(pa)
    total = sum(pointwise_conv(mix_joints(x, pa[n]), weights[n]) for n in range(pa.shape[0]))
    return total if bn is None else bn.forward(total)


class SpikingGraphConv(Module):
    """Relation-wise graph aggregation with a spiking shortcut branch.

    Output is SN(G_i) + SN(BN(conv(X))), a {0, 1, 2}-valued tensor; with
    ``rebinarize`` it is clipped back to {0, 1}.
    """

    def __init__(self, c_in, c_out, pa: Parameter, *, lif=LifParams(), rebinarize=False, rng=None,
                 dtype=np.float32, name="sgc"):
        self.c_in, self.c_out, self.name = c_in, c_out, name
        self.pa = pa
        self.rebinarize = rebinarize
        n = pa.shape[0]
        self.convs = [Conv(c_in, c_out, bias=False, rng=rng, dtype=dtype) for _ in range(n)]
        self.bn = BatchNorm(c_out, dtype=dtype)
        self.sn = LIF(lif, f"{name}.sn")
        self.short_conv = Conv(c_in, c_out, rng=rng, dtype=dtype)
        self.short_bn = BatchNorm(c_out, dtype=dtype)
        self.short_sn = LIF(lif, f"{name}.short_sn")
        self._cache = None

    def aggregate(self, x):
        pa = self.pa.value
        total = None
        for n, conv in enumerate(self.convs):
            y = conv.forward(mix_joints(x, pa[n]))
            total = y if total is None else total + y
        return self.bn.forward(total)

    def forward(self, x):
        if x.shape[-2] != self.c_in:
            raise DimensionError(f"{self.name}: expected {self.c_in} channels, got {x.shape[-2]}")
        self._cache = x
        out = self.sn.forward(self.aggregate(x))
        out = out + self.short_sn.forward(self.short_bn.forward(self.short_conv.forward(x)))
        if self.rebinarize:
            out = np.minimum(out, 1.0)
        return out

    def backward(self, grad):
        x = self._cache
        v = x.shape[-1]
        pa = self.pa.value
        g_total = self.bn.backward(self.sn.backward(grad))
        gx = self.short_conv.backward(self.short_bn.backward(self.short_sn.backward(grad)))
        gpa = np.zeros_like(pa)
        x_flat = x.reshape(-1, v)
        for n, conv in enumerate(self.convs):
            gy = conv.backward(g_total)
            gpa[n] = x_flat.T @ gy.reshape(-1, v)
            gx = gx + np.matmul(gy, pa[n].T)
        self.pa.accumulate(gpa)
        return gx
