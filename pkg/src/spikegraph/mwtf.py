"""Multi-scale wavelet branch with topology-aware low-frequency fusion, and
the classification head."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .graph import selection_matrix, topk_neighbors, topology_score
from .lif import LIF, LifParams
from .numerics import (BatchNorm, Conv, Module, Parameter, linear_upsample,
                       linear_upsample_backward)
from .wavelet import FilterBank, build_filter_bank, decompose, decompose_backward


def padded_length(t: int) -> int:
    return 1 << math.ceil(math.log2(t)) if t > 1 else 1


def pad_temporal(x):
    """Append copies of the opening frames until T is a power of two."""
    t = x.shape[-3]
    extra = padded_length(t) - t
    if extra == 0:
        return x
    return np.concatenate([x, x[..., :extra, :, :]], axis=-3)


def pad_temporal_backward(grad, t: int):
    extra = grad.shape[-3] - t
    g = grad[..., :t, :, :].copy()
    if extra:
        g[..., :extra, :, :] += grad[..., t:, :, :]
    return g


def topo_neighbors(topology, k_topo: int):
    """Neighbour sets from the diagonally boosted topology, shape (V, k_topo)."""
    return topk_neighbors(topology, k_topo, self_boost=True)


def tatf_aggregate(s_up, topology, k_topo: int):
    """S_bar[t, c, v] = mean over the k_topo selected sources u of S_up[t, c, u]."""
    v = s_up.shape[-1]
    if not 1 <= k_topo <= v:
        raise ContractError(f"k_topo={k_topo} must lie in [1, {v}]")
    sel = selection_matrix(topo_neighbors(topology, k_topo), v, np.float64)
    return (np.matmul(s_up, sel) / k_topo).astype(s_up.dtype)


def tatf_aggregate_backward(grad, topology, k_topo: int):
    v = grad.shape[-1]
    sel = selection_matrix(topo_neighbors(topology, k_topo), v, np.float64)
    return (np.matmul(grad, sel.T) / k_topo).astype(grad.dtype)


def fuse_level(d_up, s_agg, lam):
    if d_up.shape != s_agg.shape:
        raise DimensionError(f"detail {d_up.shape} and scaling {s_agg.shape} differ")
    return d_up + lam * s_agg


def resolve_levels(levels, t: int) -> int:
    if levels == "auto":
        return max(1, int(math.floor(math.log2(t))))
    levels = int(levels)
    if levels < 1 or 2 ** levels > padded_length(t):
        raise ConfigError(f"J={levels} levels need at least {2 ** levels} padded frames")
    return levels


class WaveletBranch(Module):
    """Spike downsampling, wavelet decomposition, topology fusion, pooling.

    ``forward`` takes the already spiked final backbone output and returns
    the pooled (..., C_L) feature.
    """

    def __init__(self, c_last, *, c_mid=None, groups=8, m=8, levels=3, k_topo=6, lam=0.1,
                 highpass="scaled", lif=LifParams(), rng=None, dtype=np.float32):
        c_mid = c_mid or max(c_last // 4, groups)
        if c_last % groups or c_mid % groups:
            raise ConfigError(f"groups={groups} must divide C_L={c_last} and C_mid={c_mid}")
        self.c_last, self.c_mid, self.m, self.levels, self.k_topo = c_last, c_mid, m, levels, k_topo
        self.bank = build_filter_bank(m, highpass)
        self.down_group = Conv(c_last, c_mid, groups=groups, bias=False, rng=rng, dtype=dtype)
        self.down_conv = Conv(c_mid, m, bias=False, rng=rng, dtype=dtype)
        self.down_bn = BatchNorm(m, dtype=dtype)
        self.lam = Parameter(np.array(lam, dtype=dtype), decay=False)
        self.up_conv = Conv(m, c_last, rng=rng, dtype=dtype)
        self.up_bn = BatchNorm(c_last, dtype=dtype)
        self.up_sn = LIF(lif, "mwtf.sn")
        self.record = False
        self.response = None
        self._cache = None

    def downsample(self, spikes):
        return self.down_bn.forward(self.down_conv.forward(self.down_group.forward(spikes)))

    def fuse(self, x_down, topology):
        """Pad, decompose, upsample, aggregate and sum the levels."""
        t = x_down.shape[-3]
        levels = resolve_levels(self.levels, t)
        k_topo = min(self.k_topo, x_down.shape[-1])
        dec = decompose(pad_temporal(x_down), self.bank, levels)
        lam = float(self.lam.value)
        total = linear_upsample(dec.scalings[-1], t)
        s_aggs = []
        for j in range(levels - 1):
            d_up = linear_upsample(dec.details[j], t)
            s_agg = tatf_aggregate(linear_upsample(dec.scalings[j], t), topology, k_topo)
            s_aggs.append(s_agg)
            total = total + fuse_level(d_up, s_agg, lam)
        self._cache_fuse = (t, levels, k_topo, [d.shape[-3] for d in dec.details], s_aggs, topology)
        return total

    def fuse_backward(self, grad):
        t, levels, k_topo, lengths, s_aggs, topology = self._cache_fuse
        lam = float(self.lam.value)
        g_details = [None] * levels
        g_scalings = [None] * levels
        g_scalings[-1] = linear_upsample_backward(grad, lengths[-1])
        g_lam = 0.0
        for j in range(levels - 1):
            g_details[j] = linear_upsample_backward(grad, lengths[j])
            g_lam += float(np.sum(grad * s_aggs[j], dtype=np.float64))
            g_sagg = tatf_aggregate_backward(grad * lam, topology, k_topo)
            g_scalings[j] = linear_upsample_backward(g_sagg, lengths[j])
        self.lam.accumulate(g_lam)
        g_padded = decompose_backward(g_details, g_scalings, self.bank)
        return pad_temporal_backward(g_padded, t).astype(grad.dtype)

    def forward(self, spikes, pa: Parameter):
        topology = topology_score(pa)
        x_down = self.downsample(spikes)
        agg = self.fuse(x_down, topology)
        out = self.up_sn.forward(self.up_bn.forward(self.up_conv.forward(agg)))
        if self.record:
            self.response = out.mean(axis=-2)
        self._cache = out.shape
        return out.mean(axis=(-3, -1))

    def backward(self, grad):
        shape = self._cache
        t, v = shape[-3], shape[-1]
        g_out = np.broadcast_to(grad[..., None, :, None] / (t * v), shape).astype(grad.dtype)
        g_agg = self.up_conv.backward(self.up_bn.backward(self.up_sn.backward(g_out)))
        g_down = self.fuse_backward(g_agg)
        return self.down_group.backward(self.down_conv.backward(self.down_bn.backward(g_down)))


def global_average_pool(x):
    return x.mean(axis=(-3, -1))


class Classifier(Module):
    """logits = FC(GAP(spikes) + beta * x_hat), with dropout on the fused vector."""

    def __init__(self, c_last, num_classes, *, beta=1.0, dropout=0.0, rng=None, dtype=np.float32):
        if num_classes < 1:
            raise ConfigError("need at least one class")
        self.c_last, self.num_classes, self.dropout = c_last, num_classes, dropout
        bound = 1.0 / math.sqrt(c_last)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.beta = Parameter(np.array(beta, dtype=dtype), decay=False)
        self.fc_weight = Parameter(rng.uniform(-bound, bound, (num_classes, c_last)).astype(dtype))
        self.fc_bias = Parameter(rng.uniform(-bound, bound, num_classes).astype(dtype))
        self.dropout_rng = np.random.default_rng(0)
        self._cache = None

    def forward(self, spikes, x_hat):
        pooled = global_average_pool(spikes)
        if pooled.shape[-1] != self.c_last or x_hat.shape[-1] != self.c_last:
            raise ConfigError(f"classifier expects {self.c_last} features")
        z = pooled + self.beta.value * x_hat
        mask = None
        if self.training and self.dropout > 0:
            keep = 1.0 - self.dropout
            mask = (self.dropout_rng.random(z.shape) < keep).astype(z.dtype) / keep
            z = z * mask
        self._cache = (spikes.shape, x_hat, z, mask)
        return z @ self.fc_weight.value.T + self.fc_bias.value

    def backward(self, grad):
        """Returns (grad_spikes, grad_x_hat)."""
        shape, x_hat, z, mask = self._cache
        self.fc_weight.accumulate(grad.reshape(-1, self.num_classes).T @ z.reshape(-1, self.c_last))
        self.fc_bias.accumulate(grad.reshape(-1, self.num_classes).sum(axis=0))
        gz = grad @ self.fc_weight.value
        if mask is not None:
            gz = gz * mask
        self.beta.accumulate(np.sum(gz * x_hat))
        t, v = shape[-3], shape[-1]
        g_spikes = np.broadcast_to(gz[..., None, :, None] / (t * v), shape).astype(gz.dtype)
        return g_spikes, gz * self.beta.value
