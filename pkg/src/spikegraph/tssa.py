"""Topology-shift self-attention.

Each target joint aggregates the value vectors of its top-k source joints,
ranked by a blend of the learned topology score and spiking Q/K
similarity. Neighbour r's vector is cyclically shifted right for even r
and left for odd r before summation, so aggregation needs only additions.

Neighbour selection is not differentiable. Gradients reach the value path
through the fixed selection; the score path (alpha, PA, Q and K
projections) receives no gradient from this block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .graph import selection_matrix, topk_neighbors, topology_score
from .lif import LIF, LifParams
from .numerics import BatchNorm, Conv, Module, Parameter, cyclic_shift


@dataclass
class OpCounter:
    adds: int = 0


def split_heads(x, heads: int):
    """(..., D, V) -> (..., H, d, V)."""
    d_total = x.shape[-2]
    if d_total % heads:
        raise ConfigError(f"{d_total} channels do not split into {heads} heads")
    return x.reshape(x.shape[:-2] + (heads, d_total // heads, x.shape[-1]))


def merge_heads(x):
    return x.reshape(x.shape[:-3] + (x.shape[-3] * x.shape[-2], x.shape[-1]))


def similarity(q, k, scale: bool = True):
    """Head-averaged joint similarity. q, k: (..., H, d, V) -> (..., V, V).

    Entry [i, j] is q_i . k_j, divided by d when ``scale`` is set.
    """
    h, d = q.shape[-3], q.shape[-2]
    dots = np.matmul(np.swapaxes(q, -1, -2).astype(np.float64), k.astype(np.float64))
    out = dots.mean(axis=-3)
    return out / d if scale else out


def fuse_scores(topology, sim, alpha):
    return alpha * topology + (1.0 - alpha) * sim


def shift_aggregate(values, neighbors, counter: OpCounter | None = None):
    """Reference loop implementation of the shifted neighbour sum.

    values: (T, H, d, V); neighbors: (T, V, k) source indices per target.
    Returns (T, H, d, V). Every accumulated d-vector adds d to ``counter``
    per head.
    """
    t_len, heads, d, v = values.shape
    if np.any(neighbors >= v) or np.any(neighbors < 0):
        raise ContractError("neighbour index out of range")
    out = np.zeros_like(values)
    for t in range(t_len):
        for j in range(v):
            for r, src in enumerate(neighbors[t, j]):
                shifted = cyclic_shift(values[t, :, :, src], 1 if r % 2 == 0 else -1, axis=-1)
                out[t, :, :, j] += shifted
                if counter is not None:
                    counter.adds += heads * d
    return out


def shift_aggregate_fast(values, sel_even, sel_odd):
    """Vectorised form using parity-split selection count matrices (..., V, V)."""
    even = np.matmul(values, sel_even[..., None, :, :])
    odd = np.matmul(values, sel_odd[..., None, :, :])
    return np.roll(even, 1, axis=-2) + np.roll(odd, -1, axis=-2)


class TopologyShiftAttention(Module):
    def __init__(self, channels, *, heads=4, k=8, alpha=0.7, scale_similarity=True, lif=LifParams(),
                 rng=None, dtype=np.float32, name="tssa"):
        if channels % heads:
            raise ConfigError(f"{channels} channels do not split into {heads} heads")
        self.channels, self.heads, self.k, self.name = channels, heads, k, name
        self.scale_similarity = scale_similarity
        self.alpha = Parameter(np.array(alpha, dtype=dtype), decay=False)
        self.q_conv, self.k_conv, self.v_conv, self.o_conv = (
            Conv(channels, channels, rng=rng, dtype=dtype) for _ in range(4))
        self.q_bn, self.k_bn, self.v_bn, self.o_bn = (BatchNorm(channels, dtype=dtype) for _ in range(4))
        self.q_sn, self.k_sn, self.v_sn, self.o_sn = (
            LIF(lif, f"{name}.{p}_sn") for p in ("q", "k", "v", "o"))
        self.counter = OpCounter()
        self.record = False
        self.diagnostics = None
        self._cache = None

    def effective_k(self, v):
        return min(self.k, v)

    def project(self, x):
        q = self.q_sn.forward(self.q_bn.forward(self.q_conv.forward(x)))
        k = self.k_sn.forward(self.k_bn.forward(self.k_conv.forward(x)))
        v = self.v_sn.forward(self.v_bn.forward(self.v_conv.forward(x)))
        return split_heads(q, self.heads), split_heads(k, self.heads), split_heads(v, self.heads)

    def forward(self, x, pa: Parameter):
        v_joints = x.shape[-1]
        k = self.effective_k(v_joints)
        q, key, val = self.project(x)
        topo = topology_score(pa)
        sim = similarity(q, key, self.scale_similarity)
        scores = fuse_scores(topo, sim, float(self.alpha.value))
        neighbors = topk_neighbors(scores, k, self_boost=True)
        sel_even = selection_matrix(neighbors[..., 0::2], v_joints, x.dtype)
        sel_odd = selection_matrix(neighbors[..., 1::2], v_joints, x.dtype)
        agg = merge_heads(shift_aggregate_fast(val, sel_even, sel_odd))
        t_len = x.shape[-3]
        batch = int(np.prod(x.shape[:-3])) if x.ndim > 3 else 1
        self.counter.adds += batch * t_len * v_joints * k * self.channels
        if self.record:
            self.diagnostics = {"topology": topo, "similarity": sim, "scores": scores, "neighbors": neighbors}
        out = self.o_sn.forward(self.o_bn.forward(self.o_conv.forward(agg)))
        self._cache = (sel_even, sel_odd)
        return out + x

    def backward(self, grad):
        sel_even, sel_odd = self._cache
        g_agg = self.o_conv.backward(self.o_bn.backward(self.o_sn.backward(grad)))
        g_agg = split_heads(g_agg, self.heads)
        g_val = (np.matmul(np.roll(g_agg, -1, axis=-2), np.swapaxes(sel_even, -1, -2)[..., None, :, :])
                 + np.matmul(np.roll(g_agg, 1, axis=-2), np.swapaxes(sel_odd, -1, -2)[..., None, :, :]))
        g_val = merge_heads(g_val)
        gx = self.v_conv.backward(self.v_bn.backward(self.v_sn.backward(g_val)))
        return gx + grad
