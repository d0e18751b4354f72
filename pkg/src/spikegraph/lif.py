"""Leaky integrate-and-fire neurons with a rectangular surrogate gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import Module, check_finite


@dataclass(frozen=True)
class LifParams:
    tau: float = 2.0
    v_rest: float = 0.0
    r: float = 1.0
    v_th: float = 1.0
    surrogate_width: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("LIF tau must be positive")
        if self.v_th <= self.v_rest:
            raise ConfigError("LIF threshold must exceed the resting potential")
        if self.surrogate_width <= 0:
            raise ConfigError("surrogate width must be positive")


def _euler(membrane, current, params):
    charged = membrane + (-(membrane - params.v_rest) + params.r * current) / params.tau
    spikes = (charged >= params.v_th).astype(charged.dtype)
    new = np.where(spikes > 0, charged.dtype.type(params.v_rest), charged)
    return new, spikes, charged


def lif_step(membrane, current, params: LifParams = LifParams()):
    """One Euler step with unit dt and hard reset.

    Returns ``(new_membrane, spikes, charged)`` where ``charged`` is the
    pre-reset potential the threshold was compared against.
    """
    membrane = np.asarray(membrane, dtype=np.result_type(current, np.float32))
    current = np.asarray(current, dtype=membrane.dtype)
    if membrane.shape != current.shape:
        raise DimensionError(f"membrane {membrane.shape} vs input {current.shape}")
    check_finite(current, "LIF input")
    return _euler(membrane, current, params)


def lif_sequence(g, params: LifParams = LifParams(), return_trace: bool = False):
    """Fold :func:`lif_step` over the frame axis (-3) from a resting start."""
    g = np.asarray(g)
    if g.dtype.kind != "f":
        g = g.astype(np.float32)
    if g.ndim < 3 or g.shape[-3] < 1:
        raise DimensionError(f"expected (..., T, C, V) input, got {g.shape}")
    check_finite(g, "LIF input")
    membrane = np.full(g.shape[:-3] + g.shape[-2:], params.v_rest, dtype=g.dtype)
    spikes = np.empty_like(g)
    charged = np.empty_like(g)
    for t in range(g.shape[-3]):
        membrane, spikes[..., t, :, :], charged[..., t, :, :] = _euler(membrane, g[..., t, :, :], params)
    if return_trace:
        return spikes, charged
    return spikes


def surrogate_grad(u_minus_th, width: float = 1.0):
    """Rectangular window of height 1/width centred on the threshold."""
    if width <= 0:
        raise ConfigError("surrogate width must be positive")
    u = np.asarray(u_minus_th)
    dtype = u.dtype if u.dtype.kind == "f" else np.float64
    mask = (np.abs(u) <= width / 2).astype(dtype)
    return mask if width == 1.0 else mask * dtype.type(1.0 / width)


def lif_sequence_backward(grad_spikes, spikes, charged, params: LifParams = LifParams()):
    """Backprop through time with the reset branch detached.

    The carried potential after step t is ``charged_t * (1 - s_t) + v_rest s_t``
    with ``s_t`` treated as a constant, so d(carry)/d(charged) = 1 - s_t.
    """
    decay = 1.0 - 1.0 / params.tau
    direct = surrogate_grad(charged - params.v_th, params.surrogate_width).astype(grad_spikes.dtype, copy=False)
    direct *= grad_spikes
    keep = 1.0 - spikes
    g_charged = np.empty_like(grad_spikes)
    carry = np.zeros(grad_spikes.shape[:-3] + grad_spikes.shape[-2:], dtype=grad_spikes.dtype)
    for t in range(grad_spikes.shape[-3] - 1, -1, -1):
        g_charged[..., t, :, :] = direct[..., t, :, :] + carry * keep[..., t, :, :]
        carry = g_charged[..., t, :, :] * decay
    g_charged *= g_charged.dtype.type(params.r / params.tau)
    return g_charged


class LIF(Module):
    """Spiking stage; optionally records its firing rate on every forward."""

    def __init__(self, params: LifParams = LifParams(), name: str = "sn"):
        self.params = params
        self.name = name
        self.last_rate = None
        self._cache = None

    def forward(self, g):
        spikes, charged = lif_sequence(g, self.params, return_trace=True)
        self._cache = (spikes, charged)
        self.last_rate = float(spikes.mean())
        return spikes

    def backward(self, grad):
        spikes, charged = self._cache
        return lif_sequence_backward(grad, spikes, charged, self.params)
