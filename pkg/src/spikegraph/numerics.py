"""Dense-tensor substrate: parameters, layer base class and primitive ops.

Activations are plain numpy arrays laid out ``(..., T, C, V)`` (frames,
channels, joints), optionally with leading batch axes. Spike tensors are
the same arrays restricted to {0, 1}. Every differentiable op has a
hand-written backward; there is no autodiff graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericalError

T_AXIS, C_AXIS, V_AXIS = -3, -2, -1


@dataclass(eq=False)
class Parameter:
    """A learnable array with its gradient accumulator.

    ``decay`` marks whether weight decay applies to it during training.
    """

    value: np.ndarray
    trainable: bool = True
    decay: bool = True
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def accumulate(self, g):
        self.grad = self.grad + np.asarray(g, dtype=self.grad.dtype).reshape(self.value.shape)


class ComplexPair(NamedTuple):
    real: np.ndarray
    imag: np.ndarray


class Module:
    """Base for layers holding Parameters, sub-modules and buffers."""

    training = True
    _buffers: tuple = ()

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "", _seen=None) -> Iterator[tuple[str, Parameter]]:
        """Parameters reachable from this module, each shared one reported once."""
        seen = set() if _seen is None else _seen
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield full, value
            else:
                yield from value.named_parameters(full + ".", seen)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.value.copy() for name, p in self.named_parameters()}
        state.update({name: np.array(b, copy=True) for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        buffers = {name for name, _ in self.named_buffers()}
        missing = (set(params) | buffers) - set(state)
        if missing:
            raise ConfigError(f"checkpoint lacks entries: {sorted(missing)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.value.shape:
                raise DimensionError(f"{name}: checkpoint shape {state[name].shape} != {p.value.shape}")
            p.value = np.array(state[name], dtype=p.value.dtype)
            p.zero_grad()
        for name in buffers:
            owner, _, attr = name.rpartition(".")
            mod = self
            for part in owner.split(".") if owner else []:
                mod = mod[int(part)] if isinstance(mod, (list, tuple)) else getattr(mod, part)
            current = getattr(mod, attr)
            setattr(mod, attr, np.array(state[name], dtype=current.dtype))


# ---------------------------------------------------------------------------
# validation helpers


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")
    return x


def check_spikes(x: np.ndarray) -> np.ndarray:
    if not np.all((x == 0) | (x == 1)):
        raise ContractError("spike tensor holds values outside {0, 1}")
    return x


def as_dense(x, dtype=np.float32) -> np.ndarray:
    """Validate a (T, C, V) or batched activation array."""
    x = np.asarray(x, dtype=dtype)
    if x.ndim < 3 or min(x.shape[-3:]) < 1:
        raise DimensionError(f"expected (..., T, C, V) with all dims >= 1, got {x.shape}")
    return check_finite(x)


# ---------------------------------------------------------------------------
# pointwise convolution


def pointwise_conv(x, weight, bias=None, groups: int = 1):
    """Channel mixing at every (t, v): out[c] = sum_i weight[c, i] x[i] + bias[c]."""
    c_out, c_in_g = weight.shape
    c_in = x.shape[C_AXIS]
    if c_in != c_in_g * groups or c_out % groups:
        raise DimensionError(f"conv expects {c_in_g * groups} input channels, got {c_in}")
    if groups == 1:
        out = np.matmul(weight, x)
    else:
        lead = x.shape[:-2]
        xg = x.reshape(*lead, groups, c_in_g, x.shape[-1])
        wg = weight.reshape(groups, c_out // groups, c_in_g)
        out = np.matmul(wg, xg).reshape(*lead, c_out, x.shape[-1])
    if bias is not None:
        out = out + bias[:, None]
    return out


def pointwise_conv_backward(x, weight, grad, groups: int = 1):
    """Returns (grad_x, grad_weight, grad_bias)."""
    c_out, c_in_g = weight.shape
    v = x.shape[-1]
    gb = grad.reshape(-1, c_out, v).sum(axis=(0, 2))
    if groups == 1:
        gx = np.matmul(weight.T, grad)
        gw = np.tensordot(grad.reshape(-1, c_out, v), x.reshape(-1, c_in_g, v), axes=([0, 2], [0, 2]))
        return gx, gw, gb
    co_g = c_out // groups
    xg = x.reshape(-1, groups, c_in_g, v)
    gg = grad.reshape(-1, groups, co_g, v)
    wg = weight.reshape(groups, co_g, c_in_g)
    gx = np.matmul(np.swapaxes(wg, -1, -2), gg).reshape(x.shape)
    gw = np.stack([np.tensordot(gg[:, g], xg[:, g], axes=([0, 2], [0, 2])) for g in range(groups)])
    return gx, gw.reshape(c_out, c_in_g), gb


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv(Module):
    """Pointwise (kernel-1) convolution along the channel axis."""

    def __init__(self, c_in, c_out, *, groups=1, bias=True, rng=None, dtype=np.float32):
        if c_in % groups or c_out % groups:
            raise ConfigError(f"groups={groups} must divide {c_in} and {c_out}")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = c_in // groups
        bound = 1.0 / math.sqrt(fan_in)
        self.c_in, self.c_out, self.groups = c_in, c_out, groups
        self.weight = Parameter(_uniform(rng, (c_out, fan_in), bound, dtype))
        self.bias = Parameter(_uniform(rng, (c_out,), bound, dtype)) if bias else None
        self._cache = None

    def forward(self, x):
        self._cache = x
        b = self.bias.value if self.bias is not None else None
        return pointwise_conv(x, self.weight.value, b, self.groups)

    def backward(self, grad):
        gx, gw, gb = pointwise_conv_backward(self._cache, self.weight.value, grad, self.groups)
        self.weight.accumulate(gw)
        if self.bias is not None:
            self.bias.accumulate(gb)
        return gx

    def macs(self, t, v):
        return self.c_in // self.groups * self.c_out * t * v


# ---------------------------------------------------------------------------
# batch normalisation


def channel_sum(x):
    """Sum over every axis but the channel axis (-2); contiguous-friendly."""
    return x.reshape(-1, x.shape[-2], x.shape[-1]).sum(axis=0).sum(axis=-1)


def batch_norm(x, gamma, beta, mean, var, eps=1e-5):
    """Eval-mode normalisation with a variance floor of ``eps``."""
    if eps <= 0:
        raise ConfigError("batch-norm eps must be positive")
    std = np.sqrt(np.maximum(var, eps))
    scale = (gamma / std)[:, None]
    return (x - mean[:, None]) * scale + beta[:, None]


class BatchNorm(Module):
    """Per-channel normalisation over every axis but the channel axis.

    The variance is floored at ``eps`` instead of being offset by it, so the
    identity configuration (unit variance, zero mean) is an exact identity.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, *, eps=1e-5, momentum=0.1, dtype=np.float32):
        if eps <= 0:
            raise ConfigError("batch-norm eps must be positive")
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.gamma = Parameter(np.ones(channels, dtype=dtype), decay=False)
        self.beta = Parameter(np.zeros(channels, dtype=dtype), decay=False)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x):
        if x.shape[C_AXIS] != self.channels:
            raise DimensionError(f"batch norm over {self.channels} channels got {x.shape[C_AXIS]}")
        g, b = self.gamma.value, self.beta.value
        if not self.training:
            std = np.sqrt(np.maximum(self.running_var, self.eps))
            xhat = (x - self.running_mean[:, None]) / std[:, None]
            self._cache = ("eval", xhat, std, None)
            return xhat * g[:, None] + b[:, None]
        n = x.size // self.channels
        mean = channel_sum(x) / n
        centred = x - mean[:, None]
        var = channel_sum(np.square(centred)) / n
        floored = var < self.eps
        std = np.sqrt(np.maximum(var, self.eps))
        centred *= (1.0 / std)[:, None]
        if floored.any():
            # the mean of a constant channel can miss it by rounding; pin it to zero
            flat = np.moveaxis(x, -2, 0).reshape(self.channels, -1)
            constant = floored & (flat.max(axis=1) == flat.min(axis=1))
            centred[..., constant, :] = 0.0
        xhat = centred
        m = self.momentum
        unbiased = var * n / max(n - 1, 1)
        self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(self.running_mean.dtype)
        self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
        self._cache = ("train", xhat, std, floored)
        out = xhat * g[:, None]
        out += b[:, None]
        return out

    def backward(self, grad):
        mode, xhat, std, floored = self._cache
        g_sum = channel_sum(grad)
        gx_sum = channel_sum(grad * xhat)
        self.gamma.accumulate(gx_sum)
        self.beta.accumulate(g_sum)
        gamma = self.gamma.value
        gxhat = grad * gamma[:, None]
        if mode == "eval":
            return gxhat / std[:, None]
        n = grad.size // self.channels
        mean_g = g_sum * gamma / n
        mean_gx = gx_sum * gamma / n
        # a floored variance is a constant, so only the mean path carries gradient
        mean_gx = np.where(floored, 0.0, mean_gx).astype(grad.dtype)
        gxhat -= mean_g[:, None]
        gxhat -= xhat * mean_gx[:, None]
        gxhat *= (1.0 / std)[:, None]
        return gxhat


# ---------------------------------------------------------------------------
# shifts, splits, interpolation


def cyclic_shift(v, direction: int, axis: int = -1):
    """direction +1 moves every element one slot right (wrapping), -1 left."""
    if direction not in (1, -1):
        raise ContractError("shift direction must be +1 or -1")
    return np.roll(v, direction, axis=axis)


def even_odd_split(x, axis: int = T_AXIS):
    if x.shape[axis] % 2:
        raise ContractError(f"even/odd split needs an even frame count, got {x.shape[axis]}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(0, None, 2)
    even = x[tuple(idx)]
    idx[axis] = slice(1, None, 2)
    return even, x[tuple(idx)]


def interleave(even, odd, axis: int = T_AXIS):
    """Inverse of :func:`even_odd_split`."""
    axis = axis % even.ndim
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(even.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def upsample_matrix(t_in: int, t_out: int) -> np.ndarray:
    """(t_out, t_in) endpoint-aligned linear interpolation weights."""
    if t_in < 1 or t_out < t_in:
        raise ContractError(f"cannot upsample {t_in} frames to {t_out}")
    w = np.zeros((t_out, t_in))
    if t_in == 1:
        w[:, 0] = 1.0
        return w
    pos = np.arange(t_out) * (t_in - 1) / (t_out - 1) if t_out > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(int), t_in - 2)
    frac = pos - lo
    w[np.arange(t_out), lo] = 1.0 - frac
    w[np.arange(t_out), lo + 1] += frac
    return w


def _apply_time(matrix, x):
    """Contract ``matrix`` (t_out, t_in) against the frame axis of x."""
    out = np.tensordot(matrix, x, axes=([1], [x.ndim - 3]))
    return np.moveaxis(out, 0, x.ndim - 3)


def linear_upsample(x, t_target: int):
    w = upsample_matrix(x.shape[T_AXIS], t_target)
    return _apply_time(w.astype(x.dtype), x)


def linear_upsample_backward(grad, t_in: int):
    w = upsample_matrix(t_in, grad.shape[T_AXIS])
    return _apply_time(w.T.astype(grad.dtype), grad)


# ---------------------------------------------------------------------------
# joint-axis DFT


def dft_matrices(v: int) -> tuple[np.ndarray, np.ndarray]:
    """Float64 (V, V) maps with X_re = x @ cos_m and X_im = x @ sin_m."""
    kv = np.outer(np.arange(v), np.arange(v)) % v
    angle = 2.0 * np.pi * kv / v
    return np.cos(angle), -np.sin(angle)


def dft_joints(x) -> ComplexPair:
    """X[k] = sum_v x[v] exp(-2 pi i k v / V), by direct summation in float64."""
    cos_m, sin_m = dft_matrices(x.shape[V_AXIS])
    x64 = np.asarray(x, dtype=np.float64)
    return ComplexPair((x64 @ cos_m).astype(x.dtype), (x64 @ sin_m).astype(x.dtype))


def dft_joints_backward(grad_real, grad_imag):
    cos_m, sin_m = dft_matrices(grad_real.shape[V_AXIS])
    g = np.asarray(grad_real, np.float64) @ cos_m.T + np.asarray(grad_imag, np.float64) @ sin_m.T
    return g.astype(grad_real.dtype)


# ---------------------------------------------------------------------------
# gradient verification


def _flatten(out) -> list[np.ndarray]:
    if isinstance(out, np.ndarray):
        return [out]
    return [np.asarray(o) for o in out]


def finite_diff_check(
    forward: Callable,
    backward: Callable,
    inputs: Sequence[np.ndarray],
    eps: float = 1e-6,
    params: Sequence[Parameter] = (),
    seed: int = 0,
) -> float:
    """Worst relative error between ``backward`` and central differences.

    ``forward(*inputs)`` returns an array or a tuple of arrays;
    ``backward(grads)`` receives matching upstream gradients (a single array
    or a tuple) and returns the gradient of each input (single array or
    tuple). Gradients of ``params`` are read from ``Parameter.grad``. Work is
    done in float64; the error per tensor is max|analytic - numeric| scaled by
    the larger of the two max magnitudes.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    rng = np.random.default_rng(seed)
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    for p in params:
        p.value = p.value.astype(np.float64)
        p.grad = np.zeros_like(p.value)

    outs = _flatten(forward(*inputs))
    for o in outs:
        check_finite(o, "forward output")
    weights = [rng.standard_normal(o.shape) for o in outs]

    def objective():
        return float(sum(np.sum(w * o) for w, o in zip(weights, _flatten(forward(*inputs)))))

    forward(*inputs)
    upstream = weights[0] if len(weights) == 1 else tuple(weights)
    grads = backward(upstream)
    if isinstance(grads, np.ndarray) or grads is None:
        grads = [grads]
    analytic = [g for g in grads][: len(inputs)] + [p.grad.copy() for p in params]

    targets = inputs + [p.value for p in params]
    worst = 0.0
    for arr, ana in zip(targets, analytic):
        if ana is None:
            continue
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = objective()
            flat[i] = orig - eps
            down = objective()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * eps)
        scale = max(np.max(np.abs(ana)), np.max(np.abs(num)), 1e-12)
        worst = max(worst, float(np.max(np.abs(ana - num)) / scale))
    return worst
