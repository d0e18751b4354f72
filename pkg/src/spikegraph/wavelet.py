"""Legendre multiwavelet filter bank and iterative even/odd decomposition."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .numerics import even_odd_split, interleave

SQRT2 = math.sqrt(2.0)


def _legendre(m: int, x):
    x = np.asarray(x, dtype=np.float64)
    p_prev, p = np.ones_like(x), x.copy()
    if m == 0:
        return p_prev
    for n in range(1, m):
        p_prev, p = p, ((2 * n + 1) * x * p - n * p_prev) / (n + 1)
    return p


def legendre_eval(m: int, x):
    """P_m(x) via (n+1) P_{n+1} = (2n+1) x P_n - n P_{n-1}."""
    if m < 0:
        raise ContractError("polynomial order must be non-negative")
    if np.any(np.abs(np.asarray(x)) > 1):
        warnings.warn("Legendre polynomial evaluated outside [-1, 1]", RuntimeWarning, stacklevel=2)
    out = _legendre(m, x)
    return float(out) if np.ndim(out) == 0 else out


def _orthonormalize_rows(a):
    """Modified Gram-Schmidt (two passes), rows in order, leading entry positive."""
    q = np.array(a, dtype=np.float64)
    for i in range(q.shape[0]):
        for _ in range(2):
            for j in range(i):
                q[i] -= (q[j] @ q[i]) * q[j]
        q[i] /= np.linalg.norm(q[i])
        lead = q[i][np.flatnonzero(np.abs(q[i]) > 1e-12)[0]]
        if lead < 0:
            q[i] = -q[i]
    return q


def _sign_fix(rows):
    rows = rows.copy()
    for i, row in enumerate(rows):
        if row[np.flatnonzero(np.abs(row) > 1e-12)[0]] < 0:
            rows[i] = -row
    return rows


@dataclass(frozen=True)
class FilterBank:
    lam0: np.ndarray
    lam1: np.ndarray
    gam0: np.ndarray
    gam1: np.ndarray
    highpass: str = "scaled"

    @property
    def M(self) -> int:
        return self.lam0.shape[0]


def build_filter_bank(m: int, highpass: str = "scaled") -> FilterBank:
    """Sample the shifted Legendre low-pass filters at u_t = (t + 0.5) / M.

    Rows are re-orthonormalised because discrete sampling breaks exact
    orthogonality. ``highpass="scaled"`` sets each high-pass filter to
    sqrt(2) times its low-pass partner; ``"mra"`` instead completes
    [lam0 lam1] / sqrt(2) to an orthogonal 2M x 2M matrix.
    """
    if m < 1:
        raise ContractError("filter bank needs at least one coefficient")
    u = (np.arange(m) + 0.5) / m
    norm = np.sqrt(2 * np.arange(m) + 1.0)[:, None]
    lam0 = _orthonormalize_rows(norm * np.stack([_legendre(k, 2 * u - 1) for k in range(m)]))
    lam1 = _orthonormalize_rows(norm * np.stack([_legendre(k, 2 * u) for k in range(m)]))
    if highpass == "scaled":
        gam0, gam1 = SQRT2 * lam0, SQRT2 * lam1
    elif highpass == "mra":
        low = np.hstack([lam0, lam1]) / SQRT2
        _, _, vt = np.linalg.svd(low)
        comp = _sign_fix(_orthonormalize_rows(vt[m:]))
        gam0, gam1 = SQRT2 * comp[:, :m], SQRT2 * comp[:, m:]
    else:
        raise ContractError(f"unknown high-pass construction {highpass!r}")
    return FilterBank(lam0, lam1, gam0, gam1, highpass)


@dataclass
class Decomposition:
    details: list
    scalings: list


def _channel_matmul(filt, x):
    return np.matmul(filt, x.astype(np.float64))


def decompose(x, bank: FilterBank, levels: int) -> Decomposition:
    """J levels of D = G0 x_even + G1 x_odd, S = L0 x_even + L1 x_odd on the channel axis.

    Each level halves the frame count and feeds S to the next level.
    """
    t_len = x.shape[-3]
    if levels < 1 or t_len % (2 ** levels):
        raise ContractError(f"{t_len} frames cannot be halved {levels} times")
    if x.shape[-2] != bank.M:
        raise ContractError(f"input has {x.shape[-2]} channels, filter bank {bank.M}")
    details, scalings = [], []
    cur = x
    for _ in range(levels):
        even, odd = even_odd_split(cur)
        s = (_channel_matmul(bank.lam0, even) + _channel_matmul(bank.lam1, odd)).astype(x.dtype)
        if bank.highpass == "scaled":
            # scale the stored S so the relation holds exactly in the storage dtype
            d = SQRT2 * s.astype(np.float64)
        else:
            d = _channel_matmul(bank.gam0, even) + _channel_matmul(bank.gam1, odd)
        details.append(d.astype(x.dtype))
        scalings.append(s)
        cur = s
    return Decomposition(details, scalings)


def decompose_backward(grad_details, grad_scalings, bank: FilterBank):
    """Gradient w.r.t. the decomposition input, given per-level gradients.

    Entries of the gradient lists may be ``None`` for unused outputs.
    """
    carry = None
    for gd, gs in zip(reversed(grad_details), reversed(grad_scalings)):
        ref = gd if gd is not None else gs if gs is not None else carry
        g_s = np.zeros(ref.shape) if gs is None else gs.astype(np.float64)
        if carry is not None:
            g_s = g_s + carry
        g_even = bank.lam0.T @ g_s
        g_odd = bank.lam1.T @ g_s
        if gd is not None:
            g_even = g_even + bank.gam0.T @ gd.astype(np.float64)
            g_odd = g_odd + bank.gam1.T @ gd.astype(np.float64)
        carry = interleave(g_even, g_odd)
    return carry
