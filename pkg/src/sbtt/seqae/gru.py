"""Batched two-gate (reset/update) GRU with an explicit backward pass.

Weights are packed column-wise in the gate order ``[reset | update | candidate]``::

    r  = sigmoid(x W_r + h U_r + b_r)
    u  = sigmoid(x W_u + h U_u + b_u)
    c  = tanh(x W_c + (r * h) U_c + b_c)
    h' = u * h + (1 - u) * c
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def init_gru(n_in: int, n_hidden: int, gen: np.random.Generator, prefix: str) -> dict:
    """Scaled-normal input/recurrent weights; update-gate bias starts at 1 (remember)."""
    b = np.zeros(3 * n_hidden)
    b[n_hidden : 2 * n_hidden] = 1.0
    params = {
        f"{prefix}.U": gen.standard_normal((n_hidden, 3 * n_hidden)) / np.sqrt(n_hidden),
        f"{prefix}.b": b,
    }
    if n_in:
        params[f"{prefix}.W"] = gen.standard_normal((n_in, 3 * n_hidden)) / np.sqrt(n_in)
    return params


def gru_forward(W, U, b, xs, h0):
    """Run over ``xs [B, T, n_in]``; an input-free cell takes ``n_in == 0``.

    Returns ``(hs [B, T, H], cache)`` where ``hs[:, t]`` is the state after
    consuming step ``t``.
    """
    B, H = h0.shape
    T = xs.shape[1]
    if W is not None and xs.shape[2]:
        xw = xs @ W + b
    else:
        xw = np.broadcast_to(b, (B, T, 3 * H))
    U_ru, U_c = U[:, : 2 * H], U[:, 2 * H :]
    hs = np.empty((B, T, H))
    rs = np.empty((B, T, H))
    us = np.empty((B, T, H))
    cs = np.empty((B, T, H))
    h = h0
    for t in range(T):
        ru = expit(xw[:, t, : 2 * H] + h @ U_ru)
        r, u = ru[:, :H], ru[:, H:]
        c = np.tanh(xw[:, t, 2 * H :] + (r * h) @ U_c)
        h = u * h + (1.0 - u) * c
        hs[:, t], rs[:, t], us[:, t], cs[:, t] = h, r, u, c
    return hs, (xs, h0, hs, rs, us, cs)


def gru_backward(W, U, cache, d_hs):
    """Gradients given ``d_hs [B, T, H]`` (loss gradient w.r.t. every output state).

    Returns ``(dW, dU, db, dxs, dh0)``; ``dW`` and ``dxs`` are ``None`` for an
    input-free cell.
    """
    xs, h0, hs, rs, us, cs = cache
    B, T, H = hs.shape
    U_c = U[:, 2 * H :]
    U_ru_T = U[:, : 2 * H].T
    U_c_T = U_c.T
    da = np.empty((B, T, 3 * H))
    dU_ru = np.zeros((H, 2 * H))
    dU_c = np.zeros((H, H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev = hs[:, t - 1] if t else h0
        r, u, c = rs[:, t], us[:, t], cs[:, t]
        dh = d_hs[:, t] + dh_next
        da_u = dh * (h_prev - c) * u * (1.0 - u)
        da_c = dh * (1.0 - u) * (1.0 - c * c)
        d_rh = da_c @ U_c_T
        da_r = d_rh * h_prev * r * (1.0 - r)
        da_ru = np.concatenate([da_r, da_u], axis=1)
        dh_next = dh * u + d_rh * r + da_ru @ U_ru_T
        dU_ru += h_prev.T @ da_ru
        dU_c += (r * h_prev).T @ da_c
        da[:, t, : 2 * H] = da_ru
        da[:, t, 2 * H :] = da_c
    dU = np.concatenate([dU_ru, dU_c], axis=1)
    db = da.sum(axis=(0, 1))
    if W is not None and xs.shape[2]:
        dW = np.einsum("bti,btj->ij", xs, da)
        dxs = da @ W.T
    else:
        dW, dxs = None, None
    return dW, dU, db, dxs, dh_next
