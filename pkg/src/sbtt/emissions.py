"""Observation likelihoods: Gaussian, Poisson and zero-inflated gamma (ZIG).

All NLLs are full negative log-likelihoods (constants included).  The
masked aggregate :func:`emission_nll_grad` takes pre-activations and
returns the mean NLL over observed entries together with its analytic
gradient.

ZIG pre-activations are stacked on a leading axis of size 3 in the order
``(q, k, alpha)``:

    q     = sigmoid(a_q)                 probability of a nonzero event
    k     = scale_k * sigmoid(a_k)       gamma shape
    alpha = scale_alpha * sigmoid(a_a)   gamma scale

and a nonzero observation ``y`` is gamma distributed around ``loc``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln

from .tensorio import as_generator

__all__ = [
    "EPS",
    "EmissionKind",
    "ZigParams",
    "emission_mean",
    "emission_nll_grad",
    "gaussian_nll",
    "n_preacts",
    "poisson_nll",
    "scaled_sigmoid",
    "zig_mean",
    "zig_nll",
    "zig_sample",
]

EPS = 1e-6
# nonzero events sitting exactly on loc would give log(0) in the gamma term
ZIG_X_FLOOR = 1e-8
LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class EmissionKind:
    name: str = "poisson"
    sd: float = 1.0

    def __post_init__(self):
        if self.name not in ("gaussian", "poisson", "zig"):
            raise ValueError(f"unknown emission kind {self.name!r}")
        if self.name == "gaussian" and not self.sd > 0:
            raise ValueError("gaussian emission needs sd > 0")


def n_preacts(kind: EmissionKind | str) -> int:
    name = kind.name if isinstance(kind, EmissionKind) else kind
    return 3 if name == "zig" else 1


@dataclass(frozen=True)
class ZigParams:
    q: float
    k: float
    alpha: float
    loc: float = 0.0

    def __post_init__(self):
        if not (np.all(np.asarray(self.k) > 0) and np.all(np.asarray(self.alpha) > 0)):
            raise ValueError("k and alpha must be positive")
        if np.any(np.asarray(self.loc) < 0):
            raise ValueError("loc must be non-negative")

    @property
    def q_clamped(self):
        return np.clip(self.q, EPS, 1 - EPS)


def scaled_sigmoid(x, scale=1.0):
    if np.any(np.asarray(scale) <= 0):
        raise ValueError("scale must be positive")
    return scale * expit(x)


def poisson_nll(rate, count):
    rate = np.asarray(rate, dtype=np.float64)
    count = np.asarray(count, dtype=np.float64)
    if np.any(rate <= 0):
        raise ValueError("Poisson rate must be positive")
    out = rate - count * np.log(rate) + gammaln(count + 1.0)
    return float(out) if out.ndim == 0 else out


def gaussian_nll(mean, y, sd):
    z = (np.asarray(y, dtype=np.float64) - mean) / sd
    out = 0.5 * z * z + np.log(sd) + 0.5 * LOG_2PI
    return float(out) if np.ndim(out) == 0 else out


def _zig_terms(q, k, alpha, loc, y):
    """Per-entry NLL; also returns the pieces the gradient needs."""
    nonzero = y > 0
    qc = np.clip(q, EPS, 1 - EPS)
    x = np.where(nonzero, np.maximum(y - loc, ZIG_X_FLOOR), 1.0)
    log_x = np.log(x)
    gamma_nll = -(k - 1.0) * log_x + x / alpha + gammaln(k) + k * np.log(alpha)
    nll = np.where(nonzero, -np.log(qc) + gamma_nll, -np.log1p(-qc))
    return nll, nonzero, x, log_x


def zig_nll(p: ZigParams, y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("ZIG observations must be non-negative")
    if np.any((y > 0) & (y < p.loc)):
        raise ValueError("nonzero observation below loc (minimum event size)")
    nll = _zig_terms(np.asarray(p.q, float), p.k, p.alpha, p.loc, y)[0]
    return float(nll) if nll.ndim == 0 else nll


def zig_mean(p: ZigParams):
    return p.q * (p.k * p.alpha + p.loc)


def zig_sample(p: ZigParams, rng, size=None):
    gen = as_generator(rng)
    nonzero = gen.random(size) < p.q_clamped
    draw = p.loc + gen.gamma(p.k, p.alpha, size=size)
    return np.where(nonzero, draw, 0.0)


def _zig_params_from_preacts(pre, log_scales):
    """``pre`` is ``[3, ...]``; ``log_scales`` broadcasts as ``[2, N]``."""
    sq, sk, sa = expit(pre[0]), expit(pre[1]), expit(pre[2])
    scale_k, scale_a = np.exp(log_scales[0]), np.exp(log_scales[1])
    return sq, sk, sa, sq, scale_k * sk, scale_a * sa


def emission_mean(kind: EmissionKind, pre, loc=0.0, log_scales=None):
    """Expected observation for each entry (rates for Poisson)."""
    if kind.name == "poisson":
        return np.exp(pre[0])
    if kind.name == "gaussian":
        return pre[0].copy()
    *_, q, k, alpha = _zig_params_from_preacts(pre, log_scales)
    return zig_mean(ZigParams(q, k, alpha, loc))


def emission_nll_grad(kind: EmissionKind, pre, y, mask=None, loc=0.0, log_scales=None):
    """Mean NLL over observed entries and its gradient.

    ``pre`` has shape ``[P, ...]`` (``P`` from :func:`n_preacts`) and ``y``,
    ``mask`` and ``loc`` broadcast against ``pre[0]``.  Returns
    ``(nll, d_pre, d_log_scales)``; ``d_log_scales`` is ``None`` unless the
    kind is ZIG.  ``mask=None`` averages over every entry.
    """
    pre = np.asarray(pre, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mask is None:
        weight = np.full(pre.shape[1:], 1.0 / max(np.prod(pre.shape[1:]), 1))
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), pre.shape[1:])
        count = int(mask.sum())
        weight = mask / count if count else np.zeros(mask.shape)
    observed = weight > 0
    d_pre = np.zeros_like(pre)
    d_scales = None

    if kind.name == "poisson":
        a = pre[0]
        rate = np.exp(a)
        nll = rate - y * a + gammaln(y + 1.0)
        d_pre[0] = weight * (rate - y)
    elif kind.name == "gaussian":
        z = (pre[0] - y) / kind.sd
        nll = 0.5 * z * z + np.log(kind.sd) + 0.5 * LOG_2PI
        d_pre[0] = weight * z / kind.sd
    else:
        if log_scales is None:
            raise ValueError("ZIG emission needs per-channel log scales")
        log_scales = np.asarray(log_scales, dtype=np.float64)
        sq, sk, sa, q, k, alpha = _zig_params_from_preacts(pre, log_scales)
        y_obs = np.where(observed, y, 0.0)
        nll, nonzero, x, log_x = _zig_terms(q, k, alpha, loc, y_obs)
        inside = (q > EPS) & (q < 1 - EPS)
        dq_pre = np.where(nonzero, -(1.0 - sq), sq) * inside
        dk = np.where(nonzero, -log_x + digamma(k) + np.log(alpha), 0.0)
        dalpha = np.where(nonzero, -x / alpha**2 + k / alpha, 0.0)
        gk = weight * dk * k  # d nll / d log(scale_k) before summing
        ga = weight * dalpha * alpha
        d_pre[0] = weight * dq_pre
        d_pre[1] = gk * (1.0 - sk)
        d_pre[2] = ga * (1.0 - sa)
        d_scales = np.stack([_reduce_to(gk, log_scales.shape[1:]), _reduce_to(ga, log_scales.shape[1:])])
    total = float(np.sum(np.where(observed, nll, 0.0) * weight))
    return total, d_pre, d_scales


def _reduce_to(arr, shape):
    """Sum ``arr`` down to ``shape`` (trailing-axis broadcasting)."""
    lead = arr.ndim - len(shape)
    out = arr.sum(axis=tuple(range(lead))) if lead > 0 else arr
    for ax, n in enumerate(shape):
        if n == 1 and out.shape[ax] != 1:
            out = out.sum(axis=ax, keepdims=True)
    return out
