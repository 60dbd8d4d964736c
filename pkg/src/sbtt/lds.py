"""Linear dynamical system: simulation and selective BPTT training.

Model::

    x[t+1] = A x[t] + w[t]
    y[t]   = H x[t] + z[t]

The loss for one trial is ``(1/T) * sum over observed (t, i) of
0.5 * (o[t, i] - y[t, i])**2`` with ``o[t] = H x[t]``.  The normalisation
stays ``1/T`` no matter how many entries are observed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tensorio import as_generator

log = logging.getLogger(__name__)

__all__ = [
    "LdsDivergedError",
    "LdsGradients",
    "LdsNoiseConfig",
    "LdsParams",
    "bptt_backward",
    "lds_forward",
    "lds_simulate",
    "masked_sse_loss",
    "predictive_mse",
    "sbtt_backward",
    "train_lds",
]


class LdsDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LdsParams:
    A: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        H = np.asarray(self.H, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if H.ndim != 2 or H.shape[1] != A.shape[0]:
            raise ValueError("H must be [N, D] with D matching A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "H", H)

    @property
    def D(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.H.shape[0]

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))


@dataclass(frozen=True)
class LdsNoiseConfig:
    process_sd: float = 0.0
    observation_sd: float = 0.0

    def __post_init__(self):
        if self.process_sd < 0 or self.observation_sd < 0:
            raise ValueError("noise standard deviations must be non-negative")


@dataclass(frozen=True)
class LdsGradients:
    dA: np.ndarray
    dH: np.ndarray
    dx0: np.ndarray | None = None


def lds_simulate(params: LdsParams, noise: LdsNoiseConfig, x0, T: int, rng):
    """Noisy rollout; returns ``(states [T, D], observations [T, N])``."""
    x0 = np.asarray(x0, dtype=np.float64)
    if T < 1:
        raise ValueError("T must be >= 1")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if params.spectral_radius() > 1 + 1e-12:
        log.warning("simulating an unstable system (spectral radius %.3f)", params.spectral_radius())
    gen = as_generator(rng)
    states = np.empty((T, params.D))
    states[0] = x0
    for t in range(1, T):
        states[t] = params.A @ states[t - 1]
        if noise.process_sd:
            states[t] += noise.process_sd * gen.standard_normal(params.D)
    obs = states @ params.H.T
    if noise.observation_sd:
        obs = obs + noise.observation_sd * gen.standard_normal(obs.shape)
    return states, obs


def _rollout(A, x0, T):
    """States for one trial ``[T, D]`` or a stack of trials ``[B, T, D]``."""
    x0 = np.asarray(x0, dtype=np.float64)
    states = np.empty(x0.shape[:-1] + (T, x0.shape[-1]))
    states[..., 0, :] = x0
    for t in range(1, T):
        states[..., t, :] = states[..., t - 1, :] @ A.T
    return states


def lds_forward(params: LdsParams, x0, T: int):
    """Noise-free rollout; returns ``(states, outputs)`` with outputs ``H x``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    states = _rollout(params.A, x0, T)
    return states, states @ params.H.T


def masked_sse_loss(outputs, values, mask=None) -> float:
    """``(1/T) * sum of 0.5 * residual**2`` over observed entries of one trial."""
    outputs = np.asarray(outputs, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if outputs.shape != values.shape:
        raise ValueError("outputs and values differ in shape")
    T = outputs.shape[-2]
    resid = outputs - values
    if mask is not None:
        resid = np.where(mask, resid, 0.0)
    return float(0.5 * np.sum(resid**2) / T)


def _check_slice(params, values, mask):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != params.N:
        raise ValueError(f"values must be [T, {params.N}], got {values.shape}")
    if mask is not None and np.shape(mask) != values.shape:
        raise ValueError("mask shape does not match values")
    return values


def sbtt_backward(params: LdsParams, x0, values, mask) -> LdsGradients:
    """Exact gradients of :func:`masked_sse_loss` w.r.t. ``A`` and ``H``.

    Output-gradient entries at unobserved indices are zeroed before being
    propagated back through time.
    """
    values = _check_slice(params, values, mask)
    T = values.shape[0]
    A, H = params.A, params.H
    states = _rollout(A, x0, T)
    outputs = states @ H.T
    mask = np.asarray(mask, dtype=bool)
    d_out = np.where(mask, (outputs - values) / T, 0.0)
    dA = np.zeros_like(A)
    dH = d_out.T @ states
    dx = H.T @ d_out[T - 1]
    for t in range(T - 1, 0, -1):
        dA += np.outer(dx, states[t - 1])
        dx = A.T @ dx + H.T @ d_out[t - 1]
    return LdsGradients(dA, dH, dx)


def bptt_backward(params: LdsParams, x0, values) -> LdsGradients:
    """Plain BPTT with every entry observed; a separate reference path."""
    values = _check_slice(params, values, None)
    T = values.shape[0]
    A, H = params.A, params.H
    xs = [np.asarray(x0, dtype=np.float64)]
    for _ in range(1, T):
        xs.append(A @ xs[-1])
    grads_o = [(H @ x - y) / T for x, y in zip(xs, values)]
    dH = sum(np.outer(g, x) for g, x in zip(grads_o, xs))
    dA = np.zeros_like(A)
    carry = np.zeros(A.shape[0])
    for t in reversed(range(T)):
        carry = H.T @ grads_o[t] + (A.T @ carry if t < T - 1 else 0.0)
        if t >= 1:
            dA = dA + np.outer(carry, xs[t - 1])
    return LdsGradients(dA, dH, carry)


def _batch_loss_and_grads(params, x0s, values, masks, need_grads=True):
    """Mean loss and mean gradients over a stack of trials (vectorised)."""
    B, T, _ = values.shape
    A, H = params.A, params.H
    states = _rollout(A, x0s, T)
    outputs = states @ H.T
    resid = np.where(masks, outputs - values, 0.0)
    loss = 0.5 * np.sum(resid**2) / (T * B)
    if not need_grads:
        return loss, None
    d_out = resid / T
    dH = np.einsum("btn,btd->nd", d_out, states)
    dA = np.zeros_like(A)
    dx = d_out[:, T - 1] @ H
    for t in range(T - 1, 0, -1):
        dA += dx.T @ states[:, t - 1]
        dx = dx @ A + d_out[:, t - 1] @ H
    return loss, LdsGradients(dA / B, dH / B, dx / B)


def predictive_mse(params: LdsParams, x0s, values, masks) -> float:
    """Mean squared error of the noise-free rollout over observed entries."""
    values = np.asarray(values, dtype=np.float64)
    _, outputs = lds_forward(params, np.asarray(x0s, dtype=np.float64), values.shape[1])
    masks = np.asarray(masks, dtype=bool)
    resid = (outputs - values)[masks]
    return float(np.mean(resid**2)) if resid.size else 0.0


def train_lds(dataset, init: LdsParams, lr=1e-2, epochs: int = 1000,
              backtrack: bool = True, estimate_x0: bool = False, x0_lr: float | None = None):
    """Full-batch gradient descent on the masked loss.

    ``dataset`` is a sequence of ``(x0, values [T, N], mask [T, N])`` trials
    with a shared ``T``.  Gradients are averaged over trials.  ``lr`` is one
    step size or an ``(lr_A, lr_H)`` pair; the loss is far more curved in
    ``A`` than in ``H`` when ``A`` is slowly decaying.  With
    ``backtrack`` each epoch starts at ``lr`` and halves the step until the
    loss does not increase, which keeps rollouts of a nearly unstable ``A``
    from exploding.  With ``estimate_x0`` the supplied initial states are
    only starting guesses and are refined jointly (an extension; by default
    they are treated as known) and the refined states are returned third.

    Returns ``(params, loss_history)``; ``loss_history[e]`` is the mean loss
    at the parameters entering epoch ``e`` and the last entry is the loss at
    the returned parameters.
    """
    lr_A, lr_H = (lr, lr) if np.isscalar(lr) else (float(lr[0]), float(lr[1]))
    if lr_A <= 0 or lr_H <= 0:
        raise ValueError("lr must be positive")
    x0s = np.stack([np.asarray(d[0], dtype=np.float64) for d in dataset])
    values = np.stack([np.asarray(d[1], dtype=np.float64) for d in dataset])
    masks = np.stack([np.asarray(d[2], dtype=bool) for d in dataset])
    params = init
    history = []
    loss, g = _batch_loss_and_grads(params, x0s, values, masks)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            if not np.isfinite(loss):
                raise LdsDivergedError(f"loss became non-finite after {len(history)} epochs")
            history.append(float(loss))
            step = 1.0
            for _ in range(40):
                cand = LdsParams(params.A - step * lr_A * g.dA, params.H - step * lr_H * g.dH)
                cand_loss, cand_g = _batch_loss_and_grads(cand, x0s, values, masks)
                if not backtrack or (np.isfinite(cand_loss) and cand_loss <= loss):
                    break
                step *= 0.5
            else:
                log.info("no descent step found after %d epochs; stopping", len(history))
                break
            params, loss, g = cand, cand_loss, cand_g
            if estimate_x0:
                x0s = x0s - (x0_lr or lr_H) * _per_trial_dx0(params, x0s, values, masks)
                loss, g = _batch_loss_and_grads(params, x0s, values, masks)
    if not np.isfinite(loss):
        raise LdsDivergedError("loss became non-finite at the final parameters")
    history.append(float(loss))
    if estimate_x0:
        return params, history, x0s
    return params, history


def _per_trial_dx0(params, x0s, values, masks):
    T = values.shape[1]
    states = _rollout(params.A, x0s, T)
    d_out = np.where(masks, states @ params.H.T - values, 0.0) / T
    dx = d_out[:, T - 1] @ params.H
    for t in range(T - 1, 0, -1):
        dx = dx @ params.A + d_out[:, t - 1] @ params.H
    return dx
