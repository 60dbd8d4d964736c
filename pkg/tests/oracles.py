"""Finite-difference and benchmark oracles shared by unit and acceptance tests."""

import numpy as np

from sbtt.lds import LdsNoiseConfig, LdsParams, lds_forward, lds_simulate, masked_sse_loss, sbtt_backward
from sbtt.sampling import random_drop_mask
from sbtt.seqae.model import SeqAeHyper, init_params, loss_and_grads
from sbtt.tensorio import RngState, TimeSeriesBatch


def lds_fd_worst(n_instances=20, seed=0, rel_step=1e-5):
    """Worst relative error of SBTT gradients vs central differences over random small instances."""
    gen = RngState(seed).generator(0)
    worst = 0.0
    for i in range(n_instances):
        D, N, T = int(gen.integers(1, 5)), int(gen.integers(1, 9)), int(gen.integers(2, 31))
        A = gen.normal(size=(D, D))
        A *= gen.uniform(0.5, 1.05) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-3)
        p = LdsParams(A, gen.normal(size=(N, D)))
        x0, y = gen.normal(size=D), gen.normal(size=(T, N))
        # mask fraction cycles 0%..100% across instances
        mask = gen.random((T, N)) >= i / (n_instances - 1)
        g = sbtt_backward(p, x0, y, mask)
        for which, grad in (("A", g.dA), ("H", g.dH)):
            base = getattr(p, which)
            fd = np.zeros_like(base)
            for idx in np.ndindex(base.shape):
                h = rel_step * max(1.0, abs(base[idx]))
                hi, lo = base.copy(), base.copy()
                hi[idx] += h
                lo[idx] -= h
                f = []
                for m in (hi, lo):
                    q = LdsParams(m, p.H) if which == "A" else LdsParams(p.A, m)
                    f.append(masked_sse_loss(lds_forward(q, x0, T)[1], y, mask))
                fd[idx] = (f[0] - f[1]) / (2 * h)
            scale = max(np.max(np.abs(fd)), np.max(np.abs(grad)))
            if scale == 0:
                continue  # fully masked instance: both exactly zero
            worst = max(worst, np.max(np.abs(fd - grad)) / scale)
    return worst


def tiny_seqae(emission="poisson", seed=1, **overrides):
    hy = dict(enc_dim=4, ic_dim=3, gen_dim=5, factor_dim=2, emission=emission, ramp_epochs=0,
              kl_weight_ic=0.3, l2_generator=0.01, scale_l2=0.1, dropout_rate=0.0)
    hy.update(overrides)
    hyper = SeqAeHyper(**hy)
    g = np.random.default_rng(seed)
    shape = (3, 10, 6)
    if emission == "zig":
        v = np.where(g.random(shape) < 0.4, 0.1 + g.gamma(1.5, 0.3, shape), 0.0)
    else:
        v = g.poisson(1.0, shape).astype(float)
    m = g.random(shape) < 0.6
    batch = TimeSeriesBatch(v, m, np.arange(10) * 0.01, 0.01)
    params = init_params(hyper, batch, g)
    for k in params.weights:
        params.weights[k] = params.weights[k] + 0.3 * g.standard_normal(params.weights[k].shape)
    if emission == "zig":
        params.loc = params.loc * 0.5
    eps = g.standard_normal((shape[0], hyper.ic_dim))
    return params, batch, eps


def seqae_fd_errors(emission="poisson", h=1e-6):
    """Per-weight relative error of analytic gradients vs central differences (fixed draws)."""
    params, batch, eps = tiny_seqae(emission)

    def f():
        return loss_and_grads(params, batch.values, batch.mask, epoch=5, rng=0, frozen_eps=eps)

    _, _, grads = f()
    errors = {}
    for k, w in params.weights.items():
        fd = np.zeros_like(w)
        for i in np.ndindex(w.shape):
            o = w[i]
            w[i] = o + h
            lp = f()[0]
            w[i] = o - h
            lm = f()[0]
            w[i] = o
            fd[i] = (lp - lm) / (2 * h)
        denom = max(np.linalg.norm(fd), np.linalg.norm(grads[k]), 1e-30)
        errors[k] = float(np.linalg.norm(fd - grads[k]) / denom)
    return errors


def lds_identification(seed=0, lr=(0.004, 5.0), epochs=600):
    """Fit a 2-D rotation system from 50%-dropped noisy outputs.

    Returns ``(fit_mse / oracle_mse, max eigenvalue error)`` on held-out trials.
    """
    from sbtt.lds import predictive_mse, train_lds

    gen = RngState(seed).generator(0)
    theta, radius = 0.15, 0.97
    A = radius * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    true = LdsParams(A, gen.normal(size=(10, 2)))

    def make(n, stream):
        g = RngState(seed).generator(stream)
        out = []
        for _ in range(n):
            x0 = 2.0 * g.normal(size=2)
            _, y = lds_simulate(true, LdsNoiseConfig(0.0, 0.05), x0, 200, g)
            out.append((x0, y, random_drop_mask((1, 200, 10), 0.5, g)[0]))
        return out

    train, test = make(100, 1), make(100, 2)
    init = LdsParams(0.5 * np.eye(2), 0.1 * gen.normal(size=(10, 2)))
    fit, _ = train_lds(train, init, lr=lr, epochs=epochs)
    x0s = np.stack([d[0] for d in test])
    Y = np.stack([d[1] for d in test])
    M = np.stack([d[2] for d in test])
    ratio = predictive_mse(fit, x0s, Y, M) / predictive_mse(true, x0s, Y, M)
    eig_err = np.max(np.abs(np.sort_complex(np.linalg.eigvals(fit.A)) - np.sort_complex(np.linalg.eigvals(A))))
    return float(ratio), float(eig_err)
