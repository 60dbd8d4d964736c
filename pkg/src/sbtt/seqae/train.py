"""Minibatch Adam training, encoder-only retraining and posterior-mean inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..emissions import emission_mean, emission_nll_grad
from ..tensorio import TimeSeriesBatch, RngState
from .model import (
    ENCODER_BLOCKS,
    SeqAeHyper,
    SeqAeParams,
    _encoder_inputs,
    _forward,
    init_params,
    loss_and_grads,
)

log = logging.getLogger(__name__)

__all__ = ["Adam", "SeqAeDivergedError", "TrainingLog", "infer", "infer_rates", "split_trials", "train_seqae"]

MODES = ("fresh", "retrain_encoder")


class SeqAeDivergedError(FloatingPointError):
    """Training hit a non-finite loss; ``params`` holds the last good checkpoint."""

    def __init__(self, msg, params=None, log=None):
        super().__init__(msg)
        self.params = params
        self.log = log


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, weights: dict, grads: dict, keys) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for k in keys:
            g = grads[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            weights[k] = weights[k] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    diverged: bool = False

    HEADER = ("epoch", "train_loss", "recon", "kl", "l2", "val_nll", "val_smoothed")

    def as_rows(self):
        return [tuple(r[h] for h in self.HEADER) for r in self.rows]


def split_trials(n_trials: int, val_fraction: float, seed: int):
    """Deterministic shuffled train/validation split of trial indices."""
    order = RngState(seed).generator(1).permutation(n_trials)
    n_val = int(round(val_fraction * n_trials))
    if n_trials > 1:
        n_val = min(max(n_val, 1 if val_fraction > 0 else 0), n_trials - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _trainable_keys(params: SeqAeParams, mode: str):
    if mode == "fresh":
        return sorted(params.weights)
    return sorted(k for k in params.weights if k.split(".")[0] in ENCODER_BLOCKS)


def validation_nll(params: SeqAeParams, batch: TimeSeriesBatch) -> float:
    """Posterior-mean reconstruction NLL averaged over observed entries."""
    x = _encoder_inputs(batch.values, batch.mask, params.hyper)
    pre, *_ = _forward(params, x, None)
    nll, _, _ = emission_nll_grad(params.emission, pre, batch.values, batch.mask, params.loc,
                                  params.weights.get("emis.log_scale"))
    return nll


def train_seqae(dataset: TimeSeriesBatch, hyper: SeqAeHyper | None = None, mode: str = "fresh",
                init: SeqAeParams | None = None, callback=None):
    """Train on ``dataset`` with an 80/20 (by default) train/validation split.

    ``mode="retrain_encoder"`` starts from ``init`` and updates only the
    encoder and initial-condition readout.  The returned parameters are the
    checkpoint with the best exponentially smoothed validation NLL.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "retrain_encoder" and init is None:
        raise ValueError("retrain_encoder needs a trained checkpoint")
    hyper = hyper or (init.hyper if init is not None else SeqAeHyper())
    root = RngState(hyper.seed)
    if init is None:
        params = init_params(hyper, dataset, root.generator(0))
    else:
        params = init.copy()
        params.hyper = hyper
    keys = _trainable_keys(params, mode)
    train_idx, val_idx = split_trials(dataset.n_trials, hyper.val_fraction, hyper.seed)
    train, val = dataset.select_trials(train_idx), dataset.select_trials(val_idx)
    opt = Adam(hyper.lr)
    tlog = TrainingLog()
    best = params.copy()
    smoothed = None
    bs = max(1, min(hyper.batch_size, train.n_trials))
    for epoch in range(hyper.epochs):
        order = root.generator(2, epoch).permutation(train.n_trials)
        sums = np.zeros(4)
        n_batches = 0
        for b_i, start in enumerate(range(0, train.n_trials, bs)):
            idx = order[start : start + bs]
            try:
                total, comps, grads = loss_and_grads(
                    params, train.values[idx], train.mask[idx], epoch, root.generator(3, epoch, b_i)
                )
            except FloatingPointError as exc:
                tlog.diverged = True
                raise SeqAeDivergedError(str(exc), best, tlog) from exc
            norm = np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in keys))
            if not np.isfinite(norm):
                tlog.diverged = True
                raise SeqAeDivergedError("non-finite gradient", best, tlog)
            if norm > hyper.max_grad_norm:
                grads = {k: g * (hyper.max_grad_norm / norm) for k, g in grads.items()}
            opt.step(params.weights, grads, keys)
            sums += (total, comps["recon"], comps["kl"], comps["l2"])
            n_batches += 1
        sums /= max(n_batches, 1)
        v = validation_nll(params, val) if val.n_trials else float(sums[1])
        if not np.isfinite(v):
            tlog.diverged = True
            raise SeqAeDivergedError("non-finite validation NLL", best, tlog)
        a = hyper.val_smoothing
        smoothed = v if smoothed is None else a * smoothed + (1 - a) * v
        tlog.rows.append(dict(zip(TrainingLog.HEADER, (epoch, *map(float, sums), float(v), float(smoothed)))))
        if smoothed < tlog.best_val:
            tlog.best_val, tlog.best_epoch = float(smoothed), epoch
            best = params.copy()
        if callback is not None:
            callback(epoch, tlog.rows[-1])
        log.debug("epoch %d loss %.5f val %.5f", epoch, sums[0], v)
    if hyper.epochs == 0:
        best = params.copy()
    return best, tlog


def infer(params: SeqAeParams, batch: TimeSeriesBatch) -> dict:
    """Posterior-mean inference at every time step: rates, factors, posterior."""
    x = _encoder_inputs(batch.values, batch.mask, params.hyper)
    pre, post, factors, _ = _forward(params, x, None)
    rates = emission_mean(params.emission, pre, params.loc, params.weights.get("emis.log_scale"))
    return {"rates": rates, "factors": factors, "ic_mean": post.mean, "ic_log_var": post.log_var}


def infer_rates(params: SeqAeParams, batch: TimeSeriesBatch) -> np.ndarray:
    return infer(params, batch)["rates"]
