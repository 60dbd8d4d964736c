"""Decoding and fit metrics: ridge with interleaved CV, R², Poisson GLM pseudo-R², coherence, PSTH r."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.interpolate import interp1d
from scipy.ndimage import gaussian_filter1d
from scipy.signal import get_window
from scipy.special import gammaln, xlogy

__all__ = [
    "DEFAULT_LAMBDAS",
    "EvalReport",
    "GlmFit",
    "RidgeCvResult",
    "RidgeModel",
    "coherence",
    "decode_r2",
    "fit_ridge",
    "poisson_glm_fit",
    "poisson_loglik",
    "pseudo_r2",
    "psth_correlation",
    "r2",
    "resample_linear",
    "ridge_cv",
]

DEFAULT_LAMBDAS = tuple(np.logspace(-4, 4, 9))


# -- R² and ridge ---------------------------------------------------------------------


def r2(y_true, y_pred):
    """Per-dimension and mean coefficient of determination.

    A zero-variance target dimension is undefined and reported as NaN (which
    then propagates into the mean).
    """
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.shape != yp.shape:
        raise ValueError("shape mismatch")
    if yt.ndim == 1:
        yt, yp = yt[:, None], yp[:, None]
    if yt.shape[0] < 2:
        raise ValueError("r2 needs at least two samples")
    ss_res = np.sum((yt - yp) ** 2, axis=0)
    ss_tot = np.sum((yt - yt.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        per = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, np.nan)
    return per, float(np.mean(per))


@dataclass
class RidgeModel:
    weights: np.ndarray  # [features, targets]
    intercept: np.ndarray  # [targets]
    lam: float

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.intercept


def fit_ridge(X, Y, lam: float) -> RidgeModel:
    """Closed-form ridge with an unpenalized intercept (fit on centered data).

    Raises ``np.linalg.LinAlgError`` when the normal equations are singular.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    xm, ym = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - xm, Y - ym
    G = Xc.T @ Xc + lam * np.eye(X.shape[1])
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            W = linalg.solve(G, Xc.T @ Yc, assume_a="sym")
        except linalg.LinAlgWarning as exc:
            raise np.linalg.LinAlgError(str(exc)) from exc
    return RidgeModel(W, ym - xm @ W, float(lam))


def _interleaved_folds(groups, k):
    uniq = np.unique(groups)
    fold_of = {g: i % k for i, g in enumerate(uniq)}
    return np.array([fold_of[g] for g in groups])


def _select_lambda(X, Y, groups, lambdas, inner_folds):
    folds = _interleaved_folds(groups, inner_folds)
    scores = []
    for lam in lambdas:
        fold_scores = []
        try:
            for f in range(inner_folds):
                te = folds == f
                if not te.any() or te.all():
                    continue
                m = fit_ridge(X[~te], Y[~te], lam)
                fold_scores.append(r2(Y[te], m.predict(X[te]))[1])
        except np.linalg.LinAlgError:
            warnings.warn(f"ridge system singular at lambda={lam}; skipped", RuntimeWarning, stacklevel=3)
            scores.append(-np.inf)
            continue
        if not fold_scores:
            scores.append(-np.inf)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                scores.append(np.nanmean(fold_scores))
    scores = np.asarray(scores)
    usable = ~np.isneginf(scores)
    if not usable.any():
        raise np.linalg.LinAlgError("no usable lambda")
    if np.isnan(scores[usable]).all():
        # R² undefined everywhere (constant targets): any usable penalty will do
        return float(np.asarray(lambdas)[usable][0])
    return float(lambdas[int(np.nanargmax(np.where(usable, scores, np.nan)))])


@dataclass
class RidgeCvResult:
    model: RidgeModel
    heldout_r2: float
    heldout_r2_per_repeat: list
    heldout_r2_per_dim: np.ndarray
    train_r2: float
    lambdas_chosen: list


def ridge_cv(X, Y, lambdas=DEFAULT_LAMBDAS, groups=None, repeats: int = 5, inner_folds: int = 5) -> RidgeCvResult:
    """Ridge regression scored on interleaved 80/20 outer splits.

    ``groups`` (e.g. trial ids) keeps all samples of one group on the same
    side of every split; groups are dealt round-robin into ``repeats`` outer
    folds, so each repeat holds out an interleaved 1/repeats of them.  The
    penalty is chosen per repeat by inner interleaved CV on the training
    side.  The returned model is refit on all samples with a penalty chosen
    the same way.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(lambdas) == 0:
        raise ValueError("lambdas must be non-empty")
    groups = np.arange(X.shape[0]) if groups is None else np.asarray(groups)
    outer = _interleaved_folds(groups, repeats)
    scores, per_dim, train_scores, chosen = [], [], [], []
    for r in range(repeats):
        te = outer == r
        if not te.any() or te.all():
            continue
        lam = _select_lambda(X[~te], Y[~te], groups[~te], lambdas, inner_folds)
        m = fit_ridge(X[~te], Y[~te], lam)
        pd, mean = r2(Y[te], m.predict(X[te]))
        scores.append(mean)
        per_dim.append(pd)
        train_scores.append(r2(Y[~te], m.predict(X[~te]))[1])
        chosen.append(lam)
    lam = _select_lambda(X, Y, groups, lambdas, inner_folds)
    return RidgeCvResult(
        model=fit_ridge(X, Y, lam),
        heldout_r2=float(np.mean(scores)),
        heldout_r2_per_repeat=[float(s) for s in scores],
        heldout_r2_per_dim=np.mean(per_dim, axis=0),
        train_r2=float(np.mean(train_scores)),
        lambdas_chosen=chosen,
    )


def decode_r2(features, targets, lag: int = 0, **kwargs) -> RidgeCvResult:
    """Ridge-map ``features [trials, T, F]`` to ``targets [trials, T, D]``, trials kept whole.

    ``lag`` shifts targets later by that many bins relative to features.
    """
    F = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if F.shape[:2] != Y.shape[:2]:
        raise ValueError("features and targets must share [trials, T]")
    if lag:
        F, Y = F[:, :-lag], Y[:, lag:]
    K, T = F.shape[:2]
    groups = np.repeat(np.arange(K), T)
    return ridge_cv(F.reshape(K * T, -1), Y.reshape(K * T, -1), groups=groups, **kwargs)


# -- Poisson GLM ----------------------------------------------------------------------


@dataclass
class GlmFit:
    weights: np.ndarray  # [1 + F], intercept first
    converged: bool
    n_iter: int

    def rates(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.exp(self.weights[0] + X @ self.weights[1:])


def _glm_objective(Xa, y, w, l2):
    eta = Xa @ w
    return float(np.sum(np.exp(eta) - y * eta) + 0.5 * l2 * w @ w)


def poisson_glm_fit(X, counts, l2: float = 1e-4, max_iter: int = 100, tol: float = 1e-8) -> GlmFit:
    """Exponential-link Poisson regression by damped Newton (IRLS).

    The L2 penalty covers the intercept too, which keeps all-zero counts
    finite.  On non-convergence the best iterate is returned with
    ``converged=False``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(counts, dtype=np.float64)
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("counts must be non-negative integers")
    Xa = np.hstack([np.ones((X.shape[0], 1)), X])
    w = np.zeros(Xa.shape[1])
    w[0] = np.log(max(y.mean(), 1e-8))
    obj = _glm_objective(Xa, y, w, l2)
    eye = np.eye(Xa.shape[1])
    for it in range(1, max_iter + 1):
        mu = np.exp(Xa @ w)
        grad = Xa.T @ (mu - y) + l2 * w
        hess = (Xa * mu[:, None]).T @ Xa + l2 * eye
        step = linalg.solve(hess, grad, assume_a="pos")
        t = 1.0
        for _ in range(50):
            w_new = w - t * step
            obj_new = _glm_objective(Xa, y, w_new, l2)
            if np.isfinite(obj_new) and obj_new <= obj + 1e-12 * abs(obj):
                break
            t *= 0.5
        else:
            return GlmFit(w, False, it)
        delta = np.max(np.abs(w_new - w))
        w, obj = w_new, obj_new
        if delta < tol:
            return GlmFit(w, True, it)
    return GlmFit(w, False, max_iter)


def poisson_loglik(counts, rates) -> float:
    """Poisson log-likelihood with ``0 * ln 0 = 0``."""
    y = np.asarray(counts, dtype=np.float64)
    mu = np.asarray(rates, dtype=np.float64)
    return float(np.sum(xlogy(y, mu) - mu - gammaln(y + 1.0)))


def pseudo_r2(counts, glm_rates, null_rate=None) -> float:
    """``1 - (ll_sat - ll_glm) / (ll_sat - ll_null)``; NaN when all counts are equal."""
    y = np.asarray(counts, dtype=np.float64)
    null = y.mean() if null_rate is None else null_rate
    ll_sat = poisson_loglik(y, y)
    ll_glm = poisson_loglik(y, glm_rates)
    ll_null = poisson_loglik(y, np.broadcast_to(null, y.shape))
    denom = ll_sat - ll_null
    if not denom > 0:
        return float("nan")
    return 1.0 - (ll_sat - ll_glm) / denom


# -- spectra ----------------------------------------------------------------------------------


def _segments(x, window_len, step):
    T = x.shape[-1]
    starts = range(0, T - window_len + 1, step)
    return np.stack([x[..., s : s + window_len] for s in starts], axis=-2)


def coherence(x, y, window_len: int = 35, overlap: int = 25, sample_rate: float = 1.0, nfft: int | None = 64):
    """Welch magnitude-squared coherence ``|Pxy|^2 / (Pxx Pyy)``.

    ``x`` and ``y`` are ``[T]`` or ``[trials, T]``; segments from all trials
    are pooled into one estimate.  ``nfft=None`` uses the window length
    (plain DFT); the default zero-pads each segment to 64 points.  Returns
    ``(frequencies, values)`` with values clamped to [0, 1].
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    if x.shape[-1] < window_len:
        raise ValueError("signal shorter than the window")
    if not 0 <= overlap < window_len:
        raise ValueError("overlap must be in [0, window_len)")
    n = nfft or window_len
    if n < window_len:
        raise ValueError("nfft must be >= window_len")
    win = get_window("hann", window_len)
    sx = _segments(x, window_len, window_len - overlap).reshape(-1, window_len)
    sy = _segments(y, window_len, window_len - overlap).reshape(-1, window_len)
    if sx.shape[0] < 2:
        raise ValueError("coherence needs at least two segments")
    sx = sx - sx.mean(axis=1, keepdims=True)
    sy = sy - sy.mean(axis=1, keepdims=True)
    fx = np.fft.rfft(sx * win, n=n, axis=1)
    fy = np.fft.rfft(sy * win, n=n, axis=1)
    pxx = np.mean(np.abs(fx) ** 2, axis=0)
    pyy = np.mean(np.abs(fy) ** 2, axis=0)
    pxy = np.mean(np.conj(fx) * fy, axis=0)
    denom = pxx * pyy
    with np.errstate(divide="ignore", invalid="ignore"):
        coh = np.where(denom > 0, np.abs(pxy) ** 2 / denom, 0.0)
    return np.fft.rfftfreq(n, 1.0 / sample_rate), np.clip(coh, 0.0, 1.0)


# -- PSTH and resampling ----------------------------------------------------------------------


def psth_correlation(single_trial_rates, events, condition_labels, smooth_sd_ms: float = 40.0,
                     bin_ms: float = 10.0):
    """Per-neuron Pearson r between single-trial rates and condition PSTHs.

    PSTHs are trial means of Gaussian-smoothed events per condition.
    Returns ``(r, undefined)`` where ``undefined`` flags zero-variance neurons
    (their r is NaN).
    """
    rates = np.asarray(single_trial_rates, dtype=np.float64)
    ev = np.asarray(events, dtype=np.float64)
    labels = np.asarray(condition_labels)
    if rates.shape != ev.shape or rates.ndim != 3:
        raise ValueError("rates and events must both be [trials, T, N]")
    conds, counts = np.unique(labels, return_counts=True)
    if conds.size < 2 or counts.min() < 2:
        raise ValueError("need at least two conditions with two trials each")
    sm = gaussian_filter1d(ev, smooth_sd_ms / bin_ms, axis=1, mode="nearest") if smooth_sd_ms > 0 else ev
    psth = np.empty_like(sm)
    for c in conds:
        sel = labels == c
        psth[sel] = sm[sel].mean(axis=0)
    N = rates.shape[2]
    a = rates.transpose(2, 0, 1).reshape(N, -1)
    b = psth.transpose(2, 0, 1).reshape(N, -1)
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    denom = np.sqrt(np.sum(a * a, axis=1) * np.sum(b * b, axis=1))
    undefined = ~(denom > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(undefined, np.nan, np.sum(a * b, axis=1) / denom)
    return r, undefined


def resample_linear(signal, rate_in: float, rate_out: float, n_out: int | None = None, axis: int = 0,
                    t0_in: float = 0.0, t0_out: float = 0.0):
    """Linear interpolation onto a new uniform grid; beyond the ends the edge slope is extended."""
    if rate_in <= 0 or rate_out <= 0:
        raise ValueError("rates must be positive")
    sig = np.asarray(signal, dtype=np.float64)
    T = sig.shape[axis]
    if n_out is None:
        n_out = int(round(T * rate_out / rate_in))
    t_in = t0_in + np.arange(T) / rate_in
    t_out = t0_out + np.arange(n_out) / rate_out
    if T == 1:
        return np.repeat(sig, n_out, axis=axis)
    f = interp1d(t_in, sig, axis=axis, kind="linear", fill_value="extrapolate", assume_sorted=True)
    return f(t_out)


@dataclass
class EvalReport:
    r2_per_dim: list = field(default_factory=list)
    r2_mean: float = float("nan")
    pseudo_r2_per_unit: list = field(default_factory=list)
    coherence: dict = field(default_factory=dict)
    psth_corr_per_neuron: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)
