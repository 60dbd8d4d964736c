"""Lorenz-driven synthetic spiking and two-photon calcium data.

Pipeline: Lorenz latents -> exponential rates -> Poisson spikes ->
AR(1) calcium -> saturating nonlinearity -> min-max scaling -> additive and
signal-dependent noise -> staggered (raster) sampling -> AR(1) inversion.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import stats
from scipy.signal import lfilter

from .sampling import random_phase_assignment, raster_mask
from .tensorio import RngState, TimeSeriesBatch, as_generator

__all__ = [
    "CalciumConfig",
    "LorenzConfig",
    "collapse_to_frames",
    "deconvolve_staggered",
    "lorenz_generate",
    "make_lorenz_calcium",
    "make_lorenz_spiking",
    "naive_deconvolve",
    "rates_from_latents",
    "sample_spikes",
    "spectrum_peak_hz",
    "staggered_sample",
    "synth_fluorescence",
]


class _ConfigMixin:
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kwargs)


@dataclass(frozen=True)
class LorenzConfig(_ConfigMixin):
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.01
    downsample_factor: int = 1
    n_conditions: int = 32
    trial_ms: int = 900
    bin_ms: int = 10
    burn_in: int = 1000

    def __post_init__(self):
        if min(self.sigma, self.rho, self.beta, self.dt) <= 0:
            raise ValueError("Lorenz parameters and dt must be positive")
        if self.downsample_factor < 1 or self.n_conditions < 1:
            raise ValueError("downsample_factor and n_conditions must be >= 1")
        if self.trial_ms % self.bin_ms:
            raise ValueError("trial_ms must be a multiple of bin_ms")

    @property
    def n_bins(self) -> int:
        return self.trial_ms // self.bin_ms


@dataclass(frozen=True)
class CalciumConfig(_ConfigMixin):
    spike_amp_sd: float = 0.1
    gamma_range: tuple = (0.93, 0.95)
    noise_mean: float = 0.3
    noise_sd: float = 0.02
    noise_floor: float = 0.09
    poisson_noise_power: float = 2.0
    s_min: float = 0.1
    hill_n: float = 2.0
    hill_k_percentile: float = 90.0
    fine_rate: float = 100.0
    n_phases: int = 3

    def __post_init__(self):
        lo, hi = self.gamma_range
        if not 0 < lo <= hi < 1:
            raise ValueError("gamma_range must lie inside (0, 1)")
        if self.noise_floor <= 0:
            raise ValueError("noise_floor must be positive")
        if self.n_phases < 1:
            raise ValueError("n_phases must be >= 1")


# -- latents, rates and spikes ------------------------------------------------------


def lorenz_generate(cfg: LorenzConfig, rng, init_states=None) -> np.ndarray:
    """Euler-integrated Lorenz trajectories ``[conditions, T, 3]``.

    Each condition starts from a random state, runs ``burn_in`` steps to
    settle on the attractor, then records every ``downsample_factor``-th
    step; a larger factor means faster latent dynamics per bin.
    """
    gen = as_generator(rng)
    if init_states is None:
        x = gen.uniform(-1.0, 1.0, (cfg.n_conditions, 3)) * np.array([15.0, 20.0, 15.0])
        x[:, 2] += 25.0
    else:
        x = np.array(init_states, dtype=np.float64).reshape(-1, 3)
    s, r, b, dt = cfg.sigma, cfg.rho, cfg.beta, cfg.dt

    def step(x):
        dx = np.empty_like(x)
        dx[:, 0] = s * (x[:, 1] - x[:, 0])
        dx[:, 1] = x[:, 0] * (r - x[:, 2]) - x[:, 1]
        dx[:, 2] = x[:, 0] * x[:, 1] - b * x[:, 2]
        return x + dt * dx

    for _ in range(cfg.burn_in):
        x = step(x)
    out = np.empty((x.shape[0], cfg.n_bins, 3))
    for t in range(cfg.n_bins):
        out[:, t] = x
        for _ in range(cfg.downsample_factor):
            x = step(x)
    return out


def spectrum_peak_hz(signal, sample_rate: float = 100.0, nfft: int | None = None) -> float:
    """Frequency of the largest non-DC peak of the trial-averaged power spectrum."""
    sig = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    sig = sig - sig.mean(axis=-1, keepdims=True)
    n = nfft or max(1024, sig.shape[-1])
    power = np.mean(np.abs(np.fft.rfft(sig, n=n, axis=-1)) ** 2, axis=0)
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    return float(freqs[1:][np.argmax(power[1:])])


def rates_from_latents(states, n_neurons: int = 278, baseline_hz: float = 3.0, rng=None,
                       w_sd: float = 0.5, weights=None):
    """Exponential-linear rates (Hz) with each neuron's mean rate equal to the baseline.

    Latent dimensions are z-scored over all conditions and time before the
    random projection.  Returns ``(rates, weights)``.
    """
    states = np.asarray(states, dtype=np.float64)
    flat = states.reshape(-1, states.shape[-1])
    sd = flat.std(axis=0)
    z = (states - flat.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    if weights is None:
        weights = as_generator(rng).normal(0.0, w_sd, (states.shape[-1], n_neurons))
    drive = np.exp(z @ weights)
    mean_drive = drive.reshape(-1, n_neurons).mean(axis=0)
    return baseline_hz * drive / mean_drive, weights


def sample_spikes(rates, dt: float = 0.01, rng=None, n_trials: int | None = None):
    """Independent Poisson counts per bin.

    With ``n_trials`` the condition rates ``[C, T, N]`` are repeated to give
    ``[C * n_trials, T, N]`` counts (condition-major order).
    """
    rates = np.asarray(rates, dtype=np.float64)
    if np.any(rates < 0):
        raise ValueError("rates must be non-negative")
    if n_trials is not None:
        rates = np.repeat(rates, n_trials, axis=0)
    return as_generator(rng).poisson(rates * dt).astype(np.float64)


# -- calcium ------------------------------------------------------------------------------


def _truncated_normal(gen, mean, sd, lower, size):
    a = (lower - mean) / sd
    return stats.truncnorm.rvs(a, np.inf, loc=mean, scale=sd, size=size, random_state=gen)


def hill(c, k, n):
    c = np.maximum(c, 0.0)
    cn = c**n
    denom = cn + k**n
    return np.divide(cn, denom, out=np.zeros_like(cn), where=denom > 0)


def synth_fluorescence(spikes, cfg: CalciumConfig | None = None, rng=None, nonlinearity: bool = True,
                       noise: bool = True, gammas=None):
    """Fluorescence traces ``[trials, T, N]`` on the fine grid.

    Returns ``(traces, info)`` with ``info`` holding per-neuron ``gamma`` and
    noise level ``sn``.  Trials are independent AR(1) runs starting at zero.
    """
    cfg = cfg or CalciumConfig()
    gen = as_generator(rng)
    spikes = np.asarray(spikes, dtype=np.float64)
    if np.any(spikes < 0):
        raise ValueError("spikes must be non-negative")
    K, T, N = spikes.shape
    amp = spikes + np.sqrt(spikes) * cfg.spike_amp_sd * gen.standard_normal(spikes.shape)
    if gammas is None:
        gammas = gen.uniform(*cfg.gamma_range, size=N)
    gammas = np.asarray(gammas, dtype=np.float64)
    calcium = np.empty_like(amp)
    for n in range(N):
        calcium[:, :, n] = lfilter([1.0], [1.0, -gammas[n]], amp[:, :, n], axis=1)
    trace = calcium
    if nonlinearity:
        k = np.percentile(calcium.reshape(-1, N), cfg.hill_k_percentile, axis=0)
        k = np.where(k > 0, k, np.maximum(calcium.reshape(-1, N).max(axis=0), 1.0))
        trace = hill(calcium, k, cfg.hill_n)
    lo = trace.reshape(-1, N).min(axis=0)
    span = trace.reshape(-1, N).max(axis=0) - lo
    trace = (trace - lo) / np.where(span > 0, span, 1.0)
    sn = _truncated_normal(gen, cfg.noise_mean, cfg.noise_sd, cfg.noise_floor, N)
    if noise:
        shot_var = sn**cfg.poisson_noise_power * np.maximum(trace, 0.0)
        trace = trace + sn * gen.standard_normal(trace.shape) + np.sqrt(shot_var) * gen.standard_normal(trace.shape)
    return trace, {"gamma": gammas, "sn": sn}


def naive_deconvolve(trace, gamma, s_min: float = 0.1):
    """Events ``max(0, c[t] - gamma * c[t-1])`` along the last-but-one axis, zeroed below ``s_min``.

    ``trace`` is ``[T]``, ``[T, N]`` or ``[trials, T, N]``; ``gamma`` is a
    scalar or per-channel.
    """
    if np.any((np.asarray(gamma) <= 0) | (np.asarray(gamma) >= 1)):
        raise ValueError("gamma must lie in (0, 1)")
    c = np.asarray(trace, dtype=np.float64)
    axis = 0 if c.ndim == 1 else -2
    prev = np.zeros_like(c)
    src = np.moveaxis(c, axis, 0)
    dst = np.moveaxis(prev, axis, 0)
    dst[1:] = src[:-1]
    s = np.maximum(0.0, c - np.asarray(gamma) * prev)
    s[s < s_min] = 0.0
    return s


def staggered_sample(fine, phase, n_phases: int = 3, bin_width: float = 0.01) -> TimeSeriesBatch:
    """Observe channel ``n`` of ``fine [trials, T, N]`` only on its raster phase."""
    fine = np.asarray(fine, dtype=np.float64)
    K, T, N = fine.shape
    mask, times = raster_mask(N, T, phase, n_phases, bin_width)
    return TimeSeriesBatch(fine, np.broadcast_to(mask, fine.shape), times, bin_width)


def collapse_to_frames(batch: TimeSeriesBatch, n_phases: int) -> TimeSeriesBatch:
    """Frame-resolution view: each channel's one sample per frame, all sharing the frame time."""
    K, T, N = batch.shape
    if T % n_phases:
        raise ValueError("time steps must be a multiple of n_phases")
    F = T // n_phases
    vals = batch.values.reshape(K, F, n_phases, N)
    obs = batch.mask.reshape(K, F, n_phases, N)
    frames = np.where(obs, vals, 0.0).sum(axis=2)
    frame_mask = obs.any(axis=2)
    bw = batch.bin_width * n_phases
    return TimeSeriesBatch(frames, frame_mask, bw * np.arange(F), bw, batch.channel_names)


def deconvolve_staggered(traces, gamma, phase, n_phases: int, s_min: float = 0.1) -> np.ndarray:
    """Deconvolve each neuron on its own sub-sampled sequence; events land on its sample steps."""
    traces = np.asarray(traces, dtype=np.float64)
    K, T, N = traces.shape
    events = np.zeros_like(traces)
    gamma = np.asarray(gamma, dtype=np.float64)
    for p in range(n_phases):
        idx = np.flatnonzero(np.asarray(phase) == p)
        if idx.size == 0:
            continue
        sub = traces[:, p::n_phases][:, :, idx]
        events[:, p::n_phases, idx] = naive_deconvolve(sub, gamma[idx] ** n_phases, s_min)
    return events


# -- full datasets --------------------------------------------------------------------


def make_lorenz_spiking(lorenz: LorenzConfig, n_neurons: int = 30, trials_per_condition: int = 20,
                        baseline_hz: float = 3.0, w_sd: float = 0.5, seed: int = 0) -> dict:
    """Poisson spiking driven by Lorenz latents, as a dense batch plus ground truth."""
    root = RngState(seed)
    latents = lorenz_generate(lorenz, root.generator(0))
    rates, weights = rates_from_latents(latents, n_neurons, baseline_hz, root.generator(1), w_sd)
    dt = lorenz.bin_ms / 1000.0
    spikes = sample_spikes(rates, dt, root.generator(2), trials_per_condition)
    labels = np.repeat(np.arange(lorenz.n_conditions), trials_per_condition)
    return {
        "batch": TimeSeriesBatch.dense(spikes, dt),
        "latents": latents[labels],
        "rates": rates[labels],
        "condition_latents": latents,
        "weights": weights,
        "labels": labels,
    }


def make_lorenz_calcium(lorenz: LorenzConfig, calcium: CalciumConfig | None = None, n_neurons: int = 278,
                        trials_per_condition: int = 60, baseline_hz: float = 3.0, w_sd: float = 0.5,
                        seed: int = 0) -> dict:
    """Simulated two-photon data with staggered sampling.

    Returns ground truth plus two batches: ``staggered`` on the fine grid
    (each neuron observed once per frame at its phase) and ``frames`` at
    frame resolution with phase information discarded.
    """
    calcium = calcium or CalciumConfig()
    root = RngState(seed)
    dt = lorenz.bin_ms / 1000.0
    if lorenz.n_bins % calcium.n_phases:
        raise ValueError("trial length must be a multiple of n_phases fine bins")
    latents = lorenz_generate(lorenz, root.generator(0))
    rates, weights = rates_from_latents(latents, n_neurons, baseline_hz, root.generator(1), w_sd)
    spikes = sample_spikes(rates, dt, root.generator(2), trials_per_condition)
    traces, info = synth_fluorescence(spikes, calcium, root.generator(3))
    phase = random_phase_assignment(n_neurons, calcium.n_phases, root.generator(4))
    events = deconvolve_staggered(traces, info["gamma"], phase, calcium.n_phases, calcium.s_min)
    staggered = staggered_sample(events, phase, calcium.n_phases, dt)
    labels = np.repeat(np.arange(lorenz.n_conditions), trials_per_condition)
    return {
        "staggered": staggered,
        "frames": collapse_to_frames(staggered, calcium.n_phases),
        "latents": latents[labels],
        "rates": rates[labels],
        "spikes": spikes,
        "traces": traces,
        "events": events,
        "phase": phase,
        "gamma": info["gamma"],
        "sn": info["sn"],
        "labels": labels,
        "weights": weights,
    }
