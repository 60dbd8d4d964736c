import numpy as np
import pytest
from scipy import stats

from sbtt.synth import (
    CalciumConfig,
    LorenzConfig,
    collapse_to_frames,
    deconvolve_staggered,
    lorenz_generate,
    make_lorenz_calcium,
    naive_deconvolve,
    rates_from_latents,
    sample_spikes,
    spectrum_peak_hz,
    staggered_sample,
    synth_fluorescence,
)
from sbtt.tensorio import RngState


def test_lorenz_fixed_point_stays():
    out = lorenz_generate(LorenzConfig(n_conditions=1), 0, init_states=[[0.0, 0.0, 0.0]])
    assert np.all(out == 0)


def test_lorenz_bounded_over_long_run():
    cfg = LorenzConfig(n_conditions=2, trial_ms=1_000_000, burn_in=0)
    out = lorenz_generate(cfg, 0)
    assert out.shape == (2, 100_000, 3)
    assert np.max(np.abs(out[:, :, 2])) < 60


def test_spectrum_peak_scales_with_downsampling():
    peaks = []
    for ds in (2, 4, 8):
        z = lorenz_generate(LorenzConfig(n_conditions=16, downsample_factor=ds), 1)[:, :, 2]
        peaks.append(spectrum_peak_hz(z, 100.0))
    bin_hz = 100.0 / 1024
    assert abs(peaks[1] - 2 * peaks[0]) <= 3 * bin_hz
    assert abs(peaks[2] - 4 * peaks[0]) <= 5 * bin_hz


def test_rates_from_latents():
    states = lorenz_generate(LorenzConfig(n_conditions=8), 0)
    rates, w = rates_from_latents(states, 50, 3.0, 1)
    assert np.all(rates > 0)
    assert np.allclose(rates.reshape(-1, 50).mean(axis=0), 3.0, rtol=1e-2)
    flat, _ = rates_from_latents(states, 4, 3.0, weights=np.zeros((3, 4)))
    assert np.allclose(flat, 3.0)


def test_sample_spikes_statistics():
    assert np.all(sample_spikes(np.zeros((3, 4)), 0.01, 0) == 0)
    counts = sample_spikes(np.full(10**5, 100.0), 0.01, 1)
    assert abs(counts.mean() - 1.0) < 3 * np.sqrt(1.0 / counts.size)
    assert counts.var() / counts.mean() == pytest.approx(1.0, abs=0.03)
    with pytest.raises(ValueError):
        sample_spikes(np.array([-1.0]))


def test_fluorescence_zero_and_impulse():
    zero, _ = synth_fluorescence(np.zeros((1, 20, 2)), CalciumConfig(), 0, nonlinearity=False, noise=False)
    assert np.all(zero == 0)
    spikes = np.zeros((1, 30, 1))
    spikes[0, 5, 0] = 1
    cfg = CalciumConfig(spike_amp_sd=0.0)
    trace, _ = synth_fluorescence(spikes, cfg, 0, nonlinearity=False, noise=False, gammas=[0.94])
    # min-max leaves a single-spike trace as c itself (min 0, max 1)
    assert np.allclose(trace[0, 5:, 0], 0.94 ** np.arange(25))
    assert np.all(trace[0, :5, 0] == 0)


def test_noise_levels_truncated_normal():
    cfg = CalciumConfig()
    _, info = synth_fluorescence(np.zeros((1, 2, 10**4)), cfg, 3)
    sn = info["sn"]
    assert np.all(sn >= cfg.noise_floor)
    a = (cfg.noise_floor - cfg.noise_mean) / cfg.noise_sd
    dist = stats.truncnorm(a, np.inf, loc=cfg.noise_mean, scale=cfg.noise_sd)
    assert abs(sn.mean() - dist.mean()) < 3 * dist.std() / np.sqrt(sn.size)
    g = info["gamma"]
    assert np.all((g >= 0.93) & (g <= 0.95))


def test_deconvolve_exact_inversion():
    gen = np.random.default_rng(0)
    spikes = (gen.random((200, 3)) < 0.1).astype(float)
    c = np.zeros_like(spikes)
    for t in range(200):
        c[t] = (0.94 * c[t - 1] if t else 0) + spikes[t]
    assert np.allclose(naive_deconvolve(c, 0.94, 0.1), spikes, atol=1e-12)
    assert np.all(naive_deconvolve(np.zeros(10), 0.9) == 0)
    with pytest.raises(ValueError):
        naive_deconvolve(np.zeros(3), 1.0)


def test_deconvolution_correlates_with_spikes():
    d = make_lorenz_calcium(LorenzConfig(n_conditions=4, downsample_factor=4), n_neurons=40,
                            trials_per_condition=10, seed=2)
    # compare events on each neuron's samples with spikes accumulated over the frame ending there
    rs = []
    for n in range(40):
        p = d["phase"][n]
        idx = np.arange(p, 90, 3)
        ev = d["events"][:, idx, n]
        sp = np.stack([d["spikes"][:, max(t - 2, 0) : t + 1, n].sum(axis=1) for t in idx], axis=1)
        if ev.std() > 0 and sp.std() > 0:
            rs.append(np.corrcoef(ev.ravel(), sp.ravel())[0, 1])
    assert np.mean(rs) > 0.25


def test_staggered_sampling_and_frames():
    gen = RngState(0).generator(0)
    fine = gen.normal(size=(2, 9, 4))
    phase = np.array([0, 1, 2, 1])
    b = staggered_sample(fine, phase, 3)
    assert np.all(b.mask.sum(axis=1) == 3)
    assert np.array_equal(b.values[b.mask], fine[b.mask])
    fr = collapse_to_frames(b, 3)
    assert fr.shape == (2, 3, 4) and fr.mask.all()
    assert fr.bin_width == pytest.approx(0.03)
    assert fr.values[1, 2, 3] == fine[1, 7, 3]


def test_deconvolve_staggered_places_events_on_samples():
    traces = np.random.default_rng(1).random((2, 12, 3))
    ev = deconvolve_staggered(traces, np.full(3, 0.9), np.array([0, 1, 2]), 3, 0.0)
    for n in range(3):
        off = np.setdiff1d(np.arange(12), np.arange(n, 12, 3))
        assert np.all(ev[:, off, n] == 0)


def test_calcium_dataset_determinism():
    kw = dict(n_neurons=6, trials_per_condition=2, seed=5)
    a = make_lorenz_calcium(LorenzConfig(n_conditions=2), **kw)
    b = make_lorenz_calcium(LorenzConfig(n_conditions=2), **kw)
    assert a["staggered"] == b["staggered"]
    assert np.array_equal(a["latents"], b["latents"])


def test_config_validation():
    with pytest.raises(ValueError):
        LorenzConfig(dt=0.0)
    with pytest.raises(ValueError):
        CalciumConfig(gamma_range=(0.5, 1.0))
    with pytest.raises(ValueError):
        CalciumConfig(noise_floor=0.0)
    with pytest.raises(ValueError):
        LorenzConfig.from_dict({"speed": 3})
