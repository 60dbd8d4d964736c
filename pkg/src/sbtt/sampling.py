"""Observation-mask generators: random dropping, raster phases, coordinated dropout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensorio import TimeSeriesBatch, as_generator

__all__ = [
    "SamplingSchedule",
    "apply_schedule",
    "coordinated_dropout_split",
    "drop_count",
    "random_drop_mask",
    "random_phase_assignment",
    "raster_mask",
]

KINDS = ("full", "random_drop", "raster_phase")


@dataclass(frozen=True)
class SamplingSchedule:
    kind: str = "full"
    drop_fraction: float = 0.0
    phases: tuple[float, ...] = field(default=())
    frame_period: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampling kind {self.kind!r}")
        if not 0.0 <= self.drop_fraction <= 1.0:
            raise ValueError("drop_fraction must lie in [0, 1]")
        object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))
        if self.kind == "raster_phase":
            if not self.phases or self.frame_period <= 0:
                raise ValueError("raster_phase needs phases and a positive frame_period")
            if any(not 0.0 <= p < self.frame_period for p in self.phases):
                raise ValueError("phases must lie in [0, frame_period)")


def drop_count(fraction: float, n_channels: int) -> int:
    # Python's round() is round-half-to-even.
    return int(round(fraction * n_channels))


def random_drop_mask(shape, fraction: float, rng) -> np.ndarray:
    """Drop exactly ``round(fraction * channels)`` channels per (trial, time) slice."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n_trials, n_time, n_chan = shape
    n_drop = drop_count(fraction, n_chan)
    if n_drop == 0:
        return np.ones(shape, dtype=bool)
    if n_drop == n_chan:
        return np.zeros(shape, dtype=bool)
    gen = as_generator(rng)
    # ranks of iid uniforms give a uniform random subset without replacement
    keys = gen.random(shape)
    order = np.argsort(keys, axis=-1, kind="stable")
    mask = np.ones(shape, dtype=bool)
    np.put_along_axis(mask, order[..., :n_drop], False, axis=-1)
    return mask


def random_phase_assignment(n_channels: int, n_phases: int, rng) -> np.ndarray:
    return as_generator(rng).integers(0, n_phases, size=n_channels)


def raster_mask(n_channels: int, n_fine_steps: int, phase_assignment, n_phases: int,
                bin_width: float = 0.01, t0: float = 0.0):
    """Channel ``c`` is observed at fine steps ``t`` with ``t % n_phases == phase[c]``.

    Returns ``(mask [T, N], sample_times [T, N])``; each channel's sample
    times are the fine-grid times of the steps, so the per-channel time
    axis stays strictly increasing.
    """
    phase = np.asarray(phase_assignment, dtype=int)
    if phase.shape != (n_channels,):
        raise ValueError("need one phase index per channel")
    if n_phases < 1 or np.any((phase < 0) | (phase >= n_phases)):
        raise ValueError("phase indices must lie in [0, n_phases)")
    if n_fine_steps % n_phases:
        raise ValueError("n_fine_steps must be a multiple of n_phases")
    t = np.arange(n_fine_steps)
    mask = (t[:, None] % n_phases) == phase[None, :]
    times = np.broadcast_to((t0 + bin_width * t)[:, None], (n_fine_steps, n_channels)).copy()
    return mask, times


def coordinated_dropout_split(batch_or_mask, cd_rate: float, rng):
    """Partition observed entries into an input part and a held-out loss part."""
    mask = batch_or_mask.mask if isinstance(batch_or_mask, TimeSeriesBatch) else np.asarray(batch_or_mask, bool)
    if not 0.0 <= cd_rate < 1.0:
        raise ValueError("cd_rate must lie in [0, 1)")
    if cd_rate == 0.0:
        return mask.copy(), np.zeros_like(mask)
    held = as_generator(rng).random(mask.shape) < cd_rate
    loss_mask = mask & held
    return mask & ~held, loss_mask


def apply_schedule(batch: TimeSeriesBatch, schedule: SamplingSchedule, rng,
                   phase_assignment=None) -> TimeSeriesBatch:
    """Mask ``batch`` according to ``schedule``; never un-masks an entry."""
    if schedule.kind == "full":
        return batch
    if schedule.kind == "random_drop":
        new = random_drop_mask(batch.shape, schedule.drop_fraction, rng)
        return batch.with_mask(batch.mask & new)
    n_phases = len(schedule.phases)
    if phase_assignment is None:
        phase_assignment = random_phase_assignment(batch.n_channels, n_phases, rng)
    phase_assignment = np.asarray(phase_assignment, dtype=int)
    mask, times = raster_mask(batch.n_channels, batch.n_time, phase_assignment, n_phases,
                              batch.bin_width, float(np.ravel(batch.sample_times)[0]))
    # shift each channel from its idealized grid offset to the configured phase
    offsets = np.asarray(schedule.phases)[phase_assignment] - phase_assignment * batch.bin_width
    return TimeSeriesBatch(batch.values, batch.mask & mask[None], times + offsets[None, :],
                           batch.bin_width, batch.channel_names)
