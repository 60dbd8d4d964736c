import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbtt.sampling import (
    SamplingSchedule,
    apply_schedule,
    coordinated_dropout_split,
    drop_count,
    random_drop_mask,
    raster_mask,
)
from sbtt.tensorio import TimeSeriesBatch


def test_fraction_extremes():
    assert random_drop_mask((2, 3, 4), 0.0, 0).all()
    assert not random_drop_mask((2, 3, 4), 1.0, 0).any()


def test_exact_count_per_slice():
    # round(0.7 * 152) = 106 dropped, 46 kept in every (trial, time) slice
    m = random_drop_mask((4, 50, 152), 0.7, 3)
    assert drop_count(0.7, 152) == 106
    assert np.all(m.sum(axis=-1) == 46)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_drop_count_property(frac, n, seed):
    m = random_drop_mask((2, 3, n), frac, seed)
    assert np.all(m.sum(axis=-1) == n - int(round(frac * n)))


def test_drop_masks_are_uniform_over_channels():
    m = random_drop_mask((200, 100, 10), 0.5, 1)
    per_chan = m.mean(axis=(0, 1))
    assert np.all(np.abs(per_chan - 0.5) < 0.02)


def test_raster_phases():
    mask, times = raster_mask(3, 9, [0, 1, 2], 3, 0.01)
    assert np.array_equal(np.flatnonzero(mask[:, 2]), [2, 5, 8])
    assert np.all(mask.sum(axis=1) == 1)
    # each channel sampled at 33.3 Hz
    assert np.allclose(np.diff(times[mask[:, 0], 0]), 0.03)
    full, _ = raster_mask(4, 5, np.zeros(4, int), 1)
    assert full.all()


def test_raster_rejects_bad_input():
    with pytest.raises(ValueError):
        raster_mask(2, 10, [0, 1], 3)
    with pytest.raises(ValueError):
        raster_mask(2, 9, [0, 3], 3)


def test_coordinated_dropout_split():
    mask = np.random.default_rng(0).random((50, 100, 40)) < 0.5
    inp, loss = coordinated_dropout_split(mask, 0.0, 0)
    assert np.array_equal(inp, mask) and not loss.any()
    inp, loss = coordinated_dropout_split(mask, 0.5, 1)
    assert not np.any(inp & loss)
    assert np.array_equal(inp | loss, mask)
    n = mask.sum()
    assert abs(loss.sum() - 0.5 * n) < 3 * np.sqrt(n * 0.25)


def test_schedule_validation():
    with pytest.raises(ValueError):
        SamplingSchedule("random_drop", drop_fraction=1.5)
    with pytest.raises(ValueError):
        SamplingSchedule("raster_phase", phases=(0.0, 0.04), frame_period=0.03)
    with pytest.raises(ValueError):
        SamplingSchedule("sometimes")


def test_apply_schedule_never_unmasks(batch):
    out = apply_schedule(batch, SamplingSchedule("random_drop", drop_fraction=0.5), 0)
    assert not np.any(out.mask & ~batch.mask)
    assert apply_schedule(batch, SamplingSchedule(), 0) is batch


def test_apply_raster_schedule_sets_phase_times():
    b = TimeSeriesBatch.dense(np.ones((1, 9, 3)), 0.01)
    sched = SamplingSchedule("raster_phase", phases=(0.0, 0.011, 0.022), frame_period=0.033)
    out = apply_schedule(b, sched, 0, phase_assignment=[0, 1, 2])
    assert out.sample_times.shape == (9, 3)
    assert out.sample_times[1, 1] == pytest.approx(0.011)
    assert out.sample_times[5, 2] == pytest.approx(0.052)
    assert out.mask.sum() == 9
