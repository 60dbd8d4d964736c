import dataclasses
import json

import numpy as np
import pytest

from sbtt.checkpoint import load_checkpoint, save_checkpoint
from sbtt.config import ExperimentConfig, config_hash, load_config
from sbtt.experiments import run_drop_sweep, run_experiment, run_retraining, run_superres
from sbtt.lds import LdsParams
from sbtt.seqae.model import ENCODER_BLOCKS

TINY = {
    "seed": 3,
    "data": {"n_neurons": 6, "trials_per_condition": 5, "baseline_hz": 20.0},
    "lorenz": {"n_conditions": 2, "trial_ms": 120},
    "seqae": {"enc_dim": 4, "ic_dim": 3, "gen_dim": 6, "factor_dim": 3, "epochs": 2, "ramp_epochs": 1,
              "batch_size": 4, "lr": 0.01},
    "eval": {"repeats": 2, "inner_folds": 2, "lambdas": [0.1, 10.0]},
}


def tiny_cfg(experiment, **sweep):
    return ExperimentConfig.from_dict({**TINY, "experiment": experiment, "sweep": sweep})


def test_config_requires_seed_and_rejects_unknown(tmp_path):
    with pytest.raises(ValueError, match="seed"):
        ExperimentConfig.from_dict({"experiment": "drop"})
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"experiment": "drop", "seed": 0, "colour": "red"})
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"experiment": "drop", "seed": 0, "data": {"neurons": 3}})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"experiment": "drop", "seed": 0, "seqae": {"seed": 1}})
    p = tmp_path / "c.toml"
    p.write_text('experiment = "drop"\nseed = 4\n[sweep]\ndrop_fractions = [0.0, 0.5]\n')
    cfg = load_config(p)
    assert cfg.seqae.seed == 4 and cfg.sweep.drop_fractions == (0.0, 0.5)
    assert config_hash(cfg) == config_hash(load_config(p))
    assert config_hash(cfg) != config_hash(dataclasses.replace(cfg, seed=5))


def test_checkpoint_round_trip(tmp_path):
    from oracles import tiny_seqae

    params, _, _ = tiny_seqae("zig")
    back = load_checkpoint(save_checkpoint(params, tmp_path / "ck"))
    assert back.hyper == params.hyper and np.array_equal(back.loc, params.loc)
    assert all(np.array_equal(back.weights[k], params.weights[k]) for k in params.weights)
    lds = load_checkpoint(save_checkpoint(LdsParams(np.eye(2), np.ones((3, 2))), tmp_path / "lds"))
    assert np.array_equal(lds.H, np.ones((3, 2)))


def test_single_fraction_gives_single_row(tmp_path):
    rows = run_drop_sweep(tiny_cfg("drop", drop_fractions=[0.0]), tmp_path, figures=False)
    assert len(rows) == 1
    text = (tmp_path / "drop" / "results.csv").read_text()
    assert text.splitlines()[0] == "fraction,r2,r2_x,r2_y,r2_z,recon_nll,best_epoch,status"


def test_drop_sweep_is_deterministic_resumable_and_plots(tmp_path):
    cfg = tiny_cfg("drop", drop_fractions=[0.0, 0.5])
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b", figures=False)
    a, b = tmp_path / "a" / "drop", tmp_path / "b" / "drop"
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    for cell in ("frac-0.00", "frac-0.50"):
        assert (a / cell / "metrics.csv").read_bytes() == (b / cell / "metrics.csv").read_bytes()
        man = json.loads((a / cell / "manifest.json").read_text())
        assert man["config_hash"] == config_hash(cfg) and man["seed"] == 3 and "numpy" in man["versions"]
        assert (a / cell / "ckpt" / "checkpoint.json").exists()
    assert (a / "results.png").stat().st_size > 0
    assert not (b / "results.png").exists()
    # a rerun skips finished cells
    stamp = (a / "frac-0.50" / "manifest.json").stat().st_mtime_ns
    run_experiment(cfg, tmp_path / "a", figures=False)
    assert (a / "frac-0.50" / "manifest.json").stat().st_mtime_ns == stamp
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


def test_superres_arms_share_splits(tmp_path):
    cfg = ExperimentConfig.from_dict({
        **TINY, "experiment": "superres", "lorenz": {"n_conditions": 2, "trial_ms": 90},
        "data": {"n_neurons": 9, "trials_per_condition": 5, "baseline_hz": 20.0},
        "sweep": {"downsample_factors": [2]},
    })
    rows = run_superres(cfg, tmp_path, figures=True)
    assert [r[2] for r in rows] == ["sbtt", "frame", "smooth"]
    assert all(r[-1] in ("ok", "undefined") for r in rows)
    assert (tmp_path / "superres" / "results.png").exists()


def test_superres_constant_latents_flagged(tmp_path):
    from sbtt.evaluation import decode_r2

    res = decode_r2(np.random.default_rng(0).normal(size=(10, 6, 2)), np.ones((10, 6, 3)))
    assert np.isnan(res.heldout_r2)


def test_retraining_freezes_generator_and_matches_at_zero(tmp_path):
    cfg = tiny_cfg("retrain", drop_fractions=[0.0, 0.8], retrain_epochs=2)
    rows = run_retraining(cfg, tmp_path, figures=False)
    r = {(row[0], row[1]): row[2] for row in rows}
    assert r[(0.0, "trained_sparse")] == r[(0.0, "trained_full_run_sparse")]
    full = load_checkpoint(tmp_path / "retrain" / "full" / "ckpt")
    re = load_checkpoint(tmp_path / "retrain" / "frac-0.80" / "ckpt_retrained")
    for k in full.weights:
        if k.split(".")[0] not in ENCODER_BLOCKS:
            assert full.weights[k].tobytes() == re.weights[k].tobytes()
