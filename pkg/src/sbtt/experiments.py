"""Desk-scale experiment sweeps: random dropping, raster super-resolution, encoder retraining.

Every sweep writes ``<out>/<experiment>/<cell-id>/{ckpt, metrics.csv, manifest.json}``
plus an aggregated ``results.csv`` one level up.  A cell whose manifest
records the current config hash and ``status == "done"`` is skipped on a
rerun.  Metrics CSVs hold only deterministic quantities; wall-clock time
goes to the manifest.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import platform
import time
from pathlib import Path

import numpy as np
import scipy
from scipy.ndimage import gaussian_filter1d

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_hash
from .evaluation import decode_r2, resample_linear
from .sampling import random_drop_mask
from .seqae.train import SeqAeDivergedError, infer, train_seqae, validation_nll
from .synth import make_lorenz_calcium, make_lorenz_spiking, spectrum_peak_hz
from .tensorio import RngState, TimeSeriesBatch, atomic_write_json, read_csv, write_csv

log = logging.getLogger(__name__)

__all__ = ["run_drop_sweep", "run_retraining", "run_superres", "run_experiment"]

DROP_HEADER = ("fraction", "r2", "r2_x", "r2_y", "r2_z", "recon_nll", "best_epoch", "status")
SUPERRES_HEADER = ("downsample_factor", "peak_hz", "arm", "r2", "r2_x", "r2_y", "r2_z", "status")
RETRAIN_HEADER = ("fraction", "arm", "r2", "r2_x", "r2_y", "r2_z", "status")
NAN = float("nan")


def _versions() -> dict:
    return {"sbtt": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


class _Cell:
    """One sweep cell directory with resume-by-manifest."""

    def __init__(self, root: Path, cell_id: str, cfg_hash: str, seed: int):
        self.dir = root / cell_id
        self.id = cell_id
        self.hash = cfg_hash
        self.seed = seed
        self._t0 = None

    def done_rows(self):
        mpath = self.dir / "manifest.json"
        if not mpath.exists():
            return None
        meta = json.loads(mpath.read_text())
        if meta.get("config_hash") != self.hash or meta.get("status") != "done":
            return None
        return read_csv(self.dir / "metrics.csv")

    def __enter__(self):
        self._t0 = time.perf_counter()
        self.dir.mkdir(parents=True, exist_ok=True)
        return self

    def finish(self, header, rows, status="done", extra=None):
        write_csv(self.dir / "metrics.csv", header, rows)
        meta = {"cell": self.id, "config_hash": self.hash, "seed": self.seed, "status": status,
                "runtime_s": round(time.perf_counter() - self._t0, 3), "versions": _versions()}
        meta.update(extra or {})
        atomic_write_json(self.dir / "manifest.json", meta)

    def __exit__(self, *exc):
        return False


def _typed(rows, header):
    """Restore numeric types for rows read back from a resumed cell."""
    out = []
    for r in rows:
        vals = []
        for h in header:
            v = r[h]
            try:
                f = float(v)
                vals.append(int(f) if h in ("best_epoch", "downsample_factor") else f)
            except ValueError:
                vals.append(v)
        out.append(tuple(vals))
    return out


def _r2_cols(res):
    if res is None:
        return (NAN, NAN, NAN, NAN)
    pd = list(res.heldout_r2_per_dim) + [NAN] * 3
    return (res.heldout_r2, pd[0], pd[1], pd[2])


def _decode(cfg: ExperimentConfig, features, latents):
    e = cfg.eval
    return decode_r2(features, latents, lag=e.lag, lambdas=e.lambdas, repeats=e.repeats,
                     inner_folds=e.inner_folds)


def _features(cfg, out):
    return out[cfg.eval.features]


def _fraction_stream(fraction: float) -> int:
    # masks depend on the fraction value, not its position in the list
    return int(round(fraction * 10_000))


def _drop_mask(cfg, shape, fraction):
    return random_drop_mask(shape, fraction, RngState(cfg.seed).generator(10, _fraction_stream(fraction)))


def _root(cfg, name, out):
    root = Path(out if out is not None else cfg.out) / name
    root.mkdir(parents=True, exist_ok=True)
    return root


def _train(batch, hyper, cell, ckpt_name="ckpt", **kwargs):
    """Train and checkpoint; returns params or ``None`` after divergence."""
    try:
        params, tlog = train_seqae(batch, hyper, **kwargs)
    except SeqAeDivergedError as exc:
        log.warning("cell %s diverged: %s", cell.id, exc)
        return None, None
    save_checkpoint(params, cell.dir / ckpt_name)
    write_csv(cell.dir / f"{ckpt_name}_training.csv", tlog.HEADER, tlog.as_rows())
    return params, tlog


# -- drop sweep --------------------------------------------------------------------------


def run_drop_sweep(cfg: ExperimentConfig, out=None, figures: bool = True):
    """Seqae (Poisson) on randomly dropped Lorenz spiking; R² of factors -> latents per fraction."""
    root = _root(cfg, "drop", out)
    h = config_hash(cfg)
    data = make_lorenz_spiking(cfg.lorenz, cfg.data.n_neurons, cfg.data.trials_per_condition,
                               cfg.data.baseline_hz, cfg.data.w_sd, cfg.seed)
    batch, latents = data["batch"], data["latents"]
    hyper = dataclasses.replace(cfg.seqae, emission="poisson")
    rows = []
    for frac in cfg.sweep.drop_fractions:
        cell = _Cell(root, f"frac-{frac:.2f}", h, cfg.seed)
        prev = cell.done_rows()
        if prev is not None:
            rows += _typed(prev, DROP_HEADER)
            continue
        with cell:
            sparse = batch.with_mask(_drop_mask(cfg, batch.shape, frac))
            params, tlog = _train(sparse, hyper, cell)
            if params is None:
                row = (float(frac), NAN, NAN, NAN, NAN, NAN, -1, "diverged")
            else:
                res = _decode(cfg, _features(cfg, infer(params, sparse)), latents)
                row = (float(frac), *_r2_cols(res), float(validation_nll(params, sparse)),
                       tlog.best_epoch, "ok")
            cell.finish(DROP_HEADER, [row])
            rows.append(row)
    write_csv(root / "results.csv", DROP_HEADER, rows)
    if figures:
        from .plotting import plot_drop_sweep

        plot_drop_sweep(rows, root / "results.png")
    return rows


# -- super-resolution ------------------------------------------------------------------


def _to_fine(x, n_phases, T):
    # frame-resolution signals sit at frame starts; linear interpolation to the fine grid
    return resample_linear(x, 1.0, float(n_phases), n_out=T, axis=1)


def _smooth_arm(frames: TimeSeriesBatch, sd_ms, n_phases, T):
    sd_bins = sd_ms / (frames.bin_width * 1000.0)
    sm = gaussian_filter1d(frames.values, sd_bins, axis=1, mode="nearest") if sd_bins > 0 else frames.values
    return _to_fine(sm, n_phases, T)


def run_superres(cfg: ExperimentConfig, out=None, figures: bool = True):
    """Three arms per Lorenz speed: seqae+SBTT on the raster grid, frame-resolution seqae, smoothing.

    All arms are decoded against the same latents with the same trial
    splits.
    """
    root = _root(cfg, "superres", out)
    h = config_hash(cfg)
    n_phases = cfg.calcium.n_phases
    hyper = dataclasses.replace(cfg.seqae, emission="zig")
    rows = []
    for ds in cfg.sweep.downsample_factors:
        lcfg = dataclasses.replace(cfg.lorenz, downsample_factor=int(ds))
        data = None
        for arm in cfg.sweep.arms:
            cell = _Cell(root, f"ds-{int(ds)}/{arm}", h, cfg.seed)
            prev = cell.done_rows()
            if prev is not None:
                rows += _typed(prev, SUPERRES_HEADER)
                continue
            if data is None:
                data = make_lorenz_calcium(lcfg, cfg.calcium, cfg.data.n_neurons, cfg.data.trials_per_condition,
                                           cfg.data.baseline_hz, cfg.data.w_sd, cfg.seed)
                latents = data["latents"]
                peak = spectrum_peak_hz(latents[:, :, 2], 1000.0 / lcfg.bin_ms)
                T = latents.shape[1]
            with cell:
                status = "ok"
                if arm == "smooth":
                    feats = _smooth_arm(data["frames"], cfg.sweep.smooth_sd_ms, n_phases, T)
                else:
                    b = data["staggered"] if arm == "sbtt" else data["frames"]
                    params, _ = _train(b, hyper, cell)
                    if params is None:
                        feats, status = None, "diverged"
                    else:
                        feats = _features(cfg, infer(params, b))
                        if arm == "frame":
                            feats = _to_fine(feats, n_phases, T)
                res = None
                if feats is not None:
                    try:
                        res = _decode(cfg, feats, latents)
                    except np.linalg.LinAlgError:
                        status = "undefined"
                    else:
                        if not np.isfinite(res.heldout_r2):
                            status = "undefined"
                row = (int(ds), float(peak), arm, *_r2_cols(res), status)
                cell.finish(SUPERRES_HEADER, [row])
                rows.append(row)
    write_csv(root / "results.csv", SUPERRES_HEADER, rows)
    if figures:
        from .plotting import plot_superres

        plot_superres(rows, root / "results.png")
    return rows


# -- retraining -------------------------------------------------------------------------------


def run_retraining(cfg: ExperimentConfig, out=None, figures: bool = True):
    """Full-data model applied to sparse data, versus a sparse-trained model, versus encoder retraining."""
    root = _root(cfg, "retrain", out)
    h = config_hash(cfg)
    data = make_lorenz_spiking(cfg.lorenz, cfg.data.n_neurons, cfg.data.trials_per_condition,
                               cfg.data.baseline_hz, cfg.data.w_sd, cfg.seed)
    batch, latents = data["batch"], data["latents"]
    hyper = dataclasses.replace(cfg.seqae, emission="poisson")
    retrain_hyper = hyper
    if cfg.sweep.retrain_epochs is not None:
        retrain_hyper = dataclasses.replace(hyper, epochs=cfg.sweep.retrain_epochs,
                                            ramp_epochs=min(hyper.ramp_epochs, cfg.sweep.retrain_epochs))
    full_cell = _Cell(root, "full", h, cfg.seed)
    if full_cell.done_rows() is not None:
        full = load_checkpoint(full_cell.dir / "ckpt")
    else:
        with full_cell:
            full, _ = _train(batch, hyper, full_cell)
            full_cell.finish(("status",), [("ok" if full is not None else "diverged",)])
    rows = []
    for frac in cfg.sweep.drop_fractions:
        cell = _Cell(root, f"frac-{frac:.2f}", h, cfg.seed)
        prev = cell.done_rows()
        if prev is not None:
            rows += _typed(prev, RETRAIN_HEADER)
            continue
        with cell:
            sparse = batch.with_mask(_drop_mask(cfg, batch.shape, frac))
            arms = {}
            arms["trained_full_run_sparse"] = full
            arms["trained_sparse"], _ = _train(sparse, hyper, cell, "ckpt_sparse")
            if full is not None:
                arms["retrained_sparse"], _ = _train(sparse, retrain_hyper, cell, "ckpt_retrained",
                                                     mode="retrain_encoder", init=full)
            else:
                arms["retrained_sparse"] = None
            cell_rows = []
            for arm, params in arms.items():
                if params is None:
                    cell_rows.append((float(frac), arm, NAN, NAN, NAN, NAN, "diverged"))
                    continue
                res = _decode(cfg, _features(cfg, infer(params, sparse)), latents)
                cell_rows.append((float(frac), arm, *_r2_cols(res), "ok"))
            cell.finish(RETRAIN_HEADER, cell_rows)
            rows += cell_rows
    write_csv(root / "results.csv", RETRAIN_HEADER, rows)
    if figures:
        from .plotting import plot_retraining

        plot_retraining(rows, root / "results.png")
    return rows


RUNNERS = {"drop": run_drop_sweep, "superres": run_superres, "retrain": run_retraining}


def run_experiment(cfg: ExperimentConfig, out=None, figures: bool = True):
    root = Path(out if out is not None else cfg.out) / cfg.experiment
    root.mkdir(parents=True, exist_ok=True)
    atomic_write_json(root / "config.json", {"config": cfg.to_dict(), "config_hash": config_hash(cfg),
                                             "seed": cfg.seed, "versions": _versions()})
    return RUNNERS[cfg.experiment](cfg, out, figures)
