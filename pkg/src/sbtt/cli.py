"""``sbtt-lab`` command line: data synthesis, masking, training, inference, evaluation, sweeps.

Failures exit nonzero and print ``{"error": ..., "message": ...}`` on stderr.
``SBTT_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("sbtt")

EXIT_ERROR = 1


def _load_cfg(path):
    from .config import load_config

    return load_config(path)


# -- subcommands ----------------------------------------------------------------------------


def cmd_synth(args):
    from .synth import make_lorenz_calcium, make_lorenz_spiking
    from .tensorio import save_batch, save_tensor

    cfg = _load_cfg(args.config)
    out = Path(args.out)
    d = cfg.data
    if args.kind == "lorenz-spiking":
        data = make_lorenz_spiking(cfg.lorenz, d.n_neurons, d.trials_per_condition, d.baseline_hz, d.w_sd, cfg.seed)
        written = {"batch": save_batch(data["batch"], out / "spikes")}
    else:
        data = make_lorenz_calcium(cfg.lorenz, cfg.calcium, d.n_neurons, d.trials_per_condition, d.baseline_hz,
                                   d.w_sd, cfg.seed)
        written = {
            "staggered": save_batch(data["staggered"], out / "staggered"),
            "frames": save_batch(data["frames"], out / "frames"),
        }
        for key in ("spikes", "traces", "events", "phase", "gamma"):
            written[key] = save_tensor(np.asarray(data[key], dtype=np.float64), out / key, role=key)
    for key in ("latents", "rates", "labels"):
        written[key] = save_tensor(np.asarray(data[key], dtype=np.float64), out / key, role=key)
    return {"written": {k: str(v) for k, v in written.items()}}


def cmd_mask(args):
    from .sampling import SamplingSchedule, apply_schedule, random_phase_assignment
    from .tensorio import RngState, load_batch, save_batch

    batch = load_batch(args.batch)
    rng = RngState(args.seed)
    if args.kind == "raster_phase":
        period = args.n_phases * batch.bin_width
        phases = tuple(i * batch.bin_width for i in range(args.n_phases))
        sched = SamplingSchedule("raster_phase", phases=phases, frame_period=period)
        assign = random_phase_assignment(batch.n_channels, args.n_phases, rng.generator(1))
        masked = apply_schedule(batch, sched, rng.generator(0), assign)
    else:
        sched = SamplingSchedule(args.kind, drop_fraction=args.fraction)
        masked = apply_schedule(batch, sched, rng.generator(0))
    stem = save_batch(masked, args.out)
    return {"written": str(stem), "observed_fraction": float(masked.mask.mean())}


def cmd_train_lds(args):
    from .checkpoint import save_checkpoint
    from .lds import LdsParams, train_lds
    from .tensorio import RngState, load_batch, write_csv

    batch = load_batch(args.batch)
    gen = RngState(args.seed).generator(0)
    init = LdsParams(0.5 * np.eye(args.dim), 0.1 * gen.standard_normal((batch.n_channels, args.dim)))
    x0 = gen.standard_normal((batch.n_trials, args.dim))
    dataset = [(x0[k], batch.values[k], batch.mask[k]) for k in range(batch.n_trials)]
    params, hist, _ = train_lds(dataset, init, lr=(args.lr_a, args.lr_h), epochs=args.epochs,
                                  estimate_x0=True)
    out = save_checkpoint(params, args.out)
    write_csv(Path(args.out) / "training.csv", ("epoch", "loss"), list(enumerate(hist)))
    return {"checkpoint": str(out), "final_loss": float(hist[-1]),
            "eigenvalues": [str(e) for e in np.linalg.eigvals(params.A)]}


def _seqae_hyper(args):
    cfg = _load_cfg(args.config)
    hyper = cfg.seqae
    if args.emission:
        hyper = dataclasses.replace(hyper, emission=args.emission)
    return hyper


def _write_training(out, params, tlog, figures):
    from .checkpoint import save_checkpoint
    from .tensorio import write_csv

    save_checkpoint(params, Path(out) / "ckpt")
    write_csv(Path(out) / "training.csv", tlog.HEADER, tlog.as_rows())
    if figures:
        from .plotting import plot_training_curve

        plot_training_curve(tlog.as_rows(), Path(out) / "training.png")
    return {"checkpoint": str(Path(out) / "ckpt"), "best_epoch": tlog.best_epoch, "best_val": tlog.best_val}


def cmd_train_seqae(args):
    from .seqae.train import train_seqae
    from .tensorio import load_batch

    params, tlog = train_seqae(load_batch(args.batch), _seqae_hyper(args))
    return _write_training(args.out, params, tlog, not args.no_figures)


def cmd_retrain_encoder(args):
    from .checkpoint import load_checkpoint
    from .seqae.train import train_seqae
    from .tensorio import load_batch

    init = load_checkpoint(args.ckpt)
    hyper = init.hyper
    if args.config:
        cfg = _load_cfg(args.config)
        hyper = dataclasses.replace(cfg.seqae, emission=init.hyper.emission, gaussian_sd=init.hyper.gaussian_sd,
                                    enc_dim=init.hyper.enc_dim, ic_dim=init.hyper.ic_dim,
                                    gen_dim=init.hyper.gen_dim, factor_dim=init.hyper.factor_dim)
    if args.epochs is not None:
        hyper = dataclasses.replace(hyper, epochs=args.epochs)
    params, tlog = train_seqae(load_batch(args.batch), hyper, mode="retrain_encoder", init=init)
    return _write_training(args.out, params, tlog, not args.no_figures)


def cmd_infer(args):
    from .checkpoint import load_checkpoint
    from .seqae.train import infer
    from .tensorio import load_batch, save_tensor

    out = infer(load_checkpoint(args.ckpt), load_batch(args.batch))
    stem = Path(args.out)
    written = {k: str(save_tensor(v, stem.parent / f"{stem.name}.{k}", role=k)) for k, v in out.items()}
    return {"written": written}


def cmd_eval(args):
    from .evaluation import EvalReport, coherence, decode_r2, pseudo_r2, r2
    from .tensorio import atomic_write_json, load_tensor, write_csv

    pred = load_tensor(args.pred)
    truth = load_tensor(args.truth)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = set(metrics) - {"r2", "pr2", "coherence", "decode"}
    if bad:
        raise ValueError(f"unknown metrics: {sorted(bad)}")
    out = Path(args.out)
    base = out.with_suffix("")
    report = EvalReport()
    extra = {}
    p2 = pred.reshape(-1, pred.shape[-1])
    t2 = truth.reshape(-1, truth.shape[-1])
    if "r2" in metrics:
        if pred.shape != truth.shape:
            raise ValueError("r2 needs pred and truth of equal shape")
        per, mean = r2(t2, p2)
        report.r2_per_dim, report.r2_mean = per.tolist(), mean
        write_csv(f"{base}.r2.csv", ("dim", "r2"), list(enumerate(per)))
    if "decode" in metrics:
        res = decode_r2(pred, truth)
        extra["decode_r2"] = res.heldout_r2
        extra["decode_r2_per_dim"] = res.heldout_r2_per_dim.tolist()
        write_csv(f"{base}.decode.csv", ("dim", "r2"), list(enumerate(res.heldout_r2_per_dim)))
    if "pr2" in metrics:
        if pred.shape != truth.shape:
            raise ValueError("pr2 needs rates and counts of equal shape")
        vals = [pseudo_r2(t2[:, n], p2[:, n]) for n in range(t2.shape[1])]
        report.pseudo_r2_per_unit = vals
        write_csv(f"{base}.pr2.csv", ("unit", "pseudo_r2"), list(enumerate(vals)))
    if "coherence" in metrics:
        if pred.shape != truth.shape or pred.ndim != 3:
            raise ValueError("coherence needs [trials, T, dims] tensors of equal shape")
        rows, coh = [], {}
        for dim in range(pred.shape[-1]):
            f, c = coherence(pred[:, :, dim], truth[:, :, dim], sample_rate=args.sample_rate)
            coh[str(dim)] = c.tolist()
            rows += [(dim, fi, ci) for fi, ci in zip(f, c)]
        report.coherence = {"frequencies": f.tolist(), "values": coh}
        write_csv(f"{base}.coherence.csv", ("dim", "frequency", "coherence"), rows)
    atomic_write_json(out, {**report.to_dict(), **extra})
    return {"report": str(out)}


def _sweep(name):
    def run(args):
        from .experiments import run_experiment

        cfg = _load_cfg(args.config)
        if cfg.experiment != name:
            cfg = dataclasses.replace(cfg, experiment=name)
        rows = run_experiment(cfg, args.out, figures=not args.no_figures)
        root = Path(args.out if args.out is not None else cfg.out) / name
        return {"results": str(root / "results.csv"), "cells": len(rows)}

    return run


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbtt-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic Lorenz data")
    s.add_argument("kind", choices=("lorenz-spiking", "lorenz-calcium"))
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mask", help="apply a sampling schedule to a batch")
    s.add_argument("--batch", required=True)
    s.add_argument("--kind", choices=("full", "random_drop", "raster_phase"), default="random_drop")
    s.add_argument("--fraction", type=float, default=0.0)
    s.add_argument("--n-phases", type=int, default=3)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("train-lds", help="fit a linear dynamical system by SBTT")
    s.add_argument("--batch", required=True)
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--epochs", type=int, default=600)
    s.add_argument("--lr-a", type=float, default=0.004)
    s.add_argument("--lr-h", type=float, default=5.0)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_lds)

    for name, func in (("train-seqae", cmd_train_seqae), ("retrain-encoder", cmd_retrain_encoder)):
        s = sub.add_parser(name, help="train a sequential autoencoder" if func is cmd_train_seqae
                           else "retrain only the encoder of a checkpoint")
        s.add_argument("--batch", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--no-figures", action="store_true", help="skip PNG output")
        if func is cmd_train_seqae:
            s.add_argument("--config", required=True)
            s.add_argument("--emission", choices=("poisson", "zig", "gaussian"))
        else:
            s.add_argument("--ckpt", required=True)
            s.add_argument("--config")
            s.add_argument("--epochs", type=int)
        s.set_defaults(func=func)

    s = sub.add_parser("infer", help="posterior-mean rates and factors")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--batch", required=True)
    s.add_argument("--out", required=True, help="output stem; writes <stem>.rates etc.")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="compare predictions to ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--metrics", default="r2")
    s.add_argument("--sample-rate", type=float, default=100.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    for name in ("drop", "superres", "retrain"):
        s = sub.add_parser(f"sweep-{name}", help=f"run the {name} sweep")
        s.add_argument("--config", required=True)
        s.add_argument("--out", help="output root (default: config 'out')")
        s.add_argument("--no-figures", action="store_true", help="write CSVs only")
        s.set_defaults(func=_sweep(name))
    return p


def _thread_limit():
    raw = os.environ.get("SBTT_THREADS")
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError("SBTT_THREADS must be a positive integer")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _thread_limit()
        try:
            result = args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON error
        log.debug("command failed", exc_info=True)
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_ERROR
    json.dump(result, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
