"""Checkpoints: one tensor file per weight plus a JSON manifest with hyperparameters."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .lds import LdsParams
from .seqae.model import SeqAeHyper, SeqAeParams
from .tensorio import TensorFileError, atomic_write_json, load_tensor, save_tensor

__all__ = ["load_checkpoint", "save_checkpoint"]

MANIFEST = "checkpoint.json"


def save_checkpoint(params, directory) -> Path:
    """Write a seqae or LDS checkpoint into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(params, SeqAeParams):
        tensors = dict(params.weights)
        tensors["_loc"] = params.loc
        meta = {"model": "seqae", "hyper": params.hyper.to_dict(), "n_channels": params.n_channels}
    elif isinstance(params, LdsParams):
        tensors = {"A": params.A, "H": params.H}
        meta = {"model": "lds"}
    else:
        raise TypeError(f"cannot checkpoint {type(params).__name__}")
    for key, arr in sorted(tensors.items()):
        save_tensor(np.asarray(arr, dtype=np.float64), directory / key, role=f"weight/{key}")
    meta["tensors"] = sorted(tensors)
    atomic_write_json(directory / MANIFEST, meta)
    return directory


def load_checkpoint(directory):
    directory = Path(directory)
    try:
        meta = json.loads((directory / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise TensorFileError(f"no checkpoint manifest in {directory}") from exc
    tensors = {k: load_tensor(directory / k) for k in meta["tensors"]}
    if meta["model"] == "lds":
        return LdsParams(tensors["A"], tensors["H"])
    if meta["model"] == "seqae":
        loc = tensors.pop("_loc")
        return SeqAeParams(tensors, SeqAeHyper.from_dict(meta["hyper"]), int(meta["n_channels"]), loc)
    raise TensorFileError(f"unknown checkpoint model {meta['model']!r}")
