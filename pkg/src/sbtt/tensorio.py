"""Data containers, observation masks, seeded RNG streams and on-disk tensors.

Tensors are stored as ``<name>.manifest.json`` next to ``<name>.bin``; the
payload is raw little-endian, row-major.  A :class:`TimeSeriesBatch` on disk
is a small batch manifest pointing at three such tensors.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "RNG_ALGORITHM",
    "RngState",
    "TensorFileError",
    "TimeSeriesBatch",
    "load_batch",
    "load_tensor",
    "save_batch",
    "save_tensor",
    "write_csv",
    "zero_fill",
]

# Philox4x64-10 is counter based, so a (seed, stream) pair gives the same
# stream on every platform numpy supports.
RNG_ALGORITHM = "philox4x64-10"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "u8": np.dtype("u1")}


class TensorFileError(ValueError):
    """Raised when a tensor or batch on disk is malformed."""


@dataclass(frozen=True)
class RngState:
    """Seed plus generator id.  ``generator(*stream)`` derives independent streams."""

    seed: int
    algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.algorithm != RNG_ALGORITHM:
            raise ValueError(f"unsupported rng algorithm {self.algorithm!r}")

    def generator(self, *stream: int) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.seed), spawn_key=tuple(int(s) for s in stream))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, *stream: int) -> "RngState":
        """A new state whose seed is drawn deterministically from this one."""
        seed = int(self.generator(*stream).integers(0, 2**63, dtype=np.int64))
        return RngState(seed, self.algorithm)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngState):
        return rng.generator()
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngState(0 if rng is None else int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


@dataclass(frozen=True, eq=False)
class TimeSeriesBatch:
    """Trials x time x channels values with a boolean observation mask.

    Masked entries are always stored as zero.  ``sample_times`` is either
    per time step ``[T]`` or per time step and channel ``[T, N]``.
    """

    values: np.ndarray
    mask: np.ndarray
    sample_times: np.ndarray
    bin_width: float
    channel_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise ValueError("values must be [trials, time, channels]")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != values.shape:
            raise ValueError(f"mask shape {mask.shape} != values shape {values.shape}")
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        values = np.where(mask, values, 0.0).astype(values.dtype, copy=False)
        times = np.asarray(self.sample_times, dtype=np.float64)
        n_time, n_chan = values.shape[1:]
        if times.shape not in ((n_time,), (n_time, n_chan)):
            raise ValueError(f"sample_times shape {times.shape} does not fit {values.shape}")
        if n_time > 1 and not np.all(np.diff(times, axis=0) > 0):
            raise ValueError("sample_times must be strictly increasing along time")
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        names = self.channel_names
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != n_chan:
                raise ValueError("channel_names length does not match channels")
        values.setflags(write=False)
        mask.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "sample_times", times)
        object.__setattr__(self, "bin_width", float(self.bin_width))
        object.__setattr__(self, "channel_names", names)

    @classmethod
    def dense(cls, values, bin_width: float, t0: float = 0.0, **kwargs) -> "TimeSeriesBatch":
        values = np.asarray(values, dtype=np.float64)
        times = t0 + bin_width * np.arange(values.shape[1])
        return cls(values, np.ones(values.shape, bool), times, bin_width, **kwargs)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def n_trials(self) -> int:
        return self.values.shape[0]

    @property
    def n_time(self) -> int:
        return self.values.shape[1]

    @property
    def n_channels(self) -> int:
        return self.values.shape[2]

    def with_mask(self, mask) -> "TimeSeriesBatch":
        """Same data under a new mask (entries outside it are zeroed)."""
        return TimeSeriesBatch(self.values, mask, self.sample_times, self.bin_width, self.channel_names)

    def select_trials(self, idx) -> "TimeSeriesBatch":
        return TimeSeriesBatch(
            self.values[idx], self.mask[idx], self.sample_times, self.bin_width, self.channel_names
        )

    def select_channels(self, idx) -> "TimeSeriesBatch":
        idx = np.asarray(idx)
        times = self.sample_times if self.sample_times.ndim == 1 else self.sample_times[:, idx]
        names = None if self.channel_names is None else tuple(np.asarray(self.channel_names)[idx])
        return TimeSeriesBatch(self.values[:, :, idx], self.mask[:, :, idx], times, self.bin_width, names)

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesBatch):
            return NotImplemented
        return (
            self.values.dtype == other.values.dtype
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.sample_times, other.sample_times)
            and self.bin_width == other.bin_width
            and self.channel_names == other.channel_names
        )

    __hash__ = None


def zero_fill(batch: TimeSeriesBatch) -> np.ndarray:
    """Values with every unobserved entry set to exactly zero."""
    return np.where(batch.mask, batch.values, 0.0).astype(batch.values.dtype, copy=False)


# -- tensor files -------------------------------------------------------------


def _stem(path) -> Path:
    path = Path(path)
    for suffix in (".manifest.json", ".bin"):
        if path.name.endswith(suffix):
            return path.with_name(path.name[: -len(suffix)])
    return path


def _dtype_code(arr: np.ndarray) -> str:
    if arr.dtype == np.bool_ or arr.dtype == np.uint8:
        return "u8"
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.float64:
        return "f64"
    raise TensorFileError(f"unsupported dtype {arr.dtype}")


def save_tensor(arr, path, role: str = "tensor", dtype: str | None = None) -> Path:
    """Write ``arr`` as ``<path>.manifest.json`` + ``<path>.bin``; returns the stem."""
    arr = np.asarray(arr)
    code = dtype or _dtype_code(arr)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code])
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = {"dims": [int(d) for d in arr.shape], "dtype": code, "order": "row-major", "role": role}
    with open(f"{stem}.bin", "wb") as fh:
        fh.write(payload.tobytes(order="C"))
    with open(f"{stem}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return stem


def load_tensor(path, with_manifest: bool = False):
    stem = _stem(path)
    try:
        with open(f"{stem}.manifest.json") as fh:
            manifest = json.load(fh)
        raw = Path(f"{stem}.bin").read_bytes()
    except FileNotFoundError as exc:
        raise TensorFileError(f"missing tensor file: {exc.filename}") from exc
    except json.JSONDecodeError as exc:
        raise TensorFileError(f"bad manifest for {stem}: {exc}") from exc
    if manifest.get("order", "row-major") != "row-major":
        raise TensorFileError("only row-major payloads are supported")
    try:
        dt = _DTYPES[manifest["dtype"]]
        dims = [int(d) for d in manifest["dims"]]
    except KeyError as exc:
        raise TensorFileError(f"manifest for {stem} lacks {exc}") from exc
    expected = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(raw) != expected:
        raise TensorFileError(
            f"{stem}.bin holds {len(raw)} bytes, manifest dims {dims} need {expected}"
        )
    arr = np.frombuffer(raw, dtype=dt).reshape(dims).copy()
    if dt.kind == "f":
        arr = arr.astype(dt.newbyteorder("="))
    return (arr, manifest) if with_manifest else arr


def save_batch(batch: TimeSeriesBatch, path, dtype: str | None = None) -> Path:
    """Write a batch as a batch manifest plus values, mask and sample_times tensors."""
    stem = _stem(path)
    code = dtype or _dtype_code(batch.values)
    times_role = "sample_times/per_time" if batch.sample_times.ndim == 1 else "sample_times/per_channel"
    save_tensor(batch.values, f"{stem}.values", role="values", dtype=code)
    save_tensor(batch.mask.astype(np.uint8), f"{stem}.mask", role="mask", dtype="u8")
    save_tensor(batch.sample_times, f"{stem}.sample_times", role=times_role, dtype="f64")
    manifest = {
        "kind": "TimeSeriesBatch",
        "dims": list(batch.shape),
        "bin_width": batch.bin_width,
        "channel_names": None if batch.channel_names is None else list(batch.channel_names),
        "tensors": {
            "values": f"{stem.name}.values",
            "mask": f"{stem.name}.mask",
            "sample_times": f"{stem.name}.sample_times",
        },
    }
    with open(f"{stem}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return stem


def load_batch(path) -> TimeSeriesBatch:
    stem = _stem(path)
    try:
        with open(f"{stem}.manifest.json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise TensorFileError(f"missing batch manifest {stem}.manifest.json") from exc
    if manifest.get("kind") != "TimeSeriesBatch":
        raise TensorFileError(f"{stem} is not a TimeSeriesBatch manifest")
    parts = {k: stem.parent / v for k, v in manifest["tensors"].items()}
    values = load_tensor(parts["values"])
    mask = load_tensor(parts["mask"])
    times, tman = load_tensor(parts["sample_times"], with_manifest=True)
    if list(values.shape) != list(manifest["dims"]) or mask.shape != values.shape:
        raise TensorFileError(f"dimension mismatch in batch {stem}")
    if mask.max(initial=0) > 1:
        raise TensorFileError("mask payload must hold only 0/1 bytes")
    want_ndim = 2 if tman.get("role") == "sample_times/per_channel" else 1
    if times.ndim != want_ndim:
        raise TensorFileError(f"sample_times role {tman.get('role')!r} does not match dims {times.shape}")
    try:
        return TimeSeriesBatch(
            values, mask.astype(bool), times, manifest["bin_width"], manifest.get("channel_names")
        )
    except ValueError as exc:
        raise TensorFileError(str(exc)) from exc


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """RFC-4180 CSV with '.' decimals; floats use repr so reruns are byte-stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, (np.integer,)):
            return str(int(v))
        return v

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def atomic_write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)
