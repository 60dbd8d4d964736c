"""Experiment configuration: one TOML file, unknown keys rejected, seed mandatory.

Example::

    experiment = "drop"
    seed = 0
    out = "runs"

    [data]
    n_neurons = 30
    trials_per_condition = 25

    [seqae]
    epochs = 60

    [sweep]
    drop_fractions = [0.0, 0.6]
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .seqae.model import SeqAeHyper
from .synth import CalciumConfig, LorenzConfig

__all__ = [
    "DataConfig",
    "EvalConfig",
    "ExperimentConfig",
    "SweepConfig",
    "config_hash",
    "load_config",
]

EXPERIMENTS = ("drop", "superres", "retrain")


def _strict(cls, d, where):
    if not isinstance(d, dict):
        raise ValueError(f"[{where}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown keys in [{where}]: {sorted(unknown)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass(frozen=True)
class DataConfig:
    n_neurons: int = 30
    trials_per_condition: int = 25
    baseline_hz: float = 10.0
    w_sd: float = 0.5

    def __post_init__(self):
        if self.n_neurons < 1 or self.trials_per_condition < 1:
            raise ValueError("n_neurons and trials_per_condition must be >= 1")
        if self.baseline_hz <= 0:
            raise ValueError("baseline_hz must be positive")


@dataclass(frozen=True)
class SweepConfig:
    drop_fractions: tuple = (0.0, 0.2, 0.4, 0.6, 0.7, 0.8, 0.9)
    downsample_factors: tuple = (1, 3, 6, 9)
    arms: tuple = ("sbtt", "frame", "smooth")
    smooth_sd_ms: float = 40.0
    retrain_epochs: int | None = None

    def __post_init__(self):
        if any(not 0 <= f < 1 for f in self.drop_fractions):
            raise ValueError("drop fractions must lie in [0, 1)")
        if any(int(d) != d or d < 1 for d in self.downsample_factors):
            raise ValueError("downsample factors must be positive integers")
        bad = set(self.arms) - {"sbtt", "frame", "smooth"}
        if bad:
            raise ValueError(f"unknown arms: {sorted(bad)}")


@dataclass(frozen=True)
class EvalConfig:
    lambdas: tuple = tuple(float(x) for x in (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4))
    repeats: int = 5
    inner_folds: int = 5
    features: str = "factors"
    lag: int = 0

    def __post_init__(self):
        if not self.lambdas:
            raise ValueError("lambdas must be non-empty")
        if self.features not in ("factors", "rates"):
            raise ValueError("features must be 'factors' or 'rates'")
        if self.repeats < 2 or self.inner_folds < 2:
            raise ValueError("repeats and inner_folds must be >= 2")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    out: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    lorenz: LorenzConfig = field(default_factory=lambda: LorenzConfig(n_conditions=20))
    calcium: CalciumConfig = field(default_factory=CalciumConfig)
    seqae: SeqAeHyper = field(default_factory=SeqAeHyper)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.seqae.seed != self.seed:
            # the top-level seed drives everything
            object.__setattr__(self, "seqae", dataclasses.replace(self.seqae, seed=self.seed))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "seed" not in d:
            raise ValueError("config must set a top-level seed")
        if "experiment" not in d:
            raise ValueError("config must set experiment")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown top-level keys: {sorted(unknown)}")
        if "seed" in d.get("seqae", {}):
            raise ValueError("set the seed at top level, not in [seqae]")
        tables = {
            "data": DataConfig, "lorenz": LorenzConfig, "calcium": CalciumConfig,
            "sweep": SweepConfig, "eval": EvalConfig,
        }
        for key, typ in tables.items():
            if key in d:
                d[key] = _strict(typ, d[key], key)
        if "seqae" in d:
            if not isinstance(d["seqae"], dict):
                raise ValueError("[seqae] must be a table")
            d["seqae"] = SeqAeHyper.from_dict({**d["seqae"], "seed": d["seed"]})
        return cls(**d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return ExperimentConfig.from_dict(tomllib.load(fh))


def config_hash(cfg: ExperimentConfig | dict) -> str:
    d = cfg.to_dict() if isinstance(cfg, ExperimentConfig) else cfg
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
