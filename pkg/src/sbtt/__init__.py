"""Selective backpropagation through time for latent dynamical models of intermittently sampled data.

Missing observations are zero-filled at the input and excluded from the
loss, so their gradient is exactly zero.  The package holds a linear
dynamical system and a sequential autoencoder trained this way, synthetic
Lorenz spiking and calcium data, decoding metrics and a sweep CLI
(``sbtt-lab``).
"""

__version__ = "0.1.0"

from .emissions import EmissionKind, emission_mean, emission_nll_grad, zig_mean, zig_nll
from .lds import LdsParams, lds_forward, lds_simulate, sbtt_backward, train_lds
from .sampling import SamplingSchedule, apply_schedule, coordinated_dropout_split, random_drop_mask, raster_mask
from .seqae import SeqAeHyper, SeqAeParams, infer, train_seqae
from .tensorio import RngState, TimeSeriesBatch, load_batch, load_tensor, save_batch, save_tensor

__all__ = [
    "EmissionKind",
    "LdsParams",
    "RngState",
    "SamplingSchedule",
    "SeqAeHyper",
    "SeqAeParams",
    "TimeSeriesBatch",
    "__version__",
    "apply_schedule",
    "coordinated_dropout_split",
    "emission_mean",
    "emission_nll_grad",
    "infer",
    "lds_forward",
    "lds_simulate",
    "load_batch",
    "load_tensor",
    "random_drop_mask",
    "raster_mask",
    "save_batch",
    "save_tensor",
    "sbtt_backward",
    "train_lds",
    "train_seqae",
    "zig_mean",
    "zig_nll",
]
