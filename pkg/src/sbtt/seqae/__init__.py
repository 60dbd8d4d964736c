"""Sequential autoencoder (bidirectional GRU encoder, autonomous GRU generator) trained with SBTT."""

from .model import (
    ENCODER_BLOCKS,
    GENERATOR_BLOCKS,
    PosteriorIc,
    SeqAeHyper,
    SeqAeParams,
    encode,
    generate,
    init_params,
    kl_ic,
    loss_and_grads,
    seqae_backward,
    seqae_loss,
)
from .train import Adam, SeqAeDivergedError, TrainingLog, infer, infer_rates, split_trials, train_seqae

__all__ = [
    "Adam",
    "ENCODER_BLOCKS",
    "GENERATOR_BLOCKS",
    "PosteriorIc",
    "SeqAeDivergedError",
    "SeqAeHyper",
    "SeqAeParams",
    "TrainingLog",
    "encode",
    "generate",
    "infer",
    "infer_rates",
    "init_params",
    "kl_ic",
    "loss_and_grads",
    "seqae_backward",
    "seqae_loss",
    "split_trials",
    "train_seqae",
]
