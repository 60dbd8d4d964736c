"""Sequential autoencoder with an autonomous generator, trained by selective BPTT.

Data flow for a batch ``[B, T, N]``::

    zero-filled inputs -> bidirectional GRU encoder -> (mean, logvar) of z
    z -> affine -> generator GRU initial state -> T autonomous steps
    generator states -> (dropout) -> linear factors -> affine emission pre-activations

Only observed entries enter the reconstruction term, which is their mean
NLL.  Parameters live in a flat ``dict`` keyed ``<block>.<tensor>`` so the
optimiser and checkpoints can treat them uniformly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..emissions import EmissionKind, emission_mean, emission_nll_grad, n_preacts
from ..tensorio import TimeSeriesBatch, as_generator
from .gru import gru_backward, gru_forward, init_gru

__all__ = [
    "ENCODER_BLOCKS",
    "GENERATOR_BLOCKS",
    "PosteriorIc",
    "SeqAeHyper",
    "SeqAeParams",
    "encode",
    "generate",
    "init_params",
    "kl_ic",
    "loss_and_grads",
    "ramp",
    "seqae_backward",
    "seqae_loss",
]

LOGVAR_CLAMP = 10.0
ENCODER_BLOCKS = ("enc_fwd", "enc_bwd", "ic")
GENERATOR_BLOCKS = ("gen_init", "gen", "factor", "emis")


@dataclass
class SeqAeHyper:
    enc_dim: int = 64
    ic_dim: int = 64
    gen_dim: int = 100
    factor_dim: int = 40
    emission: str = "poisson"
    gaussian_sd: float = 1.0
    kl_weight_ic: float = 1e-4
    l2_generator: float = 1e-4
    dropout_rate: float = 0.0
    cd_rate: float = 0.0
    lr: float = 1e-3
    epochs: int = 100
    ramp_epochs: int = 80
    batch_size: int = 64
    seed: int = 0
    max_grad_norm: float = 200.0
    scale_prior: float = 1.0
    scale_l2: float = 1e-4
    mask_input: bool = False
    val_fraction: float = 0.2
    val_smoothing: float = 0.7

    def __post_init__(self):
        for name in ("kl_weight_ic", "l2_generator", "dropout_rate", "cd_rate", "lr", "scale_l2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.ramp_epochs < 0:
            raise ValueError("ramp_epochs must be >= 0")
        if not 0 <= self.dropout_rate < 1 or not 0 <= self.cd_rate < 1:
            raise ValueError("dropout and cd rates must lie in [0, 1)")
        EmissionKind(self.emission, self.gaussian_sd)

    @property
    def emission_kind(self) -> EmissionKind:
        return EmissionKind(self.emission, self.gaussian_sd)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SeqAeHyper":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown seqae hyperparameters: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SeqAeParams:
    """All trainable weights plus the fixed per-channel ZIG location."""

    weights: dict
    hyper: SeqAeHyper
    n_channels: int
    loc: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.loc is None:
            self.loc = np.zeros(self.n_channels)

    @property
    def emission(self) -> EmissionKind:
        return self.hyper.emission_kind

    def copy(self) -> "SeqAeParams":
        return SeqAeParams({k: v.copy() for k, v in self.weights.items()}, self.hyper,
                           self.n_channels, self.loc.copy())

    def block(self, name: str) -> dict:
        return {k: v for k, v in self.weights.items() if k.split(".")[0] == name}


@dataclass
class PosteriorIc:
    mean: np.ndarray
    log_var: np.ndarray


def ramp(epoch: int, ramp_epochs: int) -> float:
    """Regularizer weight multiplier: rises linearly from 0 to 1 over ``ramp_epochs``."""
    if ramp_epochs <= 0:
        return 1.0
    return float(min(1.0, max(epoch, 0) / ramp_epochs))


def kl_ic(post: PosteriorIc) -> np.ndarray:
    """KL(N(mean, exp(log_var)) || N(0, I)) summed over latent dims (per trial)."""
    m, lv = np.asarray(post.mean), np.asarray(post.log_var)
    return 0.5 * np.sum(np.exp(lv) + m * m - 1.0 - lv, axis=-1)


def init_params(hyper: SeqAeHyper, batch: TimeSeriesBatch, rng=None) -> SeqAeParams:
    """Random weights with emission biases matched to the observed data."""
    gen = as_generator(rng if rng is not None else hyper.seed)
    N = batch.n_channels
    E, Z, G, F = hyper.enc_dim, hyper.ic_dim, hyper.gen_dim, hyper.factor_dim
    n_in = 2 * N if hyper.mask_input else N
    P = n_preacts(hyper.emission)
    w = {}
    w.update(init_gru(n_in, E, gen, "enc_fwd"))
    w.update(init_gru(n_in, E, gen, "enc_bwd"))
    ic_b = np.zeros(2 * Z)
    ic_b[Z:] = -2.0
    w["ic.W"] = gen.standard_normal((2 * E, 2 * Z)) / np.sqrt(2 * E)
    w["ic.b"] = ic_b
    w["gen_init.W"] = gen.standard_normal((Z, G)) / np.sqrt(Z)
    w["gen_init.b"] = np.zeros(G)
    w.update(init_gru(0, G, gen, "gen"))
    w["factor.W"] = gen.standard_normal((G, F)) / np.sqrt(G)
    w["emis.W"] = 0.1 * gen.standard_normal((F, P * N)) / np.sqrt(F)

    obs = batch.mask
    counts = np.maximum(obs.sum(axis=(0, 1)), 1)
    y = batch.values
    loc = np.zeros(N)
    b = np.zeros((P, N))
    if hyper.emission == "poisson":
        b[0] = np.log(np.maximum(y.sum(axis=(0, 1)) / counts, 1e-3))
    elif hyper.emission == "gaussian":
        b[0] = y.sum(axis=(0, 1)) / counts
    else:
        nz = (y > 0) & obs
        frac = np.clip(nz.sum(axis=(0, 1)) / counts, 0.01, 0.99)
        b[0] = np.log(frac / (1 - frac))
        loc = np.array([y[:, :, n][nz[:, :, n]].min() if nz[:, :, n].any() else 0.0 for n in range(N)])
        excess = np.array([np.mean(y[:, :, n][nz[:, :, n]] - loc[n]) if nz[:, :, n].any() else 0.1
                           for n in range(N)])
        # sigmoid(0) = 1/2, so the scales start at twice the initial k and alpha
        w["emis.log_scale"] = np.stack([np.full(N, np.log(2.0)), np.log(2.0 * np.maximum(excess, 1e-3))])
    w["emis.b"] = b.reshape(-1)
    return SeqAeParams(w, hyper, N, loc)


# -- forward --------------------------------------------------------------------


def _encoder_inputs(values, mask, hyper):
    x = np.where(mask, values, 0.0)
    if hyper.mask_input:
        x = np.concatenate([x, mask.astype(np.float64)], axis=-1)
    return x


def _forward(params: SeqAeParams, x, eps, in_keep=None, gen_keep=None, T=None):
    """Full forward pass; ``eps=None`` means posterior-mean inference."""
    w, hy = params.weights, params.hyper
    B = x.shape[0]
    T = x.shape[1] if T is None else T
    E, Z, G = hy.enc_dim, hy.ic_dim, hy.gen_dim
    xd = x * in_keep if in_keep is not None else x
    h0 = np.zeros((B, E))
    hf, cf = gru_forward(w["enc_fwd.W"], w["enc_fwd.U"], w["enc_fwd.b"], xd, h0)
    hb, cb = gru_forward(w["enc_bwd.W"], w["enc_bwd.U"], w["enc_bwd.b"], xd[:, ::-1], h0)
    h_enc = np.concatenate([hf[:, -1], hb[:, -1]], axis=1)
    o = h_enc @ w["ic.W"] + w["ic.b"]
    mean, lv_raw = o[:, :Z], o[:, Z:]
    log_var = np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    std = np.exp(0.5 * log_var)
    z = mean if eps is None else mean + std * eps
    g0 = z @ w["gen_init.W"] + w["gen_init.b"]
    gs, cg = gru_forward(None, w["gen.U"], w["gen.b"], np.zeros((B, T, 0)), g0)
    gd = gs * gen_keep if gen_keep is not None else gs
    factors = gd @ w["factor.W"]
    a = factors @ w["emis.W"] + w["emis.b"]
    P = n_preacts(hy.emission)
    pre = np.moveaxis(a.reshape(B, T, P, params.n_channels), 2, 0)
    cache = dict(xd=xd, cf=cf, cb=cb, h_enc=h_enc, lv_raw=lv_raw, std=std, eps=eps, z=z,
                 cg=cg, gd=gd, gen_keep=gen_keep, factors=factors)
    return pre, PosteriorIc(mean, log_var), factors, cache


def _draws(gen, hyper, shape, G, training):
    """Reparameterisation noise and dropout masks, in a fixed draw order."""
    B, T, n_in = shape
    eps = gen.standard_normal((B, hyper.ic_dim))
    in_keep = gen_keep = None
    if training and hyper.dropout_rate > 0:
        keep = 1.0 - hyper.dropout_rate
        in_keep = (gen.random((B, T, n_in)) < keep) / keep
        gen_keep = (gen.random((B, T, G)) < keep) / keep
    return eps, in_keep, gen_keep


def encode(params: SeqAeParams, batch: TimeSeriesBatch) -> PosteriorIc:
    x = _encoder_inputs(batch.values, batch.mask, params.hyper)
    w, hy = params.weights, params.hyper
    h0 = np.zeros((x.shape[0], hy.enc_dim))
    hf, _ = gru_forward(w["enc_fwd.W"], w["enc_fwd.U"], w["enc_fwd.b"], x, h0)
    hb, _ = gru_forward(w["enc_bwd.W"], w["enc_bwd.U"], w["enc_bwd.b"], x[:, ::-1], h0)
    o = np.concatenate([hf[:, -1], hb[:, -1]], axis=1) @ w["ic.W"] + w["ic.b"]
    post = PosteriorIc(o[:, : hy.ic_dim], np.clip(o[:, hy.ic_dim :], -LOGVAR_CLAMP, LOGVAR_CLAMP))
    if not (np.all(np.isfinite(post.mean)) and np.all(np.isfinite(post.log_var))):
        raise FloatingPointError("encoder produced non-finite posterior parameters")
    return post


def generate(params: SeqAeParams, z, T: int):
    """Roll the generator out from ``z``.

    ``z`` is ``[Z]`` or ``[B, Z]``; returns ``(factors [B, T, F], pre [P, B, T, N])``
    with the batch axis dropped for a single ``z``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    w = params.weights
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    g0 = z @ w["gen_init.W"] + w["gen_init.b"]
    gs, _ = gru_forward(None, w["gen.U"], w["gen.b"], np.zeros((z.shape[0], T, 0)), g0)
    factors = gs @ w["factor.W"]
    a = factors @ w["emis.W"] + w["emis.b"]
    P = n_preacts(params.hyper.emission)
    pre = np.moveaxis(a.reshape(z.shape[0], T, P, params.n_channels), 2, 0)
    if single:
        return factors[0], pre[:, 0]
    return factors, pre


# -- loss and gradients -------------------------------------------------------------


def loss_and_grads(params: SeqAeParams, values, mask, epoch: int = 0, rng=None,
                   training: bool = True, need_grads: bool = True, masked: bool = True,
                   frozen_eps=None):
    """Total loss, its components and (optionally) gradients for every weight.

    Random draws (reparameterisation, dropout, coordinated dropout) come
    from ``rng`` in a fixed order, so the same ``rng`` seed reproduces the
    same loss surface.  ``masked=False`` takes a separate dense path that
    ignores ``mask`` entirely; it exists to check the selective path
    against ordinary training.  ``frozen_eps`` overrides the sampled
    reparameterisation noise.
    """
    hy = params.hyper
    w = params.weights
    gen = as_generator(rng if rng is not None else hy.seed)
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    B, T, N = values.shape
    n_in = 2 * N if hy.mask_input else N
    eps, in_keep, gen_keep = _draws(gen, hy, (B, T, n_in), hy.gen_dim, training)
    if frozen_eps is not None:
        eps = np.asarray(frozen_eps, dtype=np.float64)
    if masked:
        input_mask, loss_mask = mask, mask
        if training and hy.cd_rate > 0:
            held = gen.random(mask.shape) < hy.cd_rate
            input_mask, loss_mask = mask & ~held, mask & held
        x = _encoder_inputs(values, input_mask, hy)
    else:
        loss_mask = None
        x = np.concatenate([values, np.ones_like(values)], axis=-1) if hy.mask_input else values

    pre, post, factors, c = _forward(params, x, eps, in_keep, gen_keep)
    kind = hy.emission_kind
    log_scales = w.get("emis.log_scale")
    loc = params.loc
    recon, d_pre, d_scales = emission_nll_grad(kind, pre, values, loss_mask, loc, log_scales)

    r = ramp(epoch, hy.ramp_epochs)
    kl_per_trial = kl_ic(post)
    kl = float(np.mean(kl_per_trial))
    kl_w = hy.kl_weight_ic * r
    U_gen = w["gen.U"]
    l2_w = hy.l2_generator * r
    l2 = float(np.sum(U_gen * U_gen))
    scale_pen = 0.0
    if log_scales is not None:
        dev = np.exp(log_scales) - hy.scale_prior
        scale_pen = hy.scale_l2 * float(np.sum(dev * dev))
    total = recon + kl_w * kl + l2_w * l2 + scale_pen
    comps = {"recon": recon, "kl": kl_w * kl, "l2": l2_w * l2, "scale": scale_pen,
             "kl_raw": kl, "ramp": r}
    if not np.isfinite(total):
        raise FloatingPointError(f"non-finite seqae loss {comps}")
    if not need_grads:
        return total, comps, None

    g = {}
    P = pre.shape[0]
    d_a = np.moveaxis(d_pre, 0, 2).reshape(B, T, P * N)
    g["emis.W"] = np.einsum("btf,btk->fk", factors, d_a)
    g["emis.b"] = d_a.sum(axis=(0, 1))
    if log_scales is not None:
        g["emis.log_scale"] = d_scales + 2.0 * hy.scale_l2 * (np.exp(log_scales) - hy.scale_prior) * np.exp(log_scales)
    d_f = d_a @ w["emis.W"].T
    g["factor.W"] = np.einsum("btg,btf->gf", c["gd"], d_f)
    d_gs = d_f @ w["factor.W"].T
    if c["gen_keep"] is not None:
        d_gs = d_gs * c["gen_keep"]
    _, dU, db, _, d_g0 = gru_backward(None, U_gen, c["cg"], d_gs)
    g["gen.U"] = dU + 2.0 * l2_w * U_gen
    g["gen.b"] = db
    g["gen_init.W"] = c["z"].T @ d_g0
    g["gen_init.b"] = d_g0.sum(axis=0)
    d_z = d_g0 @ w["gen_init.W"].T

    d_mean = d_z + kl_w * post.mean / B
    d_lv = kl_w * 0.5 * (np.exp(post.log_var) - 1.0) / B
    if eps is not None:
        d_lv = d_lv + d_z * eps * 0.5 * c["std"]
    d_lv = d_lv * (np.abs(c["lv_raw"]) < LOGVAR_CLAMP)
    d_o = np.concatenate([d_mean, d_lv], axis=1)
    g["ic.W"] = c["h_enc"].T @ d_o
    g["ic.b"] = d_o.sum(axis=0)
    d_henc = d_o @ w["ic.W"].T
    E = hy.enc_dim
    for name, cache, d_last in (("enc_fwd", c["cf"], d_henc[:, :E]), ("enc_bwd", c["cb"], d_henc[:, E:])):
        d_hs = np.zeros((B, T, E))
        d_hs[:, -1] = d_last
        dW, dU, db, _, _ = gru_backward(w[f"{name}.W"], w[f"{name}.U"], cache, d_hs)
        g[f"{name}.W"], g[f"{name}.U"], g[f"{name}.b"] = dW, dU, db
    return total, comps, g


def seqae_loss(params, batch: TimeSeriesBatch, rng=None, epoch: int = 0, training: bool = True):
    """``(total, components)`` for a batch; see :func:`loss_and_grads`."""
    total, comps, _ = loss_and_grads(params, batch.values, batch.mask, epoch, rng,
                                     training=training, need_grads=False)
    return total, comps


def seqae_backward(params, batch: TimeSeriesBatch, rng=None, epoch: int = 0, training: bool = True):
    """Gradients for every weight, using the same random draws as :func:`seqae_loss`."""
    return loss_and_grads(params, batch.values, batch.mask, epoch, rng, training=training)[2]
