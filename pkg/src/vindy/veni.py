"""Variational encoder and decoder heads.

The encoder trunk ends in a layer of width ``2n``: the first ``n`` outputs
are the latent mean, the last ``n`` the log-variance. Latent samples use the
reparameterization ``z = mean + noise * scale`` and latent velocities follow
by the chain rule through the same noise draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import distributions as D
from .neural import Network, forward, forward_dual, init_network, input_jvp


@dataclass
class Encoder:
    net: Network
    latent_dim: int
    prior: D.DiagonalDistribution

    def __post_init__(self):
        if self.net.n_out != 2 * self.latent_dim:
            raise ValueError("encoder output width must be twice the latent dimension")
        if self.prior.shape != (self.latent_dim,):
            raise ValueError("prior dimension must equal the latent dimension")


@dataclass
class Decoder:
    net: Network
    sigma2: float = 1.0

    @property
    def latent_dim(self) -> int:
        return self.net.n_in


def standard_prior(n: int) -> D.DiagonalDistribution:
    return D.DiagonalDistribution(D.GAUSSIAN, np.zeros(n), np.zeros(n))


def make_encoder(n_in: int, hidden, latent_dim: int, activation="elu", seed=None) -> Encoder:
    net = init_network([n_in, *hidden, 2 * latent_dim], activation, seed)
    return Encoder(net, latent_dim, standard_prior(latent_dim))


def make_decoder(latent_dim: int, hidden, n_out: int, activation="elu", seed=None) -> Decoder:
    return Decoder(init_network([latent_dim, *hidden, n_out], activation, seed))


def split_heads(out: np.ndarray, n: int):
    return out[..., :n], out[..., n:]


def encode(enc: Encoder, x) -> D.DiagonalDistribution:
    out, _ = forward(enc.net, x)
    mean, logvar = split_heads(out, enc.latent_dim)
    return D.DiagonalDistribution(D.GAUSSIAN, mean, 0.5 * logvar)


def sample_latent(dist: D.DiagonalDistribution, noise) -> np.ndarray:
    return D.reparam_sample(dist, noise)


def latent_derivative(enc: Encoder, x, x_dot, noise) -> np.ndarray:
    """``grad(mean) x_dot + noise * grad(scale) x_dot`` for the paired sample."""
    out, dout, _ = forward_dual(enc.net, x, [x_dot])
    n = enc.latent_dim
    _, logvar = split_heads(out, n)
    dmean, dlogvar = split_heads(dout[0], n)
    scale = np.exp(0.5 * logvar)
    return dmean + np.asarray(noise) * (0.5 * scale * dlogvar)


def decode_mean(dec: Decoder, z) -> np.ndarray:
    return forward(dec.net, z)[0]


def decoder_jvp(dec: Decoder, z, v) -> np.ndarray:
    return input_jvp(dec.net, z, v)


def latent_kl(dist: D.DiagonalDistribution, prior: D.DiagonalDistribution) -> float:
    """Summed KL of (possibly batched) encoder posteriors against the prior."""
    if dist.family != prior.family:
        raise D.UnsupportedPair(f"KL between {dist.family} and {prior.family} is not supported")
    p = D.DiagonalDistribution(prior.family, np.broadcast_to(prior.location, dist.shape),
                               np.broadcast_to(prior.log_scale, dist.shape))
    return D.kl_divergence(dist, p)
