"""Trajectory completion heads: interpolation keels and output decoders.

Stage two turns each endpoint proposal into a full future trajectory.
The keel — the straight-line sequence from the last observed point to
the proposed endpoint — anchors the decoder; output heads come in a
deterministic flavor (plain MLP) and a stochastic one (Gaussian latent
with reparameterized sampling, regularized toward the standard normal).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .transformer import Linear, MLP


def interpolation_keel(x_last, endpoint: Tensor, horizon: int) -> Tensor:
    """Evenly spaced points from just past x_last up to the endpoint.

    Row t (1-based) is (1 - t/T) * x_last + (t/T) * endpoint. The final
    row reuses the endpoint tensor itself, so it matches bit for bit.
    Differentiable in the endpoint.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    lead = endpoint.shape[:-1]
    ep = ad.reshape(endpoint, (*lead, 1, 2))
    if horizon == 1:
        return ep
    base = Tensor(np.asarray(x_last, dtype=np.float64)[..., None, :])  # [..., 1, 2]
    lam = (np.arange(1, horizon, dtype=np.float64) / horizon)[:, None]  # [T-1, 1]
    body = ad.add(
        ad.elementwise_mul(Tensor(1.0 - lam), base),
        ad.elementwise_mul(Tensor(lam), ep),
    )  # [..., T-1, 2]
    return ad.concat([body, ep], axis=-2)


class DeterministicHead:
    """Per-timestep MLP from interaction features to 2D coordinates."""

    def __init__(self, params: ParameterSet, name: str, model_dim: int, rng):
        self.mlp = MLP(params, name, model_dim, model_dim, 2, rng)

    def __call__(self, h_beta: Tensor) -> Tensor:
        return self.mlp(h_beta)


class StochasticHead:
    """Gaussian latent head with a reparameterized decoder.

    Linear layers read (mu, logvar) off the interaction features; the
    sampled latent mu + exp(logvar/2) * z is concatenated back onto the
    features and decoded to coordinates by a two-layer MLP.
    """

    def __init__(self, params: ParameterSet, name: str, model_dim: int, latent_dim: int, rng):
        self.latent_dim = latent_dim
        self.mu = Linear(params, f"{name}.mu", model_dim, latent_dim, rng)
        self.logvar = Linear(params, f"{name}.logvar", model_dim, latent_dim, rng)
        self.decoder = MLP(params, f"{name}.dec", model_dim + latent_dim, model_dim, 2, rng)

    def __call__(self, h_beta: Tensor, z: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
        mu = self.mu(h_beta)
        logvar = self.logvar(h_beta)
        sample = ad.add(mu, ad.elementwise_mul(ad.exp(ad.scale(logvar, 0.5)), Tensor(z)))
        traj = self.decoder(ad.concat_lastaxis([h_beta, sample]))
        return traj, mu, logvar


def kl_loss(mu: Tensor, logvar: Tensor) -> Tensor:
    """Closed-form KL(N(mu, diag e^logvar) || N(0, I)).

    Sums 0.5 * (mu^2 + e^logvar - logvar - 1) over latent elements; for
    batched (>= 3-D) inputs the sum is averaged over the leading axis.
    """
    if mu.shape != logvar.shape:
        raise ad.ShapeError(f"mu/logvar shapes disagree: {mu.shape} vs {logvar.shape}")
    per_element = ad.sub(ad.add(ad.elementwise_mul(mu, mu), ad.exp(logvar)), ad.add(logvar, Tensor(np.ones(logvar.shape))))
    total = ad.scale(ad.sum_all(per_element), 0.5)
    if mu.ndim >= 3:
        return ad.scale(total, 1.0 / mu.shape[0])
    return total
