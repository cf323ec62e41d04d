"""Style channels: endpoint proposal generation, classification, and loss.

Each of the K style channels owns a time-convolution kernel plus its own
feature and endpoint MLPs, so channels can specialize on different
behavior patterns. A sample belongs to the channel whose proposal lies
nearest its true endpoint; only that channel is charged by the loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .transformer import MLP


@dataclass(frozen=True)
class CategoryAssignment:
    channel: int
    distance: float


def classify(endpoint: np.ndarray, proposals: np.ndarray) -> CategoryAssignment:
    """Channel whose proposal is Euclidean-nearest to the endpoint.

    Ties resolve to the lowest channel index.
    """
    if len(proposals) < 1:
        raise ValueError("classify needs at least one proposal")
    distances = np.linalg.norm(proposals - np.asarray(endpoint)[None, :], axis=-1)
    s = int(np.argmin(distances))
    return CategoryAssignment(channel=s, distance=float(distances[s]))


class StyleGenerator:
    """K parallel channels mapping behavior features to endpoint proposals.

    Channel c applies its 1 x t_h convolution kernel across time, then its
    private two-layer feature MLP and two-layer endpoint MLP. Kernels and
    MLPs are independently randomly initialized so channels propose
    different endpoints before any training.
    """

    def __init__(self, params: ParameterSet, name: str, model_dim: int, horizon: int, channels: int, rng):
        if channels < 1:
            raise ValueError(f"need at least one style channel, got {channels}")
        self.channels = channels
        bound = 1.0 / math.sqrt(horizon)
        self.kernels = params.register(
            f"{name}.kernels", rng.uniform(-bound, bound, size=(channels, horizon))
        )
        self.feature_mlps = [
            MLP(params, f"{name}.ch{c}.feature", model_dim, model_dim, model_dim, rng)
            for c in range(channels)
        ]
        self.endpoint_mlps = [
            MLP(params, f"{name}.ch{c}.endpoint", model_dim, model_dim, 2, rng)
            for c in range(channels)
        ]

    def __call__(self, h_alpha: Tensor) -> Tensor:
        """Proposals [..., K, 2] from behavior features [..., t_h, d]."""
        conv = ad.conv_time(ad.transpose(h_alpha), self.kernels.tensor)  # [..., K, d]
        rows = []
        for c in range(self.channels):
            channel_feat = ad.slice_axis(conv, -2, c, c + 1)  # [..., 1, d]
            rows.append(self.endpoint_mlps[c](self.feature_mlps[c](channel_feat)))
        return ad.concat(rows, axis=-2)  # [..., K, 2]


def winning_channels(proposals: np.ndarray, endpoints: np.ndarray) -> np.ndarray:
    """Per-sample nearest-proposal channel indices (ties to lowest index)."""
    distances = np.linalg.norm(proposals - endpoints[:, None, :], axis=-1)  # [B, K]
    return distances.argmin(axis=-1)


def stylized_loss(proposals: Tensor, endpoints: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean endpoint error of each sample's winning channel.

    The winner is chosen against the current proposals but treated as a
    constant: gradient flows only through the selected rows, so each
    sample trains exactly one channel.
    """
    if proposals.shape[0] == 0:
        raise ValueError("stylized_loss on an empty batch")
    winners = winning_channels(proposals.data, endpoints)
    chosen = ad.select_rows(proposals, winners)  # [B, 2]
    distances = ad.l2_norm_rows(ad.sub(chosen, Tensor(endpoints)))
    return ad.mean_all(distances), winners
