"""Encoder-decoder transformer shared by both forecasting stages.

Layers follow the post-norm arrangement: attention + residual, normalize,
two-layer MLP + residual, normalize. The decoder adds a cross-attention
block whose query is the (normalized) decoder state and whose keys and
values are the encoder output. Sequences are fully visible; no causal
masking is used anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor


@dataclass(frozen=True)
class TransformerConfig:
    num_layers: int
    num_heads: int
    model_dim: int
    mlp_hidden: int
    dec_input_dim: int = 2

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} must be divisible by num_heads {self.num_heads}"
            )
        for field in ("num_heads", "model_dim", "mlp_hidden", "dec_input_dim"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be >= 1")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@lru_cache(maxsize=32)
def positional_encoding(steps: int, dim: int) -> np.ndarray:
    """Sinusoidal position matrix for steps t = 1..steps (1-based).

    Even feature index i carries sin(t / 10000^(i/dim)), odd index i
    carries cos(t / 10000^((i-1)/dim)), so each sin/cos pair shares one
    frequency. Deterministic; no learned parameters.
    """
    if steps < 1:
        raise ValueError(f"positional_encoding needs steps >= 1, got {steps}")
    if dim % 2 != 0:
        raise ValueError(f"positional_encoding needs an even dim, got {dim}")
    t = np.arange(1, steps + 1, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    freq = np.power(10000.0, -(i - (i % 2)) / dim)
    angles = t * freq
    pe = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    pe.setflags(write=False)
    return pe


def init_weight(rng: np.random.Generator, in_dim: int, out_dim: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=(in_dim, out_dim))


class Linear:
    """Dense layer; weights and bias both init uniform in +-1/sqrt(fan_in).

    A random bias keeps ReLU pre-activations off exact zero even for
    all-zero input rows (the origin-anchored observation step and empty
    context windows produce those routinely).
    """

    def __init__(self, params: ParameterSet, name: str, in_dim: int, out_dim: int, rng):
        bound = 1.0 / math.sqrt(in_dim)
        self.w = params.register(f"{name}.w", init_weight(rng, in_dim, out_dim))
        self.b = params.register(f"{name}.b", rng.uniform(-bound, bound, size=out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w.tensor), self.b.tensor)


class MLP:
    """Two dense layers; ReLU after the first, none after the second."""

    def __init__(self, params, name, in_dim, hidden, out_dim, rng):
        self.fc1 = Linear(params, f"{name}.fc1", in_dim, hidden, rng)
        self.fc2 = Linear(params, f"{name}.fc2", hidden, out_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))


class LayerNorm:
    def __init__(self, params, name, dim):
        self.gain = params.register(f"{name}.gain", np.ones(dim))
        self.bias = params.register(f"{name}.bias", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.elementwise_mul(ad.layer_normalize(x), self.gain.tensor), self.bias.tensor)


class MultiHeadAttention:
    """Dot-product attention over H heads, then fc merge and a two-layer MLP."""

    def __init__(self, params, name, cfg: TransformerConfig, rng):
        d = cfg.model_dim
        self.heads = cfg.num_heads
        self.head_dim = cfg.head_dim
        self.wq = Linear(params, f"{name}.wq", d, d, rng)
        self.wk = Linear(params, f"{name}.wk", d, d, rng)
        self.wv = Linear(params, f"{name}.wv", d, d, rng)
        self.fc = Linear(params, f"{name}.fc", d, d, rng)
        self.mlp_a = MLP(params, f"{name}.mlp_a", d, cfg.mlp_hidden, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        lead = x.shape[:-2]
        s = x.shape[-2]
        x = ad.reshape(x, (*lead, s, self.heads, self.head_dim))
        return ad.swap_axes(x, -3, -2)  # [..., H, s, head_dim]

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
        if k.shape[-2] == 0:
            raise ValueError("attention over an empty key sequence")
        if k.shape[-2] != v.shape[-2]:
            raise ad.ShapeError(f"key/value lengths disagree: {k.shape} vs {v.shape}")
        qh, kh, vh = self._split(self.wq(q)), self._split(self.wk(k)), self._split(self.wv(v))
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / math.sqrt(self.head_dim))
        weights = ad.softmax_lastaxis(scores)
        ctx = ad.matmul(weights, vh)  # [..., H, s_q, head_dim]
        lead = q.shape[:-2]
        merged = ad.reshape(
            ad.swap_axes(ctx, -3, -2), (*lead, q.shape[-2], self.heads * self.head_dim)
        )
        out = self.mlp_a(self.fc(merged))
        if return_weights:
            return out, weights.data
        return out


class EncoderLayer:
    def __init__(self, params, name, cfg, rng):
        self.att = MultiHeadAttention(params, f"{name}.att", cfg, rng)
        self.norm1 = LayerNorm(params, f"{name}.norm1", cfg.model_dim)
        self.mlp = MLP(params, f"{name}.mlp", cfg.model_dim, cfg.mlp_hidden, cfg.model_dim, rng)
        self.norm2 = LayerNorm(params, f"{name}.norm2", cfg.model_dim)

    def __call__(self, h: Tensor) -> Tensor:
        a_n = self.norm1(ad.add(self.att(h, h, h), h))
        return self.norm2(ad.add(self.mlp(a_n), a_n))


class DecoderLayer:
    def __init__(self, params, name, cfg, rng):
        self.self_att = MultiHeadAttention(params, f"{name}.self_att", cfg, rng)
        self.norm1 = LayerNorm(params, f"{name}.norm1", cfg.model_dim)
        self.cross_att = MultiHeadAttention(params, f"{name}.cross_att", cfg, rng)
        self.norm2 = LayerNorm(params, f"{name}.norm2", cfg.model_dim)
        self.mlp = MLP(params, f"{name}.mlp", cfg.model_dim, cfg.mlp_hidden, cfg.model_dim, rng)
        self.norm3 = LayerNorm(params, f"{name}.norm3", cfg.model_dim)

    def __call__(self, h: Tensor, h_e: Tensor) -> Tensor:
        a_n = self.norm1(ad.add(self.self_att(h, h, h), h))
        a2_n = self.norm2(ad.add(self.cross_att(a_n, h_e, h_e), a_n))
        return self.norm3(ad.add(self.mlp(a2_n), a2_n))


class Seq2SeqTransformer:
    """Full encoder-decoder stack with input embedding and position coding.

    The encoder consumes an already model_dim-wide feature sequence; the
    decoder consumes a raw sequence (dec_input_dim per step) that gets a
    learned linear embedding. Both sides receive the sinusoidal position
    matrix additively before their first layer.
    """

    def __init__(self, params: ParameterSet, name: str, cfg: TransformerConfig, rng):
        self.cfg = cfg
        self.embed = Linear(params, f"{name}.embed", cfg.dec_input_dim, cfg.model_dim, rng)
        self.enc_layers = [
            EncoderLayer(params, f"{name}.enc{i}", cfg, rng) for i in range(cfg.num_layers)
        ]
        self.dec_layers = [
            DecoderLayer(params, f"{name}.dec{i}", cfg, rng) for i in range(cfg.num_layers)
        ]

    def _positioned(self, x: Tensor) -> Tensor:
        return ad.add(x, Tensor(positional_encoding(x.shape[-2], self.cfg.model_dim)))

    def embed_and_position(self, raw: Tensor) -> Tensor:
        return self._positioned(self.embed(raw))

    def encode(self, x: Tensor) -> Tensor:
        for layer in self.enc_layers:
            x = layer(x)
        return x

    def decode(self, x: Tensor, h_e: Tensor) -> Tensor:
        for layer in self.dec_layers:
            x = layer(x, h_e)
        return x

    def __call__(self, enc_features: Tensor, dec_raw: Tensor) -> Tensor:
        h_e = self.encode(self._positioned(enc_features))
        return self.decode(self.embed_and_position(dec_raw), h_e)
