"""The two-stage multi-style forecaster and its batch preparation.

Stage one reads the observed track plus context windows, runs the
behavior transformer, and proposes one endpoint per style channel.
Stage two completes any endpoint into a full trajectory: the endpoint is
appended to the observation for the plan-aware representation, the
interpolation keel drives the decoder side of the interaction
transformer (weights shared across channels), and an output head emits
coordinates.

All network inputs are origin-relative: each sample is shifted so its
last observed point sits at (0, 0), and predictions are shifted back on
the way out.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .checkpoint import load_checkpoint, restore_parameters, save_checkpoint
from .context import (
    RepresentationEncoder,
    SceneGrid,
    build_context_map,
    sample_context_sequence,
    zero_scene_for,
)
from .data import Sample
from .prediction import DeterministicHead, StochasticHead, interpolation_keel, kl_loss
from .style import StyleGenerator, stylized_loss
from .transformer import Seq2SeqTransformer, TransformerConfig

MODES = ("deterministic", "stochastic")


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 32
    mlp_hidden: int = 64
    channels: int = 3
    latent_dim: int = 8
    patch: int = 5
    t_h: int = 8
    t_f: int = 12
    mode: str = "deterministic"

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.model_dim % 2 != 0:
            raise ValueError(f"model_dim must be even, got {self.model_dim}")
        if self.patch % 2 != 1:
            raise ValueError(f"patch must be odd, got {self.patch}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("channels", "latent_dim", "t_h", "t_f", "num_heads", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class PreparedBatch:
    """Origin-relative arrays ready for the network, one row per sample."""

    sample_ids: np.ndarray  # [B] int
    x_obs: np.ndarray  # [B, t_h, 2]
    y_true: np.ndarray  # [B, t_f, 2]
    endpoints: np.ndarray  # [B, 2] last row of y_true
    ctx_obs: np.ndarray  # [B, t_h, patch^2]
    ctx_plan: np.ndarray  # [B, t_h + 1, patch^2]
    origins: np.ndarray  # [B, 2] world position subtracted from each sample

    def __len__(self) -> int:
        return len(self.sample_ids)

    def subset(self, idx) -> "PreparedBatch":
        return PreparedBatch(
            self.sample_ids[idx],
            self.x_obs[idx],
            self.y_true[idx],
            self.endpoints[idx],
            self.ctx_obs[idx],
            self.ctx_plan[idx],
            self.origins[idx],
        )


def prepare_samples(samples: list[Sample], cfg: ModelConfig, scene: SceneGrid | None = None) -> PreparedBatch:
    """Context maps, patch sequences, and origin-relative coordinates."""
    if not samples:
        raise ValueError("no samples to prepare")
    x_obs, y_true, ctx_obs, ctx_plan, origins, ids = [], [], [], [], [], []
    for s in samples:
        grid = scene
        if grid is None:
            pts = [s.x_obs] + [n for n in s.neighbors if len(n)]
            grid = zero_scene_for(np.concatenate(pts, axis=0))
        cmap = build_context_map(s.x_obs, s.neighbors, grid, future_steps=cfg.t_f)
        ctx_obs.append(sample_context_sequence(cmap, s.x_obs, cfg.t_h, cfg.patch))
        ctx_plan.append(sample_context_sequence(cmap, s.x_obs, cfg.t_h + 1, cfg.patch))
        origin = s.x_obs[-1]
        x_obs.append(s.x_obs - origin)
        y_true.append(s.y_true - origin)
        origins.append(origin)
        ids.append(s.sample_id)
    y = np.stack(y_true)
    return PreparedBatch(
        sample_ids=np.array(ids, dtype=np.int64),
        x_obs=np.stack(x_obs),
        y_true=y,
        endpoints=y[:, -1, :].copy(),
        ctx_obs=np.stack(ctx_obs),
        ctx_plan=np.stack(ctx_plan),
        origins=np.stack(origins),
    )


@dataclass
class Prediction:
    """Candidate set for a batch: [B, N, t_f, 2] plus per-candidate provenance."""

    trajectories: np.ndarray
    channels: np.ndarray  # [N]
    draws: np.ndarray  # [N]


class MultiStyleForecaster:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params = ParameterSet()
        tcfg = TransformerConfig(
            cfg.num_layers, cfg.num_heads, cfg.model_dim, cfg.mlp_hidden, dec_input_dim=2
        )
        self.rep_obs = RepresentationEncoder(self.params, "proposal.rep", cfg.model_dim, cfg.patch, rng)
        self.behavior = Seq2SeqTransformer(self.params, "proposal.tr", tcfg, rng)
        self.generator = StyleGenerator(
            self.params, "proposal.gen", cfg.model_dim, cfg.t_h, cfg.channels, rng
        )
        self.rep_plan = RepresentationEncoder(self.params, "completion.rep", cfg.model_dim, cfg.patch, rng)
        self.interaction = Seq2SeqTransformer(self.params, "completion.tr", tcfg, rng)
        if cfg.mode == "deterministic":
            self.head = DeterministicHead(self.params, "completion.head", cfg.model_dim, rng)
        else:
            self.head = StochasticHead(
                self.params, "completion.head", cfg.model_dim, cfg.latent_dim, rng
            )

    # ----- stage 1 -----

    def behavior_features(self, x_obs: Tensor, ctx: Tensor) -> Tensor:
        """h_alpha: fused representation encoded, queried by the raw track."""
        f = self.rep_obs(x_obs, ctx)
        return self.behavior(f, x_obs)

    def propose(self, batch: PreparedBatch) -> Tensor:
        """Endpoint proposals [B, K, 2] for a prepared batch."""
        h_alpha = self.behavior_features(Tensor(batch.x_obs), Tensor(batch.ctx_obs))
        return self.generator(h_alpha)

    # ----- stage 2 -----

    def complete(self, batch: PreparedBatch, endpoints: Tensor, z: np.ndarray | None = None):
        """Full trajectories [B, t_f, 2] toward the given endpoints.

        Returns (trajectory, mu, logvar); the Gaussian terms are None in
        deterministic mode.
        """
        n = len(batch)
        ep_rows = ad.reshape(endpoints, (n, 1, 2))
        obs_plus = ad.concat([Tensor(batch.x_obs), ep_rows], axis=-2)  # [B, t_h+1, 2]
        f_plan = self.rep_plan(obs_plus, Tensor(batch.ctx_plan))
        keel = interpolation_keel(batch.x_obs[:, -1, :], endpoints, self.cfg.t_f)
        h_beta = self.interaction(f_plan, keel)
        if self.cfg.mode == "deterministic":
            return self.head(h_beta), None, None
        if z is None:
            raise ValueError("stochastic completion needs a latent draw z")
        return self.head(h_beta, z)

    # ----- training / inference -----

    def training_loss(self, batch: PreparedBatch, z: np.ndarray | None = None):
        """Loss terms for one batch: (total, l_sty, l_ad, l_kl, winners).

        The endpoint term charges each sample's winning channel; the
        displacement term supervises the winning channel's completed
        trajectory; the KL term exists only in stochastic mode.
        """
        proposals = self.propose(batch)
        l_sty, winners = stylized_loss(proposals, batch.endpoints)
        chosen = ad.select_rows(proposals, winners)  # [B, 2]
        traj, mu, logvar = self.complete(batch, chosen, z)
        l_ad = ad.mean_all(ad.l2_norm_rows(ad.sub(traj, Tensor(batch.y_true))))
        l_kl = kl_loss(mu, logvar) if mu is not None else Tensor(0.0)
        total = ad.add(ad.add(l_sty, l_ad), l_kl)
        return total, l_sty, l_ad, l_kl, winners

    def latent_shape(self, n: int) -> tuple[int, int, int]:
        return (n, self.cfg.t_f, self.cfg.latent_dim)

    def _latent_draw(self, sample_ids: np.ndarray, channel: int, draw: int, seed: int) -> np.ndarray:
        # keyed by (seed, sample, channel, draw) so results do not depend
        # on how samples are batched across commands
        rows = [
            np.random.default_rng(
                np.random.SeedSequence((seed, int(sid), channel, draw))
            ).standard_normal((self.cfg.t_f, self.cfg.latent_dim))
            for sid in sample_ids
        ]
        return np.stack(rows)

    def predict(
        self,
        batch: PreparedBatch,
        draws: int = 1,
        seed: int = 0,
        zero_latent: bool = False,
    ) -> Prediction:
        """All-channel candidate set, origin-relative.

        Deterministic mode emits one trajectory per channel (N = K);
        stochastic mode emits `draws` per channel (N = draws * K), or the
        single distribution mode when zero_latent is set. Latent draws
        are keyed per (seed, sample, channel, draw).
        """
        stochastic = self.cfg.mode == "stochastic"
        n_draws = (1 if zero_latent else draws) if stochastic else 1
        n = len(batch)
        outs, channels, draw_ids = [], [], []
        with ad.no_grad():
            proposals = self.propose(batch)
            for c in range(self.cfg.channels):
                endpoint = ad.reshape(ad.slice_axis(proposals, -2, c, c + 1), (n, 2))
                for j in range(n_draws):
                    if stochastic:
                        z = (
                            np.zeros(self.latent_shape(n))
                            if zero_latent
                            else self._latent_draw(batch.sample_ids, c, j, seed)
                        )
                        traj, _, _ = self.complete(batch, endpoint, z)
                    else:
                        traj, _, _ = self.complete(batch, endpoint)
                    outs.append(traj.data)
                    channels.append(c)
                    draw_ids.append(j)
        return Prediction(
            trajectories=np.stack(outs, axis=1),
            channels=np.array(channels, dtype=np.int64),
            draws=np.array(draw_ids, dtype=np.int64),
        )


def denormalize(trajectories: np.ndarray, origins: np.ndarray) -> np.ndarray:
    """Shift origin-relative trajectories [B, ..., 2] back to world coordinates."""
    return trajectories + origins.reshape(origins.shape[0], *([1] * (trajectories.ndim - 2)), 2)


def save_model(model: MultiStyleForecaster, path, extra_meta: dict | None = None) -> None:
    meta = {f"cfg.{f.name}": getattr(model.cfg, f.name) for f in fields(ModelConfig)}
    meta.update(extra_meta or {})
    save_checkpoint(path, model.params, meta)


def load_model(path) -> tuple[MultiStyleForecaster, dict[str, str]]:
    arrays, meta = load_checkpoint(path)
    kwargs = {}
    for f in fields(ModelConfig):
        key = f"cfg.{f.name}"
        if key not in meta:
            raise ValueError(f"checkpoint {path} lacks model setting {key}")
        kwargs[f.name] = meta[key] if f.name == "mode" else int(meta[key])
    cfg = ModelConfig(**kwargs)
    model = MultiStyleForecaster(cfg, np.random.default_rng(0))
    restore_parameters(model.params, arrays)
    return model, meta
