"""High-level operations behind the service endpoints and CLI commands.

Each function takes plain values, reads/writes files, and returns a JSON
friendly dict. All randomness is derived from the config seed, so
rerunning any operation with identical inputs reproduces identical
output files byte for byte.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig
from .context import SceneGrid, load_scene_grid
from .data import (
    Sample,
    load_trajectory_file,
    save_trajectory_file,
    sliding_window_samples,
    synthetic_trajectories,
)
from .evaluation import evaluate
from .model import (
    MultiStyleForecaster,
    PreparedBatch,
    denormalize,
    load_model,
    prepare_samples,
    save_model,
)
from .plots import trajectory_svg
from .prediction import interpolation_keel
from .style import classify
from .training import train

logger = logging.getLogger(__name__)

PREDICTION_CSV_HEADER = "sample_id,channel,draw,t,x,y"
PROPOSALS_CSV_HEADER = "sample_id,channel,dx,dy,chosen,distance"
KEELS_CSV_HEADER = "sample_id,channel,t,x,y"


def _load_samples(cfg: RunConfig, data_path: str) -> tuple[list[Sample], SceneGrid | None]:
    if not data_path:
        raise ConfigError("no dataset given (set data=... or pass --data)")
    path = Path(data_path)
    if not path.exists():
        raise ConfigError(f"dataset {path} does not exist")
    trajectories = load_trajectory_file(path)
    samples = sliding_window_samples(
        trajectories, bandwidth=cfg.bandwidth, stride=cfg.stride, t_h=cfg.t_h
    )
    if not samples:
        raise ConfigError(
            f"dataset {path} yields no samples for bandwidth {cfg.bandwidth}"
        )
    scene = load_scene_grid(cfg.scene or None)
    return samples, scene


def run_synth(
    n_agents: int,
    modes: int,
    noise_sigma: float,
    seed: int,
    out_path: str,
    t_h: int = 8,
    t_f: int = 12,
) -> dict:
    trajectories = synthetic_trajectories(n_agents, modes, noise_sigma, seed, t_h=t_h, t_f=t_f)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_trajectory_file(out, trajectories)
    return {
        "path": str(out),
        "n_agents": n_agents,
        "modes": modes,
        "noise_sigma": noise_sigma,
        "seed": seed,
    }


def run_train(cfg: RunConfig, data_path: str, out_dir: str) -> dict:
    samples, scene = _load_samples(cfg, data_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_cfg = cfg.model_config()
    prepared = prepare_samples(samples, model_cfg, scene)
    model = MultiStyleForecaster(model_cfg, np.random.default_rng(cfg.seed))
    loss_csv = out / "loss.csv"
    history = train(
        model,
        prepared,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        seed=cfg.seed,
        loss_csv=loss_csv,
    )
    checkpoint = out / "checkpoint.txt"
    save_model(model, checkpoint, extra_meta={"seed": cfg.seed, "lr": cfg.lr, "epochs": cfg.epochs})
    final = history[-1]
    return {
        "checkpoint": str(checkpoint),
        "loss_csv": str(loss_csv),
        "epochs": cfg.epochs,
        "n_samples": len(samples),
        "final": {
            "l_sty": final.l_sty,
            "l_ad": final.l_ad,
            "l_kl": final.l_kl,
            "total": final.total,
        },
    }


def _load_model_checked(checkpoint: str, expect_channels: int | None = None):
    path = Path(checkpoint)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    try:
        model, meta = load_model(path)
    except (CheckpointError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from None
    if expect_channels is not None and expect_channels != model.cfg.channels:
        raise ConfigError(
            f"checkpoint has {model.cfg.channels} style channels, "
            f"but {expect_channels} were requested"
        )
    return model, meta


def _prepared_for_model(model, cfg: RunConfig, data_path: str) -> PreparedBatch:
    run = RunConfig(
        t_h=model.cfg.t_h,
        t_f=model.cfg.t_f,
        stride=cfg.stride,
        scene=cfg.scene,
    )
    samples, scene = _load_samples(run, data_path)
    return prepare_samples(samples, model.cfg, scene)


def run_eval(
    cfg: RunConfig,
    checkpoint: str,
    data_path: str,
    out_dir: str,
    expect_channels: int | None = None,
) -> dict:
    model, _ = _load_model_checked(checkpoint, expect_channels)
    prepared = _prepared_for_model(model, cfg, data_path)
    report = evaluate(
        model, prepared, draws=cfg.draws, use_filter=cfg.use_filter, seed=cfg.seed
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_csv = out / "eval.csv"
    report.write_csv(report_csv)
    return {
        "min_ade": report.mean_min_ade,
        "min_fde": report.mean_min_fde,
        "n_candidates": report.n_candidates,
        "draws": report.draws,
        "channels": report.channels,
        "n_samples": len(report.rows),
        "filtered": cfg.use_filter,
        "report_csv": str(report_csv),
    }


def _prediction_rows(model, batch: PreparedBatch, draws: int, seed: int, zero_latent: bool):
    pred = model.predict(batch, draws=draws, seed=seed, zero_latent=zero_latent)
    world = denormalize(pred.trajectories, batch.origins)
    rows = []
    for b in range(len(batch)):
        sid = int(batch.sample_ids[b])
        for i in range(world.shape[1]):
            for t in range(world.shape[2]):
                rows.append(
                    f"{sid},{int(pred.channels[i])},{int(pred.draws[i])},{t + 1},"
                    f"{world[b, i, t, 0]:.17g},{world[b, i, t, 1]:.17g}"
                )
    return rows, pred, world


def run_predict(
    cfg: RunConfig,
    checkpoint: str,
    data_path: str,
    out_dir: str,
    zero_latent: bool = False,
) -> dict:
    model, _ = _load_model_checked(checkpoint)
    prepared = _prepared_for_model(model, cfg, data_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "predictions.csv"
    lines = [PREDICTION_CSV_HEADER]
    n = len(prepared)
    for start in range(0, n, 256):
        batch = prepared.subset(np.arange(start, min(start + 256, n)))
        rows, _, _ = _prediction_rows(model, batch, cfg.draws, cfg.seed, zero_latent)
        lines.extend(rows)
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {
        "csv": str(csv_path),
        "n_samples": n,
        "n_rows": len(lines) - 1,
        "n_candidates": (cfg.draws if model.cfg.mode == "stochastic" and not zero_latent else 1)
        * model.cfg.channels,
    }


def run_inspect(
    cfg: RunConfig,
    checkpoint: str,
    data_path: str,
    sample_id: int,
    out_dir: str,
) -> dict:
    model, _ = _load_model_checked(checkpoint)
    prepared = _prepared_for_model(model, cfg, data_path)
    where = np.flatnonzero(prepared.sample_ids == sample_id)
    if len(where) == 0:
        raise ConfigError(
            f"sample {sample_id} not found; dataset has ids 0..{int(prepared.sample_ids.max())}"
        )
    batch = prepared.subset(where[:1])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with no_grad():
        proposals = model.propose(batch).data[0]  # [K, 2] origin-relative
    origin = batch.origins[0]
    assignment = classify(batch.endpoints[0], proposals)
    distances = np.linalg.norm(proposals - batch.endpoints[0][None, :], axis=-1)
    prop_lines = [PROPOSALS_CSV_HEADER]
    for c in range(model.cfg.channels):
        world = proposals[c] + origin
        chosen = 1 if c == assignment.channel else 0
        prop_lines.append(
            f"{sample_id},{c},{world[0]:.17g},{world[1]:.17g},{chosen},{distances[c]:.17g}"
        )
    proposals_csv = out / f"sample{sample_id}_proposals.csv"
    proposals_csv.write_text("\n".join(prop_lines) + "\n", encoding="utf-8")

    keel_lines = [KEELS_CSV_HEADER]
    keels = {}
    with no_grad():
        for c in range(model.cfg.channels):
            keel = interpolation_keel(
                batch.x_obs[:, -1, :], Tensor(proposals[None, c]), model.cfg.t_f
            ).data[0]
            keels[c] = keel + origin
            for t in range(model.cfg.t_f):
                keel_lines.append(
                    f"{sample_id},{c},{t + 1},{keels[c][t, 0]:.17g},{keels[c][t, 1]:.17g}"
                )
    keels_csv = out / f"sample{sample_id}_keels.csv"
    keels_csv.write_text("\n".join(keel_lines) + "\n", encoding="utf-8")

    rows, pred, world = _prediction_rows(model, batch, cfg.draws, cfg.seed, zero_latent=False)
    traj_csv = out / f"sample{sample_id}_trajectories.csv"
    traj_csv.write_text("\n".join([PREDICTION_CSV_HEADER] + rows) + "\n", encoding="utf-8")

    channel_preds = {}
    for i in range(world.shape[1]):
        if int(pred.draws[i]) == 0:
            channel_preds[int(pred.channels[i])] = world[0, i]
    svg = trajectory_svg(
        observed=batch.x_obs[0] + origin,
        truth=batch.y_true[0] + origin,
        channel_predictions=channel_preds,
        proposals=proposals + origin,
        keels=keels,
    )
    svg_path = out / f"sample{sample_id}.svg"
    svg_path.write_text(svg, encoding="utf-8")
    return {
        "sample_id": sample_id,
        "proposals_csv": str(proposals_csv),
        "keels_csv": str(keels_csv),
        "trajectories_csv": str(traj_csv),
        "svg": str(svg_path),
        "chosen_channel": assignment.channel,
        "chosen_distance": assignment.distance,
    }
