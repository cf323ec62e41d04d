"""Displacement metrics, best-of-N scoring, and the heading filter."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import MultiStyleForecaster, PreparedBatch

EVAL_CSV_HEADER = "sample_id,minADE,minFDE,ade_channel,ade_draw,fde_channel,fde_draw"

# discard predictions that turn back by more than 135 degrees
_REVERSAL_COS = math.cos(3.0 * math.pi / 4.0)


def ade(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Mean pointwise Euclidean error over the horizon, in meters."""
    y, y_hat = np.asarray(y), np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"ade: shapes disagree, {y.shape} vs {y_hat.shape}")
    return float(np.linalg.norm(y - y_hat, axis=-1).mean())


def fde(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Euclidean error of the final predicted point, in meters."""
    y, y_hat = np.asarray(y), np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"fde: shapes disagree, {y.shape} vs {y_hat.shape}")
    return float(np.linalg.norm(y[-1] - y_hat[-1]))


@dataclass(frozen=True)
class BestOfN:
    min_ade: float
    min_fde: float
    ade_index: int
    fde_index: int


def best_of_n(y: np.ndarray, predictions: Sequence[np.ndarray]) -> BestOfN:
    """Independent minima of ADE and FDE over a candidate set.

    The two minima may come from different candidates.
    """
    if len(predictions) == 0:
        raise ValueError("best_of_n over an empty candidate set")
    ades = [ade(y, p) for p in predictions]
    fdes = [fde(y, p) for p in predictions]
    ai = int(np.argmin(ades))
    fi = int(np.argmin(fdes))
    return BestOfN(min_ade=ades[ai], min_fde=fdes[fi], ade_index=ai, fde_index=fi)


def heading_mask(x_obs: np.ndarray, predictions: Sequence[np.ndarray]) -> np.ndarray:
    """True for candidates whose net displacement does not reverse the heading.

    The angle is measured between the observed net displacement
    (last observed minus first observed) and the predicted net
    displacement (final prediction minus last observed). Zero-length
    displacements always pass.
    """
    observed = np.asarray(x_obs[-1]) - np.asarray(x_obs[0])
    n_obs = np.linalg.norm(observed)
    keep = np.ones(len(predictions), dtype=bool)
    if n_obs == 0.0:
        return keep
    for i, p in enumerate(predictions):
        predicted = np.asarray(p[-1]) - np.asarray(x_obs[-1])
        n_pred = np.linalg.norm(predicted)
        if n_pred == 0.0:
            continue
        cosine = float(observed @ predicted) / (n_obs * n_pred)
        keep[i] = cosine >= _REVERSAL_COS
    return keep


def direction_filter(x_obs: np.ndarray, predictions: Sequence[np.ndarray]) -> list[np.ndarray]:
    keep = heading_mask(x_obs, predictions)
    return [p for p, k in zip(predictions, keep) if k]


@dataclass(frozen=True)
class EvalRow:
    sample_id: int
    min_ade: float
    min_fde: float
    ade_channel: int
    ade_draw: int
    fde_channel: int
    fde_draw: int


@dataclass
class EvalReport:
    mean_min_ade: float
    mean_min_fde: float
    n_candidates: int
    draws: int
    channels: int
    rows: list[EvalRow]

    def write_csv(self, path) -> None:
        lines = [EVAL_CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.sample_id},{r.min_ade:.17g},{r.min_fde:.17g},"
                f"{r.ade_channel},{r.ade_draw},{r.fde_channel},{r.fde_draw}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def evaluate(
    model: MultiStyleForecaster,
    prepared: PreparedBatch,
    *,
    draws: int = 1,
    use_filter: bool = False,
    seed: int = 0,
    batch_size: int = 256,
) -> EvalReport:
    """Best-of-N displacement errors over every sample.

    N is channels (deterministic) or draws * channels (stochastic). With
    the heading filter on, reversing candidates are dropped before the
    minima; a sample whose candidates are all dropped falls back to the
    full set.
    """
    rows: list[EvalRow] = []
    n = len(prepared)
    for start in range(0, n, batch_size):
        batch = prepared.subset(np.arange(start, min(start + batch_size, n)))
        pred = model.predict(batch, draws=draws, seed=seed)
        for b in range(len(batch)):
            candidates = list(pred.trajectories[b])
            indices = np.arange(len(candidates))
            if use_filter:
                keep = heading_mask(batch.x_obs[b], candidates)
                if keep.any():
                    candidates = [candidates[i] for i in indices[keep]]
                    indices = indices[keep]
            best = best_of_n(batch.y_true[b], candidates)
            ai, fi = indices[best.ade_index], indices[best.fde_index]
            rows.append(
                EvalRow(
                    sample_id=int(batch.sample_ids[b]),
                    min_ade=best.min_ade,
                    min_fde=best.min_fde,
                    ade_channel=int(pred.channels[ai]),
                    ade_draw=int(pred.draws[ai]),
                    fde_channel=int(pred.channels[fi]),
                    fde_draw=int(pred.draws[fi]),
                )
            )
    stochastic = model.cfg.mode == "stochastic"
    n_draws = draws if stochastic else 1
    return EvalReport(
        mean_min_ade=float(np.mean([r.min_ade for r in rows])),
        mean_min_fde=float(np.mean([r.min_fde for r in rows])),
        n_candidates=n_draws * model.cfg.channels,
        draws=n_draws,
        channels=model.cfg.channels,
        rows=rows,
    )
