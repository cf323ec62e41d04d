"""Trajectory ingestion, sliding-window sample construction, and synthesis.

The on-disk trajectory format is UTF-8 text, one record per line with four
whitespace-separated fields ``frame_id agent_id x y`` (meters); lines
starting with '#' are comments. Agents must be sampled at a constant frame
stride; agents violating that are skipped with a warning.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    pass


@dataclass
class Trajectory:
    agent_id: int
    frames: np.ndarray  # int64 [T], strictly increasing, constant stride
    positions: np.ndarray  # float64 [T, 2]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class Sample:
    """One prediction instance: observed window, future window, neighbors."""

    sample_id: int
    agent_id: int
    x_obs: np.ndarray  # [t_h, 2] world coordinates
    y_true: np.ndarray  # [t_f, 2] world coordinates, contiguous with x_obs
    neighbors: list[np.ndarray] = field(default_factory=list)  # [n_i, 2] each


@dataclass
class DatasetSplit:
    train: list[str]
    val: list[str]
    test: list[str]


def load_trajectory_file(path) -> list[Trajectory]:
    path = Path(path)
    per_agent: dict[int, list[tuple[int, float, float]]] = {}
    order: list[int] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
            try:
                frame, agent = int(fields[0]), int(fields[1])
                x, y = float(fields[2]), float(fields[3])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: malformed record {line!r}") from None
            if agent not in per_agent:
                per_agent[agent] = []
                order.append(agent)
            per_agent[agent].append((frame, x, y))

    out: list[Trajectory] = []
    for agent in order:
        rows = sorted(per_agent[agent])
        frames = np.array([r[0] for r in rows], dtype=np.int64)
        if len(frames) > 1:
            strides = np.diff(frames)
            if strides.min() <= 0 or strides.max() != strides.min():
                logger.warning("agent %d in %s has a non-uniform frame stride; skipped", agent, path)
                continue
        positions = np.array([[r[1], r[2]] for r in rows], dtype=np.float64)
        out.append(Trajectory(agent, frames, positions))
    return out


def save_trajectory_file(path, trajectories: list[Trajectory]) -> None:
    """Inverse of load_trajectory_file; reloading reproduces the input."""
    records = []
    for traj in trajectories:
        for f, (x, y) in zip(traj.frames, traj.positions):
            records.append((int(f), int(traj.agent_id), float(x), float(y)))
    records.sort()
    lines = [f"{f} {a} {x:.17g} {y:.17g}" for f, a, x, y in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def sliding_window_samples(
    trajectories: list[Trajectory],
    bandwidth: int = 20,
    stride: int = 1,
    t_h: int = 8,
) -> list[Sample]:
    """Enumerate every full-bandwidth window of every agent.

    A window yields one Sample with the first t_h steps observed and the
    remaining bandwidth - t_h as ground truth. Every other agent with at
    least one frame inside the observed span contributes its overlapping
    positions as a neighbor track.
    """
    if not 0 < t_h < bandwidth:
        raise ValueError(f"t_h must lie strictly inside the bandwidth, got {t_h}/{bandwidth}")
    samples: list[Sample] = []
    for traj in trajectories:
        n = len(traj)
        if n < bandwidth:
            continue
        for start in range(0, n - bandwidth + 1, stride):
            obs_lo = traj.frames[start]
            obs_hi = traj.frames[start + t_h - 1]
            neighbors = []
            for other in trajectories:
                if other.agent_id == traj.agent_id:
                    continue
                mask = (other.frames >= obs_lo) & (other.frames <= obs_hi)
                if mask.any():
                    neighbors.append(other.positions[mask])
            samples.append(
                Sample(
                    sample_id=len(samples),
                    agent_id=traj.agent_id,
                    x_obs=traj.positions[start : start + t_h].copy(),
                    y_true=traj.positions[start + t_h : start + bandwidth].copy(),
                    neighbors=neighbors,
                )
            )
    return samples


def leave_one_out_split(clips: list[str], held_out: str) -> DatasetSplit:
    if held_out not in clips:
        raise ValueError(f"unknown clip {held_out!r}; choices are {sorted(clips)}")
    train = [c for c in clips if c != held_out]
    if not train:
        logger.warning("leave-one-out with a single clip leaves an empty training set")
    return DatasetSplit(train=train, val=[], test=[held_out])


def mode_headings(modes: int, separation_deg: float = 60.0) -> np.ndarray:
    """Future headings for the synthetic generator, centered on 0 rad."""
    offsets = np.arange(modes, dtype=np.float64) - (modes - 1) / 2.0
    return np.deg2rad(offsets * separation_deg)


def synthetic_trajectories(
    n_agents: int,
    modes: int,
    noise_sigma: float,
    seed: int,
    t_h: int = 8,
    t_f: int = 12,
) -> list[Trajectory]:
    """Straight observed walks whose futures branch into one of `modes` headings.

    Every agent moves at unit speed along heading 0 for t_h frames, then
    turns onto one of the equally likely mode headings for t_f frames;
    isotropic Gaussian noise (sigma meters) perturbs each future point.
    Agents occupy disjoint frame ranges so windows carry no neighbors.
    """
    if modes < 2:
        raise ValueError(f"need at least 2 modes, got {modes}")
    headings = mode_headings(modes)
    rng = np.random.default_rng(seed)
    bandwidth = t_h + t_f
    out: list[Trajectory] = []
    for agent in range(n_agents):
        start = rng.uniform(0.0, 100.0, size=2)
        obs = start[None, :] + np.stack(
            [np.arange(t_h, dtype=np.float64), np.zeros(t_h)], axis=1
        )
        theta = headings[rng.integers(modes)]
        step = np.array([math.cos(theta), math.sin(theta)])
        fut = obs[-1][None, :] + np.arange(1, t_f + 1, dtype=np.float64)[:, None] * step[None, :]
        if noise_sigma > 0:
            fut = fut + rng.normal(0.0, noise_sigma, size=fut.shape)
        frames = np.arange(agent * bandwidth, (agent + 1) * bandwidth, dtype=np.int64)
        out.append(Trajectory(agent, frames, np.concatenate([obs, fut], axis=0)))
    return out


def synthetic_multistyle(
    n_agents: int,
    modes: int,
    noise_sigma: float,
    seed: int,
    t_h: int = 8,
    t_f: int = 12,
) -> list[Sample]:
    trajectories = synthetic_trajectories(n_agents, modes, noise_sigma, seed, t_h, t_f)
    return sliding_window_samples(trajectories, bandwidth=t_h + t_f, stride=1, t_h=t_h)


def true_mode_of(sample: Sample, modes: int) -> int:
    """Recover the generating branch of a synthetic sample from its future heading."""
    delta = sample.y_true[-1] - sample.x_obs[-1]
    angle = math.atan2(delta[1], delta[0])
    return int(np.argmin(np.abs(mode_headings(modes) - angle)))
