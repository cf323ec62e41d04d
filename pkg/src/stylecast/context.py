"""Scene grids, per-agent context energy maps, and the fused representation.

A context map is a 2D energy field over the scene: 1 marks forbidden or
occupied space, 0 freely walkable space. It combines the static scene
grid with a social term — Gaussian footprints stamped along every
neighbor's observed track and its constant-velocity extrapolation — by a
pointwise maximum, so the social term can only raise energy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .transformer import MLP

logger = logging.getLogger(__name__)

SOCIAL_SIGMA_CELLS = 1.0  # Gaussian footprint width, in grid cells
_STAMP_RADIUS = 4  # cells; beyond 4 sigma the kernel is negligible


@dataclass
class SceneGrid:
    width: int
    height: int
    cell_size: float
    origin: tuple[float, float]  # world coordinates of cell (0, 0)
    values: np.ndarray  # [height, width], energies in [0, 1]

    @classmethod
    def zeros(cls, width: int, height: int, cell_size: float, origin=(0.0, 0.0)) -> "SceneGrid":
        return cls(width, height, cell_size, tuple(origin), np.zeros((height, width)))

    def cell_of(self, point: np.ndarray) -> tuple[int, int, bool]:
        """(row, col, clamped) of the cell containing a world point."""
        col = int(np.floor((point[0] - self.origin[0]) / self.cell_size))
        row = int(np.floor((point[1] - self.origin[1]) / self.cell_size))
        crow = min(max(row, 0), self.height - 1)
        ccol = min(max(col, 0), self.width - 1)
        return crow, ccol, (crow != row or ccol != col)


@dataclass
class ContextMap:
    grid: SceneGrid
    values: np.ndarray  # [height, width] in [0, 1], >= grid.values pointwise


def load_scene_grid(path) -> SceneGrid | None:
    """Read the plain-text grid format; None when the file is absent."""
    if path is None:
        return None
    path = Path(path)
    if not path.exists():
        logger.info("scene grid %s missing; using an all-zero scene", path)
        return None
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    header = lines[0].split()
    if len(header) != 5:
        raise ValueError(f"{path}: header must be 'width height cell_size origin_x origin_y'")
    width, height = int(header[0]), int(header[1])
    cell_size = float(header[2])
    origin = (float(header[3]), float(header[4]))
    rows = [np.array(ln.split(), dtype=np.float64) for ln in lines[1 : 1 + height]]
    values = np.stack(rows)
    if values.shape != (height, width):
        raise ValueError(f"{path}: expected {height}x{width} values, got {values.shape}")
    if values.min() < 0 or values.max() > 1:
        raise ValueError(f"{path}: grid energies must lie in [0, 1]")
    return SceneGrid(width, height, cell_size, origin, values)


def zero_scene_for(points: np.ndarray, cell_size: float = 0.5, margin: float = 4.0) -> SceneGrid:
    """All-zero grid covering the given world points plus a margin."""
    lo = points.reshape(-1, 2).min(axis=0) - margin
    hi = points.reshape(-1, 2).max(axis=0) + margin
    width = max(1, int(np.ceil((hi[0] - lo[0]) / cell_size)))
    height = max(1, int(np.ceil((hi[1] - lo[1]) / cell_size)))
    return SceneGrid.zeros(width, height, cell_size, (float(lo[0]), float(lo[1])))


def _stamp(social: np.ndarray, grid: SceneGrid, point: np.ndarray) -> bool:
    row, col, clamped = grid.cell_of(point)
    r0, r1 = max(0, row - _STAMP_RADIUS), min(grid.height, row + _STAMP_RADIUS + 1)
    c0, c1 = max(0, col - _STAMP_RADIUS), min(grid.width, col + _STAMP_RADIUS + 1)
    rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    d2 = (rr - row) ** 2 + (cc - col) ** 2
    kernel = np.exp(-d2 / (2.0 * SOCIAL_SIGMA_CELLS**2))
    np.maximum(social[r0:r1, c0:c1], kernel, out=social[r0:r1, c0:c1])
    return clamped


def _extrapolate(track: np.ndarray, steps: int) -> np.ndarray:
    """Constant-velocity continuation of a track; static if one point."""
    if len(track) < 2:
        velocity = np.zeros(2)
    else:
        velocity = track[-1] - track[-2]
    t = np.arange(1, steps + 1, dtype=np.float64)[:, None]
    return track[-1][None, :] + t * velocity[None, :]


def build_context_map(
    target_obs: np.ndarray,
    neighbors: list[np.ndarray],
    scene: SceneGrid,
    future_steps: int = 12,
) -> ContextMap:
    """Energy map for one agent: max(scene, social footprints of neighbors).

    Each neighbor stamps a unit-height Gaussian (sigma = one cell) along
    its observed positions and their constant-velocity extrapolation over
    `future_steps` steps, so a cell directly on a neighbor path reaches 1.
    The target's own positions are never stamped.
    """
    social = np.zeros_like(scene.values)
    clamped = 0
    for track in neighbors:
        track = np.asarray(track, dtype=np.float64).reshape(-1, 2)
        if len(track) == 0:
            continue
        for point in track:
            clamped += _stamp(social, scene, point)
        for point in _extrapolate(track, future_steps):
            clamped += _stamp(social, scene, point)
    if clamped:
        logger.warning("%d neighbor positions fell outside the grid; clamped to border cells", clamped)
    return ContextMap(grid=scene, values=np.maximum(scene.values, social))


def sample_context_sequence(
    cmap: ContextMap, positions: np.ndarray, steps: int, patch: int
) -> np.ndarray:
    """Flattened patch x patch energy windows around the agent's cells.

    One row per step; when steps exceeds the number of observed positions
    by one, the last observed position is sampled twice (the extra row
    aligns the context with an appended endpoint plan).
    """
    n_obs = len(positions)
    if steps not in (n_obs, n_obs + 1):
        raise ValueError(f"steps must be {n_obs} or {n_obs + 1}, got {steps}")
    if patch % 2 != 1:
        raise ValueError(f"patch must be odd, got {patch}")
    half = patch // 2
    grid = cmap.grid
    out = np.empty((steps, patch * patch))
    for i in range(steps):
        point = positions[min(i, n_obs - 1)]
        row, col, _ = grid.cell_of(point)
        rows = np.clip(np.arange(row - half, row + half + 1), 0, grid.height - 1)
        cols = np.clip(np.arange(col - half, col + half + 1), 0, grid.width - 1)
        out[i] = cmap.values[np.ix_(rows, cols)].reshape(-1)
    return out


class RepresentationEncoder:
    """Embeds trajectory steps and context windows, concatenated to model_dim.

    Trajectory coordinates pass through one two-layer MLP, the flattened
    context windows through another; each contributes model_dim/2 features
    per step.
    """

    def __init__(self, params: ParameterSet, name: str, model_dim: int, patch: int, rng):
        if model_dim % 2 != 0:
            raise ValueError(f"model_dim must be even, got {model_dim}")
        half = model_dim // 2
        self.traj_mlp = MLP(params, f"{name}.traj", 2, model_dim, half, rng)
        self.ctx_mlp = MLP(params, f"{name}.ctx", patch * patch, model_dim, half, rng)

    def __call__(self, x_obs: Tensor, c_seq: Tensor) -> Tensor:
        if x_obs.shape[-2] != c_seq.shape[-2]:
            raise ad.ShapeError(
                f"trajectory and context step counts disagree: {x_obs.shape} vs {c_seq.shape}"
            )
        return ad.concat_lastaxis([self.traj_mlp(x_obs), self.ctx_mlp(c_seq)])
