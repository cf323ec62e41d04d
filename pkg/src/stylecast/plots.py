"""Static SVG rendering of one sample's observed track, truth, and candidates."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]


def _polyline(points: np.ndarray, cls: str, style: str) -> str:
    coords = " ".join(f"{x:.3f},{y:.3f}" for x, y in points)
    return f'<polyline class="{escape(cls)}" points="{coords}" style="{style}" fill="none"/>'


def trajectory_svg(
    observed: np.ndarray,
    truth: np.ndarray | None,
    channel_predictions: dict[int, np.ndarray],
    proposals: np.ndarray | None = None,
    keels: dict[int, np.ndarray] | None = None,
    size: int = 480,
) -> str:
    """One sample as SVG: observed, ground truth, per-channel predictions.

    Coordinates are world meters; the viewBox is fit to the drawn
    geometry with a small margin. The y axis is flipped so north is up.
    """
    stacks = [observed] + [p for p in channel_predictions.values()]
    if truth is not None:
        stacks.append(truth)
    if proposals is not None:
        stacks.append(proposals)
    if keels:
        stacks.extend(keels.values())
    allpts = np.concatenate([np.asarray(s).reshape(-1, 2) for s in stacks])
    lo = allpts.min(axis=0) - 1.0
    hi = allpts.max(axis=0) + 1.0
    span = np.maximum(hi - lo, 1e-6)

    def to_px(pts: np.ndarray) -> np.ndarray:
        pts = (np.asarray(pts) - lo) / span
        px = np.empty_like(pts)
        px[:, 0] = pts[:, 0] * size
        px[:, 1] = (1.0 - pts[:, 1]) * size
        return px

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {size} {size}" width="{size}" height="{size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        _polyline(to_px(observed), "observed", "stroke:#000000;stroke-width:2"),
    ]
    if truth is not None:
        parts.append(_polyline(to_px(truth), "truth", "stroke:#00a000;stroke-width:2;stroke-dasharray:6 3"))
    if keels:
        for c, keel in sorted(keels.items()):
            color = _PALETTE[c % len(_PALETTE)]
            parts.append(
                _polyline(to_px(keel), f"keel-{c}", f"stroke:{color};stroke-width:0.7;stroke-dasharray:2 3")
            )
    for c, pred in sorted(channel_predictions.items()):
        color = _PALETTE[c % len(_PALETTE)]
        parts.append(_polyline(to_px(pred), f"prediction-{c}", f"stroke:{color};stroke-width:1.5"))
    if proposals is not None:
        for c, (x, y) in enumerate(to_px(proposals)):
            color = _PALETTE[c % len(_PALETTE)]
            parts.append(f'<circle class="proposal-{c}" cx="{x:.3f}" cy="{y:.3f}" r="4" fill="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts)
