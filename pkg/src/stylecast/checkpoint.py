"""Text checkpoints: parameter name -> shape -> values.

Values are written with 17 significant digits, which round-trips IEEE
float64 exactly, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import ParameterSet

_MAGIC = "stylecast-checkpoint v1"


class CheckpointError(ValueError):
    pass


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_checkpoint(path, params: ParameterSet, meta: dict | None = None) -> None:
    lines = [_MAGIC]
    for key in sorted(meta or {}):
        lines.append(f"meta {key} {(meta or {})[key]}")
    for p in params:
        dims = " ".join(str(d) for d in p.tensor.shape)
        lines.append(f"param {p.name} {len(p.tensor.shape)} {dims}".rstrip())
        lines.append(" ".join(_fmt(v) for v in p.tensor.data.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Returns (name -> array, meta key -> raw string value)."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    i = 1
    while i < len(text):
        line = text[i]
        if not line.strip():
            i += 1
            continue
        if line.startswith("meta "):
            _, key, value = line.split(" ", 2)
            meta[key] = value
            i += 1
            continue
        if not line.startswith("param "):
            raise CheckpointError(f"{path}:{i + 1}: unexpected line {line!r}")
        fields = line.split()
        name, ndim = fields[1], int(fields[2])
        shape = tuple(int(d) for d in fields[3 : 3 + ndim])
        raw = text[i + 1].split()
        values = np.array(raw, dtype=np.float64) if raw else np.empty(0)
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise CheckpointError(
                f"{path}:{i + 2}: parameter {name} expects {expected} values, found {values.size}"
            )
        arrays[name] = values.reshape(shape)
        i += 2
    return arrays, meta


def restore_parameters(params: ParameterSet, arrays: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into an existing parameter set, checking names/shapes."""
    names = set(params.names())
    missing = names - arrays.keys()
    extra = arrays.keys() - names
    if missing or extra:
        raise CheckpointError(
            f"parameter names disagree (missing: {sorted(missing)[:3]}, extra: {sorted(extra)[:3]})"
        )
    for p in params:
        a = arrays[p.name]
        if a.shape != p.tensor.shape:
            raise CheckpointError(
                f"parameter {p.name}: checkpoint shape {a.shape} != model shape {p.tensor.shape}"
            )
        p.data = a
