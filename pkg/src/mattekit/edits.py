"""Edit scripts: a replayable record of interactive recompositions.

The browser UI and this module implement the same semantics so either
side can render reference frames for the other:
  - composition starts from black; every enabled (layer, slot) entry
    folds in back-to-front with the over operator
  - per layer: optional frame freeze, clamped time offset, unit-space
    color/alpha gains (clamped to [0, 1] after scaling), optional
    replacement PNG sequence (cycled when shorter than the clip)
  - output pixels are unit [0, 1]; files are written 8-bit
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import Decomposition, alpha_to_unit

EDIT_FORMAT = "edit-script"
EDIT_VERSION = 1


@dataclass
class LayerEdit:
    enabled: bool = True
    time_offset: int = 0
    freeze_frame: int | None = None
    color_gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    alpha_gain: float = 1.0
    replacement: dict | None = None  # {"color_pattern", "alpha_pattern", "frames"}

    def __post_init__(self):
        if any(g < 0 for g in self.color_gain) or self.alpha_gain < 0:
            raise ValueError("gains must be >= 0")


@dataclass
class EditState:
    order: tuple[tuple[str, int], ...]
    edits: dict[str, LayerEdit] = field(default_factory=dict)
    playhead: int = 0
    export_range: tuple[int, int] | None = None

    def edit_for(self, layer_id: str) -> LayerEdit:
        return self.edits.get(layer_id, LayerEdit())

    def to_json(self) -> str:
        payload = {
            "format": EDIT_FORMAT,
            "version": EDIT_VERSION,
            "order": [list(e) for e in self.order],
            "edits": {k: asdict(v) for k, v in self.edits.items()},
            "playhead": self.playhead,
            "export_range": None if self.export_range is None else list(self.export_range),
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EditState":
        data = json.loads(text)
        if data.get("format") != EDIT_FORMAT or data.get("version") != EDIT_VERSION:
            raise ValueError(f"unsupported edit script {data.get('format')!r} v{data.get('version')!r}")
        edits = {}
        for k, v in data.get("edits", {}).items():
            v = dict(v)
            v["color_gain"] = tuple(v.get("color_gain", (1, 1, 1)))
            edits[k] = LayerEdit(**v)
        order = tuple((lid, int(slot)) for lid, slot in data["order"])
        seen = set()
        for entry in order:
            if entry in seen:
                raise ValueError(f"order repeats entry {entry}")
            seen.add(entry)
        rng = data.get("export_range")
        return cls(
            order=order,
            edits=edits,
            playhead=int(data.get("playhead", 0)),
            export_range=None if rng is None else (int(rng[0]), int(rng[1])),
        )


def identity_edit(d: Decomposition) -> EditState:
    return EditState(order=tuple(d.order))


def _resolve_frame(edit: LayerEdit, t: int, frames: int) -> int:
    if edit.freeze_frame is not None:
        i = edit.freeze_frame
    else:
        i = t + edit.time_offset
    return int(np.clip(i, 0, frames - 1))


def _layer_source(d: Decomposition, base_dir, layer_id: str, edit: LayerEdit, i: int, slot: int):
    """Unit color/alpha for one entry, honoring replacement assets."""
    from . import io

    if edit.replacement is not None:
        rep = edit.replacement
        n = int(rep["frames"])
        j = i % n  # shorter assets cycle
        color = io.read_png_color(Path(base_dir) / rep["color_pattern"].format(j))
        alpha = io.read_png_gray(Path(base_dir) / rep["alpha_pattern"].format(j))
        return (color + 1.0) / 2.0, (alpha + 1.0) / 2.0
    layer = d.layers[layer_id]
    color = (layer.color[i] + 1.0) / 2.0
    alpha = alpha_to_unit(layer.alpha_slots[slot][i])
    return color, alpha


def recompose(d: Decomposition, edit_state: EditState, t: int, base_dir=".") -> np.ndarray:
    """Render frame t under the edit; returns unit [0, 1] (H, W, 3)."""
    T, H, W = d.shape
    out = np.zeros((H, W, 3), dtype=np.float32)
    for layer_id, slot in edit_state.order:
        edit = edit_state.edit_for(layer_id)
        if not edit.enabled:
            continue
        if layer_id not in d.layers:
            raise KeyError(f"edit order references unknown layer {layer_id!r}")
        i = _resolve_frame(edit, t, T)
        color, alpha = _layer_source(d, base_dir, layer_id, edit, i, slot)
        color = np.clip(color * np.asarray(edit.color_gain, dtype=np.float32), 0.0, 1.0)
        alpha = np.clip(alpha * edit.alpha_gain, 0.0, 1.0)
        out = alpha[..., None] * color + (1.0 - alpha[..., None]) * out
    return out


def replay(export_dir, script: EditState, out_dir, frame_range=None) -> list[Path]:
    """Replay an edit script against an exported decomposition.

    Writes 8-bit PNG frames (round-half-even) and returns their paths.
    """
    from . import io

    d = io.import_decomposition(export_dir)
    T = d.shape[0]
    rng = frame_range or script.export_range or (0, T)
    lo, hi = int(rng[0]), int(rng[1])
    if not 0 <= lo < hi <= T:
        raise ValueError(f"frame range {rng} invalid for {T} frames")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t in range(lo, hi):
        frame01 = recompose(d, script, t, base_dir=export_dir)
        data = np.clip(np.round(frame01 * 255.0), 0, 255).astype(np.uint8)
        path = out / f"{t:05d}.png"
        from PIL import Image

        Image.fromarray(data, mode="RGB").save(path)
        written.append(path)
    return written
