"""Core data model: video clips, layers, components, and composition orders.

Conventions shared by the whole package:
  - color is float32 in [-1, 1], shape (T, H, W, 3)
  - alpha is float32 in [-1, 1], shape (T, H, W); map to [0, 1] only for
    compositing and thresholding
  - flow is float32 in pixels, shape (..., H, W, 2) ordered (dx, dy)
  - pixel (x, y) = (column, row); integer coordinates are pixel centers
  - homographies are 3x3 row-major and map frame-t pixel coordinates to
    the reference (frame 0) coordinate system
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FOREGROUND = "foreground"
ENVIRONMENT = "environment"
RESIDUAL = "residual"
LAYER_KINDS = (FOREGROUND, ENVIRONMENT, RESIDUAL)

# Stable layer identifiers referenced by manifests and the UI.
FG = "fg"
ENV = "env"
RES = "res"

DEFAULT_ORDER = ((ENV, 0), (RES, 0), (FG, 0))
# Split-residual order used when the residual layer interleaves with the
# foreground (back alpha behind the foreground, front alpha on top).
SPLIT_RESIDUAL_ORDER = ((ENV, 0), (RES, 0), (FG, 0), (RES, 1))


def alpha_to_unit(a):
    """Map alpha from storage range [-1, 1] to compositing range [0, 1]."""
    arr = np.asarray(a)
    if arr.min() < -1.0 or arr.max() > 1.0:
        raise ValueError("alpha outside [-1, 1]")
    return (arr + 1.0) / 2.0


def unit_to_alpha(a):
    """Inverse of :func:`alpha_to_unit`."""
    arr = np.asarray(a)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("unit alpha outside [0, 1]")
    return arr * 2.0 - 1.0


def to_uint8(img):
    """Convert [-1, 1] (or [0, 1] unit alpha already scaled) to 8-bit.

    Uses round-half-even, applied only at file boundaries.
    """
    u = (np.asarray(img, dtype=np.float64) + 1.0) / 2.0
    return np.clip(np.round(u * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img):
    """Convert 8-bit color back to float32 in [-1, 1]."""
    return (np.asarray(img, dtype=np.float32) / 255.0) * 2.0 - 1.0


@dataclass(frozen=True)
class FlowPair:
    """Forward/backward flow for one temporal offset k.

    forward[i] maps frame i -> i+k, backward[i] maps frame i+k -> i,
    both shaped (T-k, H, W, 2).
    """

    forward: np.ndarray
    backward: np.ndarray | None = None


@dataclass(frozen=True)
class VideoClip:
    """Input video: frames plus optional masks, flows, homographies."""

    frames: np.ndarray  # (T, H, W, 3) in [-1, 1]
    masks: np.ndarray | None = None  # (T, H, W) in {0, 1}
    flows: dict[int, FlowPair] | None = None
    homographies: np.ndarray | None = None  # (T, 3, 3) frame -> reference
    clean_background: np.ndarray | None = None  # (H, W, 3)

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4 or f.shape[-1] != 3:
            raise ValueError(f"frames must be (T, H, W, 3), got {f.shape}")
        if f.shape[0] < 2:
            raise ValueError("clip needs at least 2 frames")
        if self.masks is not None:
            if self.masks.shape != f.shape[:3]:
                raise ValueError("masks shape does not match frames")
            vals = np.unique(self.masks)
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise ValueError("mask values must be 0 or 1")
        if self.homographies is not None:
            if self.homographies.shape != (f.shape[0], 3, 3):
                raise ValueError("homographies must be (T, 3, 3)")
            dets = np.linalg.det(self.homographies)
            if np.any(np.abs(dets) <= 1e-8):
                raise ValueError("homographies must be invertible")

    @property
    def shape(self):
        return self.frames.shape[:3]  # (T, H, W)


@dataclass(frozen=True)
class Layer:
    """One decomposition layer: color, 1 or 2 alpha slots, optional flow."""

    color: np.ndarray  # (T, H, W, 3)
    alpha_slots: tuple[np.ndarray, ...]  # each (T, H, W) in [-1, 1]
    kind: str
    flow: dict[int, np.ndarray] | None = None  # k -> (T, H, W, 2)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if len(self.alpha_slots) not in (1, 2):
            raise ValueError("a layer has 1 or 2 alpha slots")

    @property
    def shape(self):
        return self.color.shape[:3]


@dataclass(frozen=True)
class ComponentSpec:
    name: str
    layer_ids: tuple[str, ...]
    role: str  # "foreground" | "background"


@dataclass(frozen=True)
class CompositionOrder:
    """Back-to-front list of (layer_id, alpha_slot_index)."""

    entries: tuple[tuple[str, int], ...]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class Canvas:
    """Environment canvas image with the frame-0 origin offset.

    ``origin`` is the (x, y) canvas index of reference-frame pixel (0, 0),
    so canvas_index = reference_coord + origin.
    """

    image: np.ndarray  # (Hc, Wc, 3)
    origin: tuple[float, float]
    homographies: np.ndarray  # (T, 3, 3) frame -> reference


@dataclass(frozen=True)
class Decomposition:
    layers: dict[str, Layer]
    components: tuple[ComponentSpec, ...]
    order: CompositionOrder
    canvas: Canvas | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return next(iter(self.layers.values())).shape

    def environment_id(self):
        for lid, layer in self.layers.items():
            if layer.kind == ENVIRONMENT:
                return lid
        return None


def validate(d: Decomposition) -> list[str]:
    """Check all type invariants; returns one description per violation."""
    problems: list[str] = []
    shapes = {lid: layer.shape for lid, layer in d.layers.items()}
    if len(set(shapes.values())) > 1:
        problems.append(f"layers disagree on (T, H, W): {shapes}")

    for lid, layer in d.layers.items():
        for si, a in enumerate(layer.alpha_slots):
            if a.shape != layer.color.shape[:3]:
                problems.append(f"layer {lid} alpha slot {si} shape mismatch")
                continue
            lo, hi = float(a.min()), float(a.max())
            if lo < -1.0 or hi > 1.0:
                bad_t = int(np.argmax(np.abs(a).max(axis=(1, 2)) > 1.0))
                problems.append(
                    f"layer {lid} alpha slot {si} outside [-1, 1] (frame {bad_t})"
                )
        if layer.kind == ENVIRONMENT:
            if len(layer.alpha_slots) != 1:
                problems.append(f"environment layer {lid} must have 1 alpha slot")
            elif not np.all(layer.alpha_slots[0] == 1.0):
                bad_t = int(
                    np.argmax((layer.alpha_slots[0] != 1.0).any(axis=(1, 2)))
                )
                problems.append(
                    f"environment layer {lid} opacity not fully opaque (frame {bad_t})"
                )

    owners: dict[str, str] = {}
    for comp in d.components:
        for lid in comp.layer_ids:
            if lid in owners:
                problems.append(f"layer {lid} in both {owners[lid]} and {comp.name}")
            owners[lid] = comp.name
            if lid not in d.layers:
                problems.append(f"component {comp.name} references unknown layer {lid}")
    for lid in d.layers:
        if lid not in owners:
            problems.append(f"layer {lid} belongs to no component")
    env_id = d.environment_id()
    if env_id is not None:
        bg = [c for c in d.components if env_id in c.layer_ids]
        if not bg or bg[0].role != "background":
            problems.append("environment layer not in the background component")

    seen = set()
    for lid, slot in d.order:
        if lid not in d.layers:
            problems.append(f"order references unknown layer {lid}")
            continue
        if slot >= len(d.layers[lid].alpha_slots):
            problems.append(f"order references missing slot {slot} of layer {lid}")
        if (lid, slot) in seen:
            problems.append(f"order repeats entry ({lid}, {slot})")
        seen.add((lid, slot))
    for lid, layer in d.layers.items():
        for si in range(len(layer.alpha_slots)):
            if (lid, si) not in seen:
                problems.append(f"order does not cover ({lid}, {si})")
    if len(d.order) and env_id is not None and d.order.entries[0][0] != env_id:
        problems.append("order must start with the environment layer")
    return problems
