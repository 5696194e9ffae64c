"""Back-to-front over-compositing and homography warping.

Pure float32 numpy; frames may be composited in parallel by callers.
"""

from __future__ import annotations

import numpy as np

from .model import Decomposition, alpha_to_unit


def over_step(under: np.ndarray, layer_color: np.ndarray, layer_alpha_unit: np.ndarray) -> np.ndarray:
    """One over-operator step: out = a * c + (1 - a) * under, per pixel.

    ``layer_alpha_unit`` must already be in [0, 1].
    """
    if under.shape != layer_color.shape:
        raise ValueError(f"shape mismatch {under.shape} vs {layer_color.shape}")
    if layer_alpha_unit.shape != under.shape[:-1]:
        raise ValueError(
            f"alpha shape {layer_alpha_unit.shape} does not match color {under.shape}"
        )
    a = layer_alpha_unit[..., None]
    return (a * layer_color + (1.0 - a) * under).astype(np.float32)


def composite(d: Decomposition, t: int, subset: set[str] | None = None) -> np.ndarray:
    """Composite frame t along the decomposition's order.

    ``subset`` restricts which layers contribute; the environment layer is
    always included as the opaque base. Order always comes from
    ``d.order``, never from the subset itself.
    """
    T = d.shape[0]
    if not 0 <= t < T:
        raise IndexError(f"frame {t} out of range [0, {T})")
    if subset is not None:
        unknown = set(subset) - set(d.layers)
        if unknown:
            raise KeyError(f"unknown layer ids {sorted(unknown)}")

    env_id = d.environment_id()
    out = None
    for lid, slot in d.order:
        layer = d.layers[lid]
        if lid == env_id:
            out = layer.color[t].copy()
            continue
        if subset is not None and lid not in subset:
            continue
        if out is None:
            # No environment layer in the order: fold over black.
            out = np.zeros_like(layer.color[t])
        out = over_step(out, layer.color[t], alpha_to_unit(layer.alpha_slots[slot][t]))
    if out is None:
        raise ValueError("decomposition has no layers to composite")
    return out


def composite_video(d: Decomposition, subset: set[str] | None = None) -> np.ndarray:
    """Composite all frames; returns (T, H, W, 3)."""
    T = d.shape[0]
    return np.stack([composite(d, t, subset) for t in range(T)])


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray, edge_clamp: bool = True) -> np.ndarray:
    """Sample ``image`` (H, W[, C]) at float coords; out-of-range clamps to edge."""
    H, W = image.shape[:2]
    if edge_clamp:
        x = np.clip(x, 0.0, W - 1.0)
        y = np.clip(y, 0.0, H - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.clip(x0, 0, W - 2) if W > 1 else np.zeros_like(x0)
    y0 = np.clip(y0, 0, H - 2) if H > 1 else np.zeros_like(y0)
    fx = (x - x0).astype(np.float32)
    fy = (y - y0).astype(np.float32)
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    v00 = image[y0, x0]
    v01 = image[y0, x1]
    v10 = image[y1, x0]
    v11 = image[y1, x1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return (top * (1 - fy) + bot * fy).astype(image.dtype)


def apply_homography(hom: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Map pixel coords through a 3x3 homography; returns (x', y')."""
    w = hom[2, 0] * x + hom[2, 1] * y + hom[2, 2]
    xp = (hom[0, 0] * x + hom[0, 1] * y + hom[0, 2]) / w
    yp = (hom[1, 0] * x + hom[1, 1] * y + hom[1, 2]) / w
    return xp, yp


def warp_canvas_to_frame(canvas_image: np.ndarray, origin, hom: np.ndarray, out_hw) -> np.ndarray:
    """Render the frame view of a canvas under a frame->reference homography.

    Out-of-canvas samples clamp to the canvas edge.
    """
    H, W = out_hw
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    xr, yr = apply_homography(hom, xs, ys)
    return bilinear_sample(canvas_image, xr + origin[0], yr + origin[1])


def warp_image_by_flow(image: np.ndarray, flow: np.ndarray):
    """Backward-warp: out(p) = image(p + flow(p)). Returns (warped, valid).

    ``valid`` marks pixels whose source coordinate lies inside the frame.
    """
    H, W = image.shape[:2]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    sx = xs + flow[..., 0]
    sy = ys + flow[..., 1]
    valid = (sx >= 0) & (sx <= W - 1) & (sy >= 0) & (sy <= H - 1)
    return bilinear_sample(image, sx, sy), valid
