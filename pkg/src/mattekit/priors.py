"""Marginal-prior acquisition and conditional-mapping augmentations.

Homographies come from local feature matching against frame 0 with robust
model fitting. The augmentation family maps marginal samples (masked
object pixels, the static canvas) to plausible conditional samples:
shadow-grey fills, semi-transparent reflections, smooth grid warps,
Gaussian darkening, plus generic brightness/blur/noise. Everything is
deterministic given (params, rng state); outputs stay inside [-1, 1].
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion, gaussian_filter

from .model import FlowPair, VideoClip


class InsufficientMatches(RuntimeError):
    """Feature matching could not support a homography fit."""


# ---------------------------------------------------------------------------
# homography / flow estimation


def _to_gray_u8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.round((frame.mean(axis=-1) + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)


def estimate_homographies(
    clip: VideoClip,
    ratio: float = 0.75,
    min_inliers: int = 8,
    ransac_threshold: float = 2.0,
    mask_dilation: int = 5,
) -> np.ndarray:
    """Per-frame homography mapping frame t to the frame-0 canvas system.

    Features inside the (dilated) foreground mask are excluded. Raises
    InsufficientMatches when fewer than ``min_inliers`` survive RANSAC;
    callers may then fall back to provided homographies.
    """
    cv2.setRNGSeed(1234)  # RANSAC reproducibility
    frames = clip.frames
    T = frames.shape[0]
    sift = cv2.SIFT_create()
    struct = np.ones((2 * mask_dilation + 1,) * 2, dtype=bool)

    def detect(t):
        gray = _to_gray_u8(frames[t])
        allowed = None
        if clip.masks is not None and clip.masks[t].any():
            excluded = binary_dilation(clip.masks[t] > 0.5, structure=struct)
            allowed = np.where(excluded, 0, 255).astype(np.uint8)
        return sift.detectAndCompute(gray, allowed)

    kp0, des0 = detect(0)
    if des0 is None or len(kp0) < min_inliers:
        raise InsufficientMatches(f"frame 0 has only {len(kp0 or [])} features")
    flann = cv2.FlannBasedMatcher({"algorithm": 1, "trees": 5}, {"checks": 50})

    homs = np.zeros((T, 3, 3), dtype=np.float64)
    homs[0] = np.eye(3)
    for t in range(1, T):
        kpt, dest = detect(t)
        if dest is None or len(kpt) < min_inliers:
            raise InsufficientMatches(f"frame {t} has only {len(kpt or [])} features")
        matches = flann.knnMatch(dest, des0, k=2)
        good = [m for m, n in matches if m.distance < ratio * n.distance]
        if len(good) < min_inliers:
            raise InsufficientMatches(f"frame {t}: {len(good)} ratio-test matches < {min_inliers}")
        src = np.float32([kpt[m.queryIdx].pt for m in good]).reshape(-1, 1, 2)
        dst = np.float32([kp0[m.trainIdx].pt for m in good]).reshape(-1, 1, 2)
        H, inlier_mask = cv2.findHomography(src, dst, cv2.RANSAC, ransac_threshold)
        if H is None or inlier_mask.sum() < min_inliers:
            raise InsufficientMatches(
                f"frame {t}: {0 if inlier_mask is None else int(inlier_mask.sum())} inliers < {min_inliers}"
            )
        homs[t] = H / H[2, 2]
    return homs


def estimate_flow(clip: VideoClip, k: int = 1) -> FlowPair:
    """Simple dense-flow fallback (Farneback) for clips without flow inputs."""
    frames = clip.frames
    T = frames.shape[0]
    if not 1 <= k < T:
        raise ValueError(f"offset {k} outside [1, T)")
    grays = [_to_gray_u8(f) for f in frames]
    args = dict(pyr_scale=0.5, levels=3, winsize=15, iterations=3, poly_n=5, poly_sigma=1.1, flags=0)
    fwd = np.stack(
        [cv2.calcOpticalFlowFarneback(grays[t], grays[t + k], None, **args) for t in range(T - k)]
    )
    bwd = np.stack(
        [cv2.calcOpticalFlowFarneback(grays[t + k], grays[t], None, **args) for t in range(T - k)]
    )
    return FlowPair(forward=fwd.astype(np.float32), backward=bwd.astype(np.float32))


# ---------------------------------------------------------------------------
# augmentation parameters


@dataclass(frozen=True)
class AugmentParams:
    # application probabilities
    p_rotate: float = 0.5
    p_flip: float = 0.5
    p_color_scale: float = 0.5
    p_reflection: float = 0.5
    p_brightness: float = 0.5
    p_blur: float = 0.5
    p_noise: float = 0.5
    p_grid_warp: float = 0.5
    p_darken: float = 0.5
    # ranges
    brightness_range: tuple[float, float] = (0.8, 1.2)
    color_scale_range: tuple[float, float] = (0.6, 1.4)
    blur_sigma_range: tuple[float, float] = (0.5, 1.5)
    noise_sigma: float = 0.03
    grey_fill_range: tuple[float, float] = (-1.0, -0.2)
    reflection_opacity_range: tuple[float, float] = (0.3, 0.7)
    grid_size: int = 8
    max_grid_disp: float = 0.05  # fraction of min(H, W)
    blob_sigma_range: tuple[float, float] = (4.0, 12.0)
    blob_strength_range: tuple[float, float] = (0.1, 0.5)
    blob_count_range: tuple[int, int] = (1, 3)
    mask_erosion: int = 2
    has_reflection: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in (
            "brightness_range",
            "color_scale_range",
            "blur_sigma_range",
            "grey_fill_range",
            "reflection_opacity_range",
            "blob_sigma_range",
            "blob_strength_range",
        ):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered low <= high")
        for name in vars(self):
            if name.startswith("p_") and not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def _clip(img: np.ndarray) -> np.ndarray:
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def generic_augment(image: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    """Brightness scale, Gaussian blur, Gaussian noise, each with its probability."""
    out = image.astype(np.float32)
    if rng.random() < params.p_brightness:
        out = out * rng.uniform(*params.brightness_range)
        out = _clip(out)
    if rng.random() < params.p_blur:
        sigma = rng.uniform(*params.blur_sigma_range)
        out = np.stack(
            [gaussian_filter(out[..., c], sigma, mode="nearest") for c in range(3)], axis=-1
        )
        out = _clip(out)
    if rng.random() < params.p_noise:
        out = out + rng.normal(0.0, params.noise_sigma, size=out.shape).astype(np.float32)
        out = _clip(out)
    return out


def make_foreground_positive(
    frame: np.ndarray, mask: np.ndarray, params: AugmentParams, rng: np.random.Generator
) -> np.ndarray:
    """Object extraction -> rotate/flip -> color scale -> grey fill -> reflection."""
    if not mask.any():
        raise ValueError("empty mask")
    H, W = mask.shape
    m = mask > 0.5
    if params.mask_erosion > 0:
        eroded = binary_erosion(m, np.ones((2 * params.mask_erosion + 1,) * 2, dtype=bool))
        if eroded.any():  # avoid wiping small objects
            m = eroded
    ys, xs = np.nonzero(m)
    cy, cx = float(ys.mean()), float(xs.mean())

    angle = rng.uniform(0.0, 360.0) if rng.random() < params.p_rotate else 0.0
    flip_x = flip_y = 1.0
    if rng.random() < params.p_flip:
        flip_x = -1.0 if rng.random() < 0.5 else 1.0
        flip_y = -1.0 if rng.random() < 0.5 else 1.0

    sprite = frame * m[..., None]
    alpha = m.astype(np.float32)
    if angle != 0.0 or flip_x < 0 or flip_y < 0:
        rad = np.deg2rad(angle)
        R = np.array(
            [[np.cos(rad) * flip_x, -np.sin(rad) * flip_x], [np.sin(rad) * flip_y, np.cos(rad) * flip_y]]
        )
        M = np.zeros((2, 3), dtype=np.float64)
        M[:, :2] = R
        M[:, 2] = [cx, cy] - R @ np.array([cx, cy])
        sprite = cv2.warpAffine(sprite, M, (W, H), flags=cv2.INTER_LINEAR, borderValue=0.0)
        alpha = cv2.warpAffine(alpha, M, (W, H), flags=cv2.INTER_LINEAR, borderValue=0.0)

    if rng.random() < params.p_color_scale:
        scale = rng.uniform(*params.color_scale_range)
        sprite = _clip(sprite * scale)

    grey = np.float32(rng.uniform(*params.grey_fill_range))
    out = alpha[..., None] * sprite + (1.0 - alpha[..., None]) * grey

    if params.has_reflection and rng.random() < params.p_reflection:
        ys2, xs2 = np.nonzero(alpha > 0.01)
        if ys2.size:
            bottom = int(ys2.max())
            refl_c = np.zeros_like(sprite)
            refl_a = np.zeros_like(alpha)
            h_above = bottom + 1
            h_below = min(H - (bottom + 1), h_above)
            if h_below > 0:
                src_c = sprite[bottom + 1 - h_below : bottom + 1][::-1]
                src_a = alpha[bottom + 1 - h_below : bottom + 1][::-1]
                refl_c[bottom + 1 : bottom + 1 + h_below] = src_c
                refl_a[bottom + 1 : bottom + 1 + h_below] = src_a
                opacity = rng.uniform(*params.reflection_opacity_range)
                w = (opacity * refl_a)[..., None]
                out = w * refl_c + (1.0 - w) * out

    return generic_augment(_clip(out), params, rng)


def grid_warp_field(
    shape_hw, grid_size: int, max_disp: float, rng: np.random.Generator
) -> np.ndarray:
    """Smooth dense (H, W, 2) displacement from random per-vertex shifts.

    Vertex translations are splatted with Gaussian kernels (sigma = half
    the vertex spacing); zero translation gives the exact identity.
    """
    H, W = shape_hw
    vx = np.linspace(0, W - 1, grid_size)
    vy = np.linspace(0, H - 1, grid_size)
    spacing = min(vx[1] - vx[0], vy[1] - vy[0]) if grid_size > 1 else max(H, W)
    sigma = spacing / 2.0
    amp = max_disp * min(H, W)
    trans = rng.uniform(-amp, amp, size=(grid_size, grid_size, 2))
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    dense = np.zeros((H, W, 2), dtype=np.float64)
    for j, gy in enumerate(vy):
        for i, gx in enumerate(vx):
            t = trans[j, i]
            if t[0] == 0.0 and t[1] == 0.0:
                continue
            w = np.exp(-((xs - gx) ** 2 + (ys - gy) ** 2) / (2.0 * sigma * sigma))
            dense[..., 0] += t[0] * w
            dense[..., 1] += t[1] * w
    return dense.astype(np.float32)


def apply_displacement(image: np.ndarray, dense: np.ndarray) -> np.ndarray:
    """Backward warp: content moves by +dense; samples clamp to the edge."""
    from .compositing import bilinear_sample

    H, W = image.shape[:2]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    return bilinear_sample(image, xs - dense[..., 0], ys - dense[..., 1])


def darken_gaussian(image: np.ndarray, center, sigma: float, strength: float) -> np.ndarray:
    """Multiply by (1 - strength * gaussian) around ``center`` = (x, y)."""
    H, W = image.shape[:2]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    g = np.exp(-((xs - center[0]) ** 2 + (ys - center[1]) ** 2) / (2.0 * sigma * sigma))
    return _clip(image * (1.0 - strength * g[..., None]))


def make_background_positive(
    canvas_frame: np.ndarray, params: AugmentParams, rng: np.random.Generator
) -> np.ndarray:
    """Grid warp -> Gaussian darkening blobs -> generic augmentations."""
    out = canvas_frame.astype(np.float32)
    H, W = out.shape[:2]
    if rng.random() < params.p_grid_warp and params.max_grid_disp > 0:
        dense = grid_warp_field((H, W), params.grid_size, params.max_grid_disp, rng)
        out = apply_displacement(out, dense)
    if rng.random() < params.p_darken:
        lo, hi = params.blob_count_range
        count = int(rng.integers(lo, hi + 1))
        for _ in range(count):
            center = (rng.uniform(0, W - 1), rng.uniform(0, H - 1))
            sigma = rng.uniform(*params.blob_sigma_range)
            strength = rng.uniform(*params.blob_strength_range)
            out = darken_gaussian(out, center, sigma, strength)
    return generic_augment(_clip(out), params, rng)


def sample_patches(
    image: np.ndarray, scale: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n random scale x scale crops with uniform top-left corners."""
    H, W = image.shape[:2]
    if scale > min(H, W):
        raise ValueError(f"patch scale {scale} exceeds image size {(H, W)}")
    ys = rng.integers(0, H - scale + 1, size=n)
    xs = rng.integers(0, W - scale + 1, size=n)
    return np.stack([image[y : y + scale, x : x + scale] for y, x in zip(ys, xs)])


# ---------------------------------------------------------------------------
# banks

PATCH_SCALES = (16, 32, 64)


@dataclass
class PositiveBank:
    component: str
    images: np.ndarray  # (N, H, W, 3)
    scales: tuple[int, ...] = PATCH_SCALES
    provenance: dict = field(default_factory=dict)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.images.astype("<f4").tobytes())
        return h.hexdigest()[:16]


def build_positive_banks(
    clip: VideoClip,
    canvas_frames: np.ndarray,
    params: AugmentParams,
    size: int = 512,
) -> dict[str, PositiveBank]:
    """Augmented positive-example banks for the fg and residual priors.

    ``canvas_frames``: per-frame environment views from Stage 1; when the
    clip carries a clean background it is used instead.
    """
    if clip.masks is None:
        raise ValueError("clip has no masks; foreground marginal prior undefined")
    T = clip.frames.shape[0]
    if clip.clean_background is not None:
        bg_sources = clip.clean_background[None]
    else:
        bg_sources = canvas_frames
    ss = np.random.SeedSequence((params.seed, 77))
    fg_images = []
    res_images = []
    maskable = [t for t in range(T) if clip.masks[t].any()]
    if not maskable:
        raise ValueError("no frame has a nonempty mask")
    for child in ss.spawn(size):
        rng = np.random.Generator(np.random.Philox(child))
        t = maskable[int(rng.integers(0, len(maskable)))]
        fg_images.append(make_foreground_positive(clip.frames[t], clip.masks[t], params, rng))
        b = int(rng.integers(0, bg_sources.shape[0]))
        res_images.append(make_background_positive(bg_sources[b], params, rng))
    empty = np.zeros((0,) + clip.frames.shape[1:], np.float32)
    prov = {"params_digest": _params_digest(params), "size": size}
    return {
        "fg": PositiveBank("fg", np.stack(fg_images) if fg_images else empty, provenance=prov),
        "res": PositiveBank("res", np.stack(res_images) if res_images else empty, provenance=prov),
    }


def _params_digest(params: AugmentParams) -> str:
    from .io import config_digest

    return config_digest(params)
