"""Procedural desk-scale scenes with exact ground-truth decompositions.

A scene is built directly as a layer stack (environment canvas, residual
disturbance, foreground object with optional contact shadow) and the video
is *defined* as the composite of those layers, so the ground-truth
decomposition reproduces the video exactly. Camera jitter, flow fields and
homographies are analytic.

All scene geometry lives in reference coordinates (the frame-0 pixel
system); frame t sees the scene through the jitter homography J_t mapping
frame-t pixels to reference coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import compositing
from .model import (
    ENV,
    FG,
    RES,
    Canvas,
    ComponentSpec,
    CompositionOrder,
    Decomposition,
    FlowPair,
    Layer,
    VideoClip,
    alpha_to_unit,
)


class SceneConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectSpec:
    shape: str = "square"  # "square" | "disc"
    size: float = 12.0  # edge length / diameter, px
    color: tuple[float, float, float] = (-0.5, -0.15, 0.9)


@dataclass(frozen=True)
class CushionSpec:
    # Rest rectangle (x0, top, x1, bottom) in reference coordinates.
    rect: tuple[float, float, float, float] = (30.0, 40.0, 82.0, 56.0)
    color: tuple[float, float, float] = (0.72, 0.5, -0.35)
    texture: str = "speckle"  # "speckle" | "plain"
    stiffness: float = 1.2  # dent px per px/frame of impact speed
    damping: float = 0.78  # dent decay per frame
    dent_sigma: float = 7.0  # horizontal dent spread, px


@dataclass(frozen=True)
class ShadowSpec:
    offset: tuple[float, float] = (2.0, 1.5)
    darkening: float = 0.4  # in (0, 1]
    softness: float = 1.0


@dataclass(frozen=True)
class SceneConfig:
    resolution: tuple[int, int] = (64, 112)  # (H, W)
    frame_count: int = 40
    gravity: float = 0.5  # px / frame^2
    obj: ObjectSpec | None = field(default_factory=ObjectSpec)
    cushion: CushionSpec | None = field(default_factory=CushionSpec)
    shadow: ShadowSpec | None = field(default_factory=ShadowSpec)
    bounce_count: int = 3
    jitter_amplitude: float = 1.5  # px
    jitter_rotation_deg: float = 0.3
    seed: int = 0
    shadow_owner: str = "fg"  # "fg" | "res"
    flow_offsets: tuple[int, ...] = (1, 4, 8)
    texture_scale: float = 9.0
    texture_amplitude: float = 0.2
    # Optional sharp speckle overlay. Feature-rich (good for local feature
    # matching) but voids the documented flow-check resampling tolerances.
    detail_amplitude: float = 0.0
    detail_scale: float = 3.0
    # Explicit per-frame (dx, dy) jitter translations; overrides the random
    # jitter walk when given (rotation still applies unless 0).
    jitter_path: tuple[tuple[float, float], ...] | None = None

    def validate(self):
        H, W = self.resolution
        if self.frame_count < 2:
            raise SceneConfigError("frame_count must be >= 2")
        if self.bounce_count < 1:
            raise SceneConfigError("bounce_count must be >= 1")
        if self.shadow is not None and not 0 < self.shadow.darkening <= 1:
            raise SceneConfigError("shadow darkening must be in (0, 1]")
        if self.obj is not None:
            if self.cushion is None:
                raise SceneConfigError("an object needs a cushion to land on")
            x0, top, x1, bottom = self.cushion.rect
            if not (0 <= x0 < x1 <= W and 0 <= top < bottom <= H):
                raise SceneConfigError("cushion rectangle outside the frame")
            if self.obj.size >= min(x1 - x0, top):
                raise SceneConfigError("object does not fit in frame at rest")
        if self.jitter_path is not None and len(self.jitter_path) != self.frame_count:
            raise SceneConfigError("jitter_path length must equal frame_count")
        for k in self.flow_offsets:
            if not 1 <= k < self.frame_count:
                raise SceneConfigError(f"flow offset {k} outside [1, T)")


@dataclass(frozen=True)
class SceneTruth:
    video: VideoClip
    gt_decomposition: Decomposition
    gt_flow: dict[int, FlowPair]
    gt_masks: np.ndarray  # (T, H, W) in {0, 1}
    background_counterfactual: np.ndarray  # (T, H, W, 3)
    trajectory: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# textures and jitter


def _lattice(rng: np.random.Generator, h: int, w: int, amplitude: float) -> np.ndarray:
    return rng.uniform(-amplitude, amplitude, size=(h, w)).astype(np.float32)


def _lattice_eval(lat: np.ndarray, x: np.ndarray, y: np.ndarray, scale: float) -> np.ndarray:
    """Smoothstep-interpolated value noise at float reference coords.

    C1-smooth with bounded curvature so that bilinear re-sampling of the
    rendered frames stays within the documented flow-check tolerances.
    """
    hl, wl = lat.shape
    u = np.clip(x / scale + 2.0, 0.0, wl - 1.001)
    v = np.clip(y / scale + 2.0, 0.0, hl - 1.001)
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = u - i0
    fv = v - j0
    wu = fu * fu * (3.0 - 2.0 * fu)
    wv = fv * fv * (3.0 - 2.0 * fv)
    i1 = np.minimum(i0 + 1, wl - 1)
    j1 = np.minimum(j0 + 1, hl - 1)
    top = lat[j0, i0] * (1 - wu) + lat[j0, i1] * wu
    bot = lat[j1, i0] * (1 - wu) + lat[j1, i1] * wu
    return (top * (1 - wv) + bot * wv).astype(np.float32)


def _ramp(x: np.ndarray, width: float) -> np.ndarray:
    """Cosine step from 0 to 1 over [-width/2, width/2]; C1-smooth."""
    u = np.clip(x / max(width, 1e-6) + 0.5, 0.0, 1.0)
    return (0.5 - 0.5 * np.cos(np.pi * u)).astype(np.float64)


def _jitter_transforms(cfg: SceneConfig) -> np.ndarray:
    """Per-frame homographies J_t: frame-t pixel -> reference coords.

    A bounded smooth random walk; J_0 is the identity.
    """
    T = cfg.frame_count
    H, W = cfg.resolution
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((cfg.seed, 11))))
    if cfg.jitter_path is not None:
        trans = np.asarray(cfg.jitter_path, dtype=np.float64)
    else:
        steps = rng.normal(0.0, 0.6, size=(T, 2))
        trans = np.cumsum(steps, axis=0)
        trans -= trans[0]
        amp = np.abs(trans).max()
        if amp > 0 and cfg.jitter_amplitude > 0:
            trans *= cfg.jitter_amplitude / amp
        elif cfg.jitter_amplitude == 0:
            trans[:] = 0.0
    if cfg.jitter_rotation_deg > 0:
        steps = rng.normal(0.0, 0.5, size=T)
        rot = np.cumsum(steps)
        rot -= rot[0]
        m = np.abs(rot).max()
        rot = rot / m * math.radians(cfg.jitter_rotation_deg) if m > 0 else rot
    else:
        rot = np.zeros(T)

    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0
    homs = np.zeros((T, 3, 3), dtype=np.float64)
    for t in range(T):
        c, s = math.cos(rot[t]), math.sin(rot[t])
        R = np.array([[c, -s, cx - c * cx + s * cy], [s, c, cy - s * cx - c * cy], [0, 0, 1]])
        Tr = np.array([[1, 0, trans[t, 0]], [0, 1, trans[t, 1]], [0, 0, 1]], dtype=np.float64)
        homs[t] = Tr @ R
    return homs


def _canvas_extent(homs: np.ndarray, hw) -> int:
    H, W = hw
    corners = np.array([[0, 0, 1], [W - 1, 0, 1], [0, H - 1, 1], [W - 1, H - 1, 1]], dtype=np.float64)
    worst = 0.0
    for hom in homs:
        p = corners @ hom.T
        p = p[:, :2] / p[:, 2:3]
        worst = max(
            worst,
            float(-(p[:, 0].min())),
            float(p[:, 0].max() - (W - 1)),
            float(-(p[:, 1].min())),
            float(p[:, 1].max() - (H - 1)),
        )
    return int(math.ceil(worst)) + 2


# ---------------------------------------------------------------------------
# static scene appearance (reference coordinates)


class _SceneAppearance:
    """Analytic color/geometry of the static scene, seeded per config.

    Everything static is C1-smooth: edge ramps and texture curvature are
    budgeted so one bilinear resampling of a rendered frame stays within
    the flow-check tolerances.
    """

    EDGE_W = 8.0  # cushion edge ramp, px
    FLOOR_W = 12.0  # wall/floor transition ramp, px
    CONTACT_W = 10.0  # cushion-to-floor contact fade, px

    def __init__(self, cfg: SceneConfig):
        H, W = cfg.resolution
        self.cfg = cfg
        self.floor_y = 0.88 * H
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((cfg.seed, 13))))
        n = max(H, W)
        self.wall_lat = _lattice(rng, n, n, cfg.texture_amplitude)
        self.floor_lat = _lattice(rng, n, n, cfg.texture_amplitude * 0.8)
        self.cushion_lat = _lattice(rng, n, n, cfg.texture_amplitude * 0.9)
        self.detail_lat = _lattice(rng, n, n, cfg.detail_amplitude)

    def backdrop(self, x, y):
        """Wall + floor color at reference coords (no cushion)."""
        H, W = self.cfg.resolution
        scale = self.cfg.texture_scale
        grad = (y / max(H - 1, 1)).astype(np.float32)
        wall = np.stack(
            [0.25 - 0.25 * grad, 0.3 - 0.2 * grad, 0.45 - 0.15 * grad], axis=-1
        )
        wall += _lattice_eval(self.wall_lat, x, y, scale)[..., None]
        floor = np.stack(
            [np.full_like(grad, -0.25), np.full_like(grad, -0.32), np.full_like(grad, -0.42)],
            axis=-1,
        )
        floor += _lattice_eval(self.floor_lat, x, y, scale * 1.3)[..., None]
        on_floor = _ramp(y - self.floor_y, self.FLOOR_W)[..., None]
        out = wall * (1 - on_floor) + floor * on_floor
        if self.cfg.detail_amplitude > 0:
            s = self.cfg.detail_scale
            out += compositing.bilinear_sample(self.detail_lat, x / s + 2.0, y / s + 2.0)[..., None]
        return out.astype(np.float32)

    def cushion_color(self, x, y_rest):
        cu = self.cfg.cushion
        base = np.broadcast_to(np.asarray(cu.color, dtype=np.float32), x.shape + (3,)).copy()
        if cu.texture == "speckle":
            base += _lattice_eval(self.cushion_lat, x, y_rest, self.cfg.texture_scale)[..., None]
        # Contact shading: fade into the floor color near the bottom edge
        # so the hard bottom boundary carries almost no contrast.
        x0, top, x1, bottom = cu.rect
        w = self.CONTACT_W
        fade = _ramp(y_rest - (bottom - w), w)[..., None]
        floor_col = np.array([-0.25, -0.32, -0.42], dtype=np.float32)
        return (base * (1 - fade) + floor_col * fade).astype(np.float32)

    def rest_coverage(self, x, y_rest):
        """Cushion coverage in material (rest) coordinates; smooth ramps."""
        x0, top, x1, bottom = self.cfg.cushion.rect
        inside_x = _ramp(x - x0, self.EDGE_W) * _ramp(x1 - x, self.EDGE_W)
        inside_y = _ramp(y_rest - top, self.EDGE_W) * _ramp(bottom - y_rest, 3.0)
        return (inside_x * inside_y).astype(np.float32)

    def rest_rows(self, x, y, dent):
        """Invert the vertical compression: deformed row y -> material row.

        The dent displaces the top edge down by d(x); rows compress
        linearly toward the fixed bottom edge, so material advects with
        the closed-form flow used by the ground truth.
        """
        x0, top, x1, bottom = self.cfg.cushion.rect
        span = bottom - top
        d = dent(x)
        denom = np.maximum(1.0 - d / span, 1e-3)
        return (y - d * bottom / span) / denom

    def cushion_coverage(self, x, y, dent):
        """Deformed coverage and material rows at reference coords."""
        y_rest = self.rest_rows(x, y, dent)
        return self.rest_coverage(x, y_rest), y_rest

    def static_color(self, x, y):
        """Full static scene (rest cushion over backdrop)."""
        out = self.backdrop(x, y)
        if self.cfg.cushion is not None:
            cov = self.rest_coverage(x, y)
            col = self.cushion_color(x, y)
            out = out * (1 - cov[..., None]) + col * cov[..., None]
        return out.astype(np.float32)


# ---------------------------------------------------------------------------
# physics


def _bounce_schedule(cfg: SceneConfig, h_max: float):
    """Solve drop height and restitution for exactly bounce_count rebounds.

    The drop is capped by the frame geometry (h_max); the restitution is
    fit so the whole trajectory ends within the clip, after which the
    object rests on the cushion. Returns (h, e, impact_times,
    rebound_speeds, impact_speeds); the final rebound speed is 0 (rest).
    """
    g = cfg.gravity
    bc = cfg.bounce_count
    budget = cfg.frame_count - 3.0

    def series(e):
        return sum(e**n for n in range(1, bc + 1))

    e_lo, e_hi = 0.25, 0.75
    if h_max <= 1.0:
        raise SceneConfigError("no room above the cushion for the object to fall")
    t0 = min(math.sqrt(2.0 * h_max / g), budget / (1.0 + 2.0 * series(e_lo)))
    if g * t0 < 0.6:
        raise SceneConfigError("frame budget too small for the requested bounce count")
    s_target = (budget / t0 - 1.0) / 2.0
    if s_target <= series(e_lo):
        e = e_lo
    elif s_target >= series(e_hi):
        e = e_hi
    else:
        lo, hi = e_lo, e_hi
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if series(mid) < s_target:
                lo = mid
            else:
                hi = mid
        e = 0.5 * (lo + hi)

    v0 = g * t0
    h = 0.5 * g * t0 * t0
    impact_times = [t0]
    rebound_speeds = []
    impact_speeds = [v0]
    v = v0
    for _ in range(bc):
        v = e * v
        rebound_speeds.append(v)
        impact_times.append(impact_times[-1] + 2.0 * v / g)
        impact_speeds.append(v)
    rebound_speeds.append(0.0)  # final impact: the object settles
    if impact_times[-1] > cfg.frame_count - 1.5:
        raise SceneConfigError("trajectory does not settle within the clip")
    return h, e, impact_times, rebound_speeds, impact_speeds


def _object_height(tau: float, h: float, g: float, impact_times, rebound_speeds):
    """Height above the contact level (>= 0) at continuous time tau."""
    if tau <= impact_times[0]:
        return max(h - 0.5 * g * tau * tau, 0.0)
    for i in range(len(impact_times)):
        last = i == len(impact_times) - 1
        if last or tau <= impact_times[i + 1]:
            dt = tau - impact_times[i]
            return max(rebound_speeds[i] * dt - 0.5 * g * dt * dt, 0.0)
    return 0.0


# ---------------------------------------------------------------------------
# generator


def _combine_over(a_top, c_top, a_bot, c_bot):
    """Fold two over-layers (top over bottom) into an equivalent single layer."""
    a = a_top + (1 - a_top) * a_bot
    num = a_top[..., None] * c_top + ((1 - a_top) * a_bot)[..., None] * c_bot
    c = np.where(a[..., None] > 1e-8, num / np.maximum(a[..., None], 1e-8), c_top)
    return a.astype(np.float32), c.astype(np.float32)


def generate_bouncing_scene(cfg: SceneConfig) -> SceneTruth:
    """Render the bouncing-object scene with exact GT layers and flow."""
    cfg.validate()
    if cfg.obj is None or cfg.cushion is None:
        raise SceneConfigError("bouncing scene requires object and cushion specs")
    H, W = cfg.resolution
    T = cfg.frame_count
    app = _SceneAppearance(cfg)
    homs = _jitter_transforms(cfg)
    pad = _canvas_extent(homs, (H, W))

    # Environment canvas: static scene rendered on the padded grid.
    ys, xs = np.mgrid[0:H + 2 * pad, 0:W + 2 * pad].astype(np.float64)
    canvas_img = app.static_color(xs - pad, ys - pad)
    canvas = Canvas(image=canvas_img, origin=(float(pad), float(pad)), homographies=homs)

    x0, top, x1, bottom = cfg.cushion.rect
    cx = (x0 + x1) / 2.0
    half = cfg.obj.size / 2.0
    y_contact = top - half  # object center when touching the rest top edge
    h_max = y_contact - half - 2.0
    h, e, impacts, rebounds, hit_speeds = _bounce_schedule(cfg, h_max)
    if y_contact - h < half + 1.0:
        raise SceneConfigError("object escapes the frame before the first bounce")

    # Per-frame dent envelope (superposed impacts, exponential decay).
    span = bottom - top
    a_max = 0.3 * span
    dent_env = np.zeros(T)
    for ti, vi in zip(impacts, hit_speeds):
        amp = min(cfg.cushion.stiffness * vi, a_max)
        tt = np.arange(T, dtype=np.float64)
        contrib = np.where(tt >= ti, amp * cfg.cushion.damping ** (tt - ti), 0.0)
        dent_env += contrib
    dent_env = np.minimum(dent_env, a_max)
    # Once the object settles its weight keeps the cushion pressed.
    t_settle = min(int(math.ceil(impacts[-1])), T - 1)
    dent_env[t_settle:] = dent_env[t_settle]

    heights = np.array(
        [_object_height(t, h, cfg.gravity, impacts, rebounds) for t in range(T)]
    )
    centers_y = y_contact - heights
    # Couple the object to the dented surface when touching it.
    contact_w = np.clip(1.0 - heights / 2.0, 0.0, 1.0)
    centers_y = centers_y + dent_env * contact_w
    centers = np.stack([np.full(T, cx), centers_y], axis=1)

    def dent_fn(t):
        env = dent_env[t]
        sig = cfg.cushion.dent_sigma

        def f(xq):
            return env * np.exp(-((xq - cx) ** 2) / (2.0 * sig * sig))

        return f

    def object_coverage(x, y, t):
        # 2 px anti-alias ramp: guarantees the edge shows up in the
        # soft-alpha band used by the flow-check exclusions.
        dx = x - centers[t, 0]
        dy = y - centers[t, 1]
        if cfg.obj.shape == "square":
            return (
                np.clip((half - np.abs(dx)) / 2.0 + 0.5, 0.0, 1.0)
                * np.clip((half - np.abs(dy)) / 2.0 + 0.5, 0.0, 1.0)
            ).astype(np.float32)
        r = np.sqrt(dx * dx + dy * dy)
        return np.clip((half - r) / 2.0 + 0.5, 0.0, 1.0).astype(np.float32)

    def shadow_alpha(x, y, t):
        if cfg.shadow is None:
            return np.zeros(x.shape, dtype=np.float32)
        sh = cfg.shadow
        scx = centers[t, 0] + sh.offset[0]
        surf_y = top + dent_fn(t)(np.asarray(scx)) + sh.offset[1]
        rx = 0.8 * cfg.obj.size * (0.8 + 0.4 * sh.softness)
        ry = 0.28 * cfg.obj.size * (0.8 + 0.4 * sh.softness)
        rho2 = ((x - scx) / rx) ** 2 + ((y - surf_y) / ry) ** 2
        gap = heights[t]
        strength = sh.darkening * float(np.clip(1.0 - gap / (3.0 * h / 4.0), 0.15, 1.0))
        a = strength * np.exp(-rho2 * 2.0)
        # Shadows land on surfaces only (cushion top and floor).
        receiver = (y >= top + dent_fn(t)(x) - 0.5).astype(np.float32)
        a = a * receiver
        # Truncate the far tail so weakly shaded pixels are either clean
        # or inside the soft-alpha exclusion band.
        return np.where(a >= 0.003, a, 0.0).astype(np.float32)

    env_color = np.empty((T, H, W, 3), dtype=np.float32)
    res_color = np.empty_like(env_color)
    res_alpha = np.empty((T, H, W), dtype=np.float32)
    fg_color = np.empty_like(env_color)
    fg_alpha = np.empty((T, H, W), dtype=np.float32)
    # Material ids drive the analytic flow: 0 static, 2 cushion, 3 object.
    material_ids = np.zeros((T, H, W), dtype=np.int8)

    ys_f, xs_f = np.mgrid[0:H, 0:W].astype(np.float64)
    ref_coords = []
    edge_w = app.EDGE_W
    for t in range(T):
        xr, yr = compositing.apply_homography(homs[t], xs_f, ys_f)
        ref_coords.append((xr, yr))
        env_color[t] = app.static_color(xr, yr)

        # Residual: repaint of the disturbed cushion region.
        dent = dent_fn(t)
        d_here = dent(xr)
        sig = cfg.cushion.dent_sigma
        active_cols = (np.abs(xr - cx) <= 5.0 * sig) & (d_here > 1.0 / 510.0)
        in_band = active_cols & (yr >= top - edge_w) & (yr <= bottom + 0.5)
        cov, y_rest = app.cushion_coverage(xr, yr, dent)
        col = app.cushion_color(xr, y_rest)
        backdrop = app.backdrop(xr, yr)
        deformed = backdrop * (1 - cov[..., None]) + col * cov[..., None]
        ra = in_band.astype(np.float32)
        rc = np.where(in_band[..., None], deformed, -1.0).astype(np.float32)

        # Foreground: object (plus shadow when it owns one).
        a_o = object_coverage(xr, yr, t)
        c_o = np.broadcast_to(
            np.asarray(cfg.obj.color, dtype=np.float32), a_o.shape + (3,)
        ).copy()
        a_s = shadow_alpha(xr, yr, t)
        c_s = np.full_like(c_o, -1.0)
        if cfg.shadow_owner == "fg":
            fa, fc = _combine_over(a_o, c_o, a_s, c_s)
        else:
            fa, fc = a_o, c_o
            sa, sc = _combine_over(a_s, c_s, ra, rc)
            ra, rc = sa, sc
        res_alpha[t] = ra
        res_color[t] = rc
        fg_alpha[t] = fa
        fg_color[t] = fc
        # Material ids: 0 static, 2 cushion interior, 3 object, 4 mixed
        # boundary (cushion coverage ramps; dropped from flow validity,
        # like "unmatched" pixels in flow benchmarks). The compression
        # flow is the identity wherever the dent is zero, so cushion
        # interior pixels are id 2 even at rest.
        ids = np.zeros((H, W), dtype=np.int8)
        cov_here = app.rest_coverage(xr, y_rest)
        ids[cov_here > 0.98] = 2
        ids[(cov_here > 0.02) & (cov_here <= 0.98)] = 4
        ids[a_o > 0.5] = 3
        material_ids[t] = ids

    env_layer = Layer(
        color=env_color, alpha_slots=(np.ones((T, H, W), dtype=np.float32),), kind="environment"
    )
    res_layer = Layer(
        color=res_color, alpha_slots=((res_alpha * 2 - 1).astype(np.float32),), kind="residual"
    )
    fg_layer = Layer(
        color=fg_color, alpha_slots=((fg_alpha * 2 - 1).astype(np.float32),), kind="foreground"
    )
    decomp = Decomposition(
        layers={ENV: env_layer, RES: res_layer, FG: fg_layer},
        components=(
            ComponentSpec("foreground", (FG,), "foreground"),
            ComponentSpec("background", (ENV, RES), "background"),
        ),
        order=CompositionOrder(((ENV, 0), (RES, 0), (FG, 0))),
        canvas=canvas,
    )

    frames = compositing.composite_video(decomp)
    counterfactual = compositing.composite_video(decomp, subset={ENV, RES})
    masks = (alpha_to_unit(fg_layer.alpha_slots[0]) > 0.5).astype(np.float32)

    flows = _analytic_flows(cfg, homs, centers, dent_fn, material_ids, ref_coords)
    clip = VideoClip(
        frames=frames, masks=masks, flows=flows, homographies=homs, clean_background=None
    )
    velocities = np.diff(centers[:, 1])
    return SceneTruth(
        video=clip,
        gt_decomposition=decomp,
        gt_flow=flows,
        gt_masks=masks,
        background_counterfactual=counterfactual,
        trajectory={
            "centers": centers,
            "heights": heights,
            "impact_times": impacts,
            "dent_envelope": dent_env,
            "velocities": velocities,
            "restitution": e,
            "material_ids": material_ids,
        },
    )


def _material_position(cfg, centers, dent_fn, material_ids, ref_coords, t: int, k: int):
    """Reference-space position at frame t+k of the material seen at frame t."""
    xr, yr = ref_coords[t]
    x2 = xr.copy()
    y2 = yr.copy()
    ids = material_ids[t]

    if cfg.obj is not None:
        delta = centers[t + k] - centers[t]
        obj = ids == 3
        x2 = np.where(obj, xr + delta[0], x2)
        y2 = np.where(obj, yr + delta[1], y2)
    if cfg.cushion is not None:
        x0, top, x1, bottom = cfg.cushion.rect
        span = bottom - top
        d_t = dent_fn(t)(xr)
        d_k = dent_fn(t + k)(xr)
        denom = np.maximum(1.0 - d_t / span, 1e-3)
        y_rest = (yr - d_t * bottom / span) / denom
        y_new = y_rest + d_k * (bottom - y_rest) / span
        cushion = ids == 2
        y2 = np.where(cushion, y_new, y2)
    return x2, y2


def _analytic_flows(cfg, homs, centers, dent_fn, material_ids, ref_coords) -> dict[int, FlowPair]:
    T = cfg.frame_count
    H, W = cfg.resolution
    ys_f, xs_f = np.mgrid[0:H, 0:W].astype(np.float64)
    inv = np.linalg.inv(homs)
    flows: dict[int, FlowPair] = {}
    for k in cfg.flow_offsets:
        fwd = np.empty((T - k, H, W, 2), dtype=np.float32)
        bwd = np.empty_like(fwd)
        for t in range(T - k):
            x2, y2 = _material_position(cfg, centers, dent_fn, material_ids, ref_coords, t, k)
            px, py = compositing.apply_homography(inv[t + k], x2, y2)
            fwd[t, ..., 0] = px - xs_f
            fwd[t, ..., 1] = py - ys_f
        for t in range(T - k):
            # backward: material seen at frame t+k, located in frame t
            x2, y2 = _material_position(cfg, centers, dent_fn, material_ids, ref_coords, t + k, -k)
            px, py = compositing.apply_homography(inv[t], x2, y2)
            bwd[t, ..., 0] = px - xs_f
            bwd[t, ..., 1] = py - ys_f
        flows[k] = FlowPair(forward=fwd, backward=bwd)
    return flows


def generate_flat_jitter_scene(cfg: SceneConfig) -> SceneTruth:
    """Static textured backdrop under known jitter; empty fg/res layers."""
    cfg = replace(cfg, obj=None, cushion=None, shadow=None)
    cfg.validate()
    H, W = cfg.resolution
    T = cfg.frame_count
    app = _SceneAppearance(cfg)
    homs = _jitter_transforms(cfg)
    pad = _canvas_extent(homs, (H, W))

    ys, xs = np.mgrid[0:H + 2 * pad, 0:W + 2 * pad].astype(np.float64)
    canvas_img = app.backdrop(xs - pad, ys - pad)
    canvas = Canvas(image=canvas_img, origin=(float(pad), float(pad)), homographies=homs)

    env_color = np.empty((T, H, W, 3), dtype=np.float32)
    ys_f, xs_f = np.mgrid[0:H, 0:W].astype(np.float64)
    ref_coords = []
    for t in range(T):
        xr, yr = compositing.apply_homography(homs[t], xs_f, ys_f)
        ref_coords.append((xr, yr))
        env_color[t] = app.backdrop(xr, yr)

    zero_a = np.full((T, H, W), -1.0, dtype=np.float32)
    black = np.full((T, H, W, 3), -1.0, dtype=np.float32)
    decomp = Decomposition(
        layers={
            ENV: Layer(env_color, (np.ones((T, H, W), dtype=np.float32),), "environment"),
            RES: Layer(black, (zero_a,), "residual"),
            FG: Layer(black.copy(), (zero_a.copy(),), "foreground"),
        },
        components=(
            ComponentSpec("foreground", (FG,), "foreground"),
            ComponentSpec("background", (ENV, RES), "background"),
        ),
        order=CompositionOrder(((ENV, 0), (RES, 0), (FG, 0))),
        canvas=canvas,
    )
    frames = compositing.composite_video(decomp)
    centers = np.zeros((T, 2))
    ids = np.zeros((T, H, W), dtype=np.int8)
    flows = _analytic_flows(cfg, homs, centers, lambda t: (lambda xq: np.zeros_like(xq)), ids, ref_coords)
    clip = VideoClip(
        frames=frames,
        masks=np.zeros((T, H, W), dtype=np.float32),
        flows=flows,
        homographies=homs,
    )
    return SceneTruth(
        video=clip,
        gt_decomposition=decomp,
        gt_flow=flows,
        gt_masks=clip.masks,
        background_counterfactual=compositing.composite_video(decomp, subset={ENV, RES}),
        trajectory={},
    )


def analytic_flow_check(truth: SceneTruth, k: int) -> float:
    """Max color error of flow-warping frame t+k back to frame t.

    Pixels that change surface, leave the frame, or sit on soft-alpha
    regions (anti-aliased edges, shadows) in either frame are excluded.
    """
    from scipy.ndimage import binary_erosion

    if truth.video.flows is None or k not in truth.video.flows:
        raise KeyError(f"offset {k} not in scene flows")
    frames = truth.video.frames
    T, H, W = truth.video.shape
    pair = truth.video.flows[k]
    d = truth.gt_decomposition
    material_ids = truth.trajectory.get("material_ids")
    if material_ids is None:
        material_ids = np.zeros((T, H, W), dtype=np.int8)

    def soft(t):
        fa = alpha_to_unit(d.layers[FG].alpha_slots[0][t])
        ra = alpha_to_unit(d.layers[RES].alpha_slots[0][t])
        return ((fa > 0.0025) & (fa < 0.9975)) | ((ra > 0.0025) & (ra < 0.9975))

    worst = 0.0
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    struct = np.ones((3, 3), dtype=bool)
    for t in range(T - k):
        flow = pair.forward[t]
        warped, valid = compositing.warp_image_by_flow(frames[t + k], flow)
        tx = np.clip(np.rint(xs + flow[..., 0]).astype(int), 0, W - 1)
        ty = np.clip(np.rint(ys + flow[..., 1]).astype(int), 0, H - 1)
        ids_t = material_ids[t]
        ids_w = material_ids[t + k][ty, tx]
        same = (ids_t == ids_w) & (ids_t != 4) & (ids_w != 4)
        ok = valid & same & ~soft(t) & ~soft(t + k)[ty, tx]
        # Bilinear samples straddling a material boundary mix surfaces;
        # drop a 1 px rim around any excluded pixel.
        ok = binary_erosion(ok, structure=struct)
        if not ok.any():
            continue
        err = np.abs(warped - frames[t]).max(axis=-1)
        worst = max(worst, float(err[ok].max()))
    return worst


def bs_labels(truth: SceneTruth) -> np.ndarray:
    """Change-detection labels: 1 positive, 0 negative, -1 unknown.

    Positive where the foreground alpha is decisive (>= 0.8 unit, which
    covers objects and hard shadows), unknown on soft regions and a 2 px
    band around positives, negative elsewhere.
    """
    from scipy.ndimage import binary_dilation

    fa = alpha_to_unit(truth.gt_decomposition.layers[FG].alpha_slots[0])
    labels = np.full(fa.shape, -1, dtype=np.int8)
    pos = fa >= 0.8
    neg = fa <= 0.05
    labels[pos] = 1
    labels[neg] = 0
    struct = np.ones((5, 5), dtype=bool)
    for t in range(fa.shape[0]):
        band = binary_dilation(pos[t], structure=struct) & ~pos[t]
        labels[t][band] = -1
    return labels


def desk_bounce_config(seed: int = 0, **overrides) -> SceneConfig:
    """Default desk-scale bouncing-scene preset."""
    return replace(SceneConfig(seed=seed), **overrides)


def flat_jitter_config(seed: int = 0, **overrides) -> SceneConfig:
    cfg = SceneConfig(
        seed=seed,
        obj=None,
        cushion=None,
        shadow=None,
        frame_count=12,
        flow_offsets=(1, 4),
    )
    return replace(cfg, **overrides)
