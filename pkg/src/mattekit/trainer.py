"""Three-stage per-video optimization.

Stage 1 fits the decomposition network plus a learnable environment
canvas with reconstruction and regularization losses only. Stage 2 builds
augmented positive-example banks from the frozen canvas. Stage 3 trains
per-scale patch discriminators adversarially against the network, with
the canvas and homographies frozen. An optional subset-first pass factors
easy frames first and anchors the full run to that solution.

All randomness flows from config.seed; runs are bit-reproducible on one
device class, and checkpoints resume bit-compatibly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import compositing, losses, nets, priors
from .io import config_digest
from .losses import LossWeights
from .model import (
    DEFAULT_ORDER,
    ENV,
    FG,
    FOREGROUND,
    RES,
    RESIDUAL,
    SPLIT_RESIDUAL_ORDER,
    Canvas,
    ComponentSpec,
    CompositionOrder,
    Decomposition,
    Layer,
    VideoClip,
    validate,
)
from .nets import DecompNetConfig, DiscriminatorConfig
from .priors import AugmentParams


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    stage1_epochs: int = 1200
    stage3_epochs: int = 1200
    learning_rate: float = 0.001
    batch_size: int = 16
    offsets: tuple[int, ...] = (1,)
    weights: LossWeights = field(default_factory=LossWeights)
    augment: AugmentParams = field(default_factory=AugmentParams)
    net: DecompNetConfig = field(default_factory=DecompNetConfig)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    bank_size: int = 512
    disc_patches: int = 64  # per scale per component per step
    disc_update_ratio: int = 1
    seed: int = 0
    mask_dilation_radius: int = 5
    use_fg_disc: bool = True
    use_res_disc: bool = True
    fg_disc_cooldown: int = 0
    fg_disc_cooldown_factor: float = 0.0
    anchor_frames: tuple[int, ...] = ()
    split_residual: bool = False
    divergence_factor: float = 4.0
    divergence_patience: int = 50
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage3_epochs < 1:
            raise ValueError("epochs must be positive")
        for k in self.offsets:
            if k < 1:
                raise ValueError("offsets must be >= 1")

    def digest(self) -> str:
        return config_digest(self)


def desk_train_config(seed: int = 0, **overrides) -> TrainConfig:
    """CI-runnable preset: quarter-width net on 64x112 clips."""
    cfg = TrainConfig(
        stage1_epochs=300,
        stage3_epochs=300,
        net=nets.DESK_CONFIG,
        bank_size=96,
        disc_patches=16,
        mask_dilation_radius=2,
        seed=seed,
    )
    return replace(cfg, **overrides)


ABLATION_TOGGLES = {
    "full": {},
    "no_flow_est": {"weights": "l5"},
    "no_alpha_warp": {"weights": "l2"},
    "no_res_disc": {"use_res_disc": False},
}


def apply_variant(cfg: TrainConfig, variant: str) -> TrainConfig:
    """Named loss toggles for the ablation suite (identical seeds kept)."""
    if variant == "full":
        return cfg
    if variant == "no_flow_est":
        return replace(cfg, weights=replace(cfg.weights, l5=0.0))
    if variant == "no_alpha_warp":
        return replace(cfg, weights=replace(cfg.weights, l2=0.0))
    if variant == "no_res_disc":
        return replace(cfg, use_res_disc=False)
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class TrainState:
    config: TrainConfig
    net: nets.DecompositionNet
    discs: dict
    canvas: torch.Tensor  # (1, 3, Hc, Wc); requires_grad only in stage 1
    origin: tuple[float, float]
    homographies: np.ndarray
    frames: torch.Tensor  # (T, 3, H, W)
    masks: torch.Tensor  # (T, 1, H, W)
    inputs: dict[int, torch.Tensor]  # offset -> (2, T, C, H, W)
    noise_canvas: np.ndarray
    env_grids: torch.Tensor  # (T, H, W, 2) normalized canvas sample grid
    gt_flows: dict[int, torch.Tensor]  # offset -> (T-k, 2, H, W)
    flow_conf: dict[int, torch.Tensor]  # offset -> (T-k, 1, H, W)
    rng: np.random.Generator  # batch sampling
    rng_patch: np.random.Generator  # discriminator patch sampling
    banks: dict | None = None
    mask_init_active: bool = True
    stage1_epochs_done: int = 0
    stage3_epochs_done: int = 0
    step_count: int = 0
    loss_log: list = field(default_factory=list)
    anchor_ref: dict | None = None
    opt_net: torch.optim.Optimizer | None = None
    opt_discs: dict | None = None
    recon_baseline: float | None = None
    divergence_run: int = 0

    @property
    def T(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# preparation


def _canvas_geometry(homs: np.ndarray, hw):
    H, W = hw
    corners = np.array([[0, 0, 1], [W - 1, 0, 1], [0, H - 1, 1], [W - 1, H - 1, 1]], float)
    worst = 2.0
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
    pad = int(math.ceil(worst)) + 1
    return (float(pad), float(pad)), (H + 2 * pad, W + 2 * pad)


def _init_canvas(clip: VideoClip, homs: np.ndarray, origin, canvas_hw) -> np.ndarray:
    """Average the homography-aligned frames, skipping masked foreground."""
    from scipy.ndimage import binary_dilation

    T, H, W = clip.shape
    Hc, Wc = canvas_hw
    acc = np.zeros((Hc, Wc, 3), dtype=np.float64)
    wacc = np.zeros((Hc, Wc), dtype=np.float64)
    inv = np.linalg.inv(homs)
    ys, xs = np.mgrid[0:Hc, 0:Wc].astype(np.float64)
    struct = np.ones((5, 5), dtype=bool)
    for t in range(T):
        fx, fy = compositing.apply_homography(inv[t], xs - origin[0], ys - origin[1])
        inside = (fx >= 0) & (fx <= W - 1) & (fy >= 0) & (fy <= H - 1)
        sample = compositing.bilinear_sample(clip.frames[t], fx, fy)
        w = inside.astype(np.float64)
        if clip.masks is not None:
            keep = ~binary_dilation(clip.masks[t] > 0.5, structure=struct)
            w = w * compositing.bilinear_sample(keep.astype(np.float64), fx, fy)
        acc += sample * w[..., None]
        wacc += w
    out = acc / np.maximum(wacc[..., None], 1e-6)
    out[wacc < 1e-6] = 0.0
    return out.astype(np.float32)


def _env_sample_grids(homs: np.ndarray, origin, hw, canvas_hw) -> torch.Tensor:
    """Normalized grid_sample coordinates of each frame's canvas view."""
    H, W = hw
    Hc, Wc = canvas_hw
    T = homs.shape[0]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    grids = np.empty((T, H, W, 2), dtype=np.float32)
    for t in range(T):
        xr, yr = compositing.apply_homography(homs[t], xs, ys)
        gx = 2.0 * (xr + origin[0]) / max(Wc - 1, 1) - 1.0
        gy = 2.0 * (yr + origin[1]) / max(Hc - 1, 1) - 1.0
        grids[t, ..., 0] = gx
        grids[t, ..., 1] = gy
    return torch.from_numpy(grids)


def prepare_state(clip: VideoClip, cfg: TrainConfig) -> TrainState:
    if clip.masks is None:
        raise ValueError("training requires segmentation masks")
    if clip.flows is None or 1 not in clip.flows:
        raise ValueError("training requires k=1 flow")
    for k in cfg.offsets:
        if k not in clip.flows:
            raise ValueError(f"clip has no flow for configured offset {k}")

    homs = clip.homographies
    if homs is None:
        homs = priors.estimate_homographies(clip)
    T, H, W = clip.shape
    origin, canvas_hw = _canvas_geometry(homs, (H, W))

    canvas_np = _init_canvas(clip, homs, origin, canvas_hw)
    if clip.clean_background is not None:
        pad_x, pad_y = int(origin[0]), int(origin[1])
        canvas_np[pad_y : pad_y + H, pad_x : pad_x + W] = clip.clean_background
    canvas = torch.from_numpy(np.moveaxis(canvas_np, -1, 0)[None].copy())

    frames = torch.from_numpy(np.moveaxis(clip.frames, -1, 1).copy())
    masks = torch.from_numpy(clip.masks[:, None].copy())

    inputs = {}
    noise_canvas = None
    for k in cfg.offsets:
        li = _layer_inputs_for_offset(clip, homs, origin, cfg.seed, k)
        if noise_canvas is None:
            noise_canvas = li.noise_canvas
        inputs[k] = torch.from_numpy(li.stacked())
    if 1 not in inputs:
        li = _layer_inputs_for_offset(clip, homs, origin, cfg.seed, 1)
        noise_canvas = li.noise_canvas
        inputs[1] = torch.from_numpy(li.stacked())

    gt_flows = {}
    flow_conf = {}
    for k in set(cfg.offsets) | {1}:
        pair = clip.flows.get(k)
        if pair is None:
            continue
        gt_flows[k] = torch.from_numpy(np.moveaxis(pair.forward, -1, 1).copy())
        conf = np.empty((T - k, 1, H, W), dtype=np.float32)
        for t in range(T - k):
            bwd = None if pair.backward is None else pair.backward[t]
            conf[t, 0] = losses.flow_confidence(
                pair.forward[t], bwd, clip.frames[t], clip.frames[t + k]
            )
        flow_conf[k] = torch.from_numpy(conf)

    net, discs = nets.build_networks(cfg.net, cfg.disc, cfg.seed)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((cfg.seed, 2024))))
    rng_patch = np.random.Generator(np.random.Philox(np.random.SeedSequence((cfg.seed, 2025))))
    return TrainState(
        config=cfg,
        net=net,
        discs=discs,
        canvas=canvas,
        origin=origin,
        homographies=homs,
        frames=frames,
        masks=masks,
        inputs=inputs,
        noise_canvas=noise_canvas,
        env_grids=_env_sample_grids(homs, origin, (H, W), canvas_hw),
        gt_flows=gt_flows,
        flow_conf=flow_conf,
        rng=rng,
        rng_patch=rng_patch,
    )


def _layer_inputs_for_offset(clip, homs, origin, seed, k):
    """Per-layer inputs whose flow channels carry the offset-k flow."""
    import dataclasses as _dc

    if k == 1:
        return nets.make_layer_inputs(clip, homs, origin, seed)
    pair = clip.flows[k]
    T = clip.frames.shape[0]
    fwd = np.zeros((T - 1,) + pair.forward.shape[1:], dtype=np.float32)
    fwd[: T - k] = pair.forward
    shifted = _dc.replace(clip, flows={**clip.flows, 1: _dc.replace(pair, forward=fwd)})
    return nets.make_layer_inputs(shifted, homs, origin, seed)


# ---------------------------------------------------------------------------
# shared step machinery


def _env_frames(state: TrainState, idx: torch.Tensor) -> torch.Tensor:
    grids = state.env_grids[idx]
    canvas = state.canvas.expand(len(idx), -1, -1, -1)
    return torch.nn.functional.grid_sample(
        canvas, grids, mode="bilinear", padding_mode="border", align_corners=True
    )


def _composite(env, colors, alphas):
    """Back-to-front over: env, residual, foreground (training order)."""
    out = env
    for color, alpha in zip(colors, alphas):
        unit = (alpha + 1.0) / 2.0
        out = unit * color + (1.0 - unit) * out
    return out


def _forward(state: TrainState, idx: torch.Tensor, offset: int = 1):
    inp = state.inputs[offset][:, idx]
    color, alpha, flow = nets.forward_decomposition(state.net, inp)
    return color, alpha, flow


def _offset_terms(state: TrainState, base_idx, base_out, k):
    """Flow-supervision and warp terms for one temporal offset."""
    T = state.T
    sel = torch.nonzero(base_idx < T - k).squeeze(1)
    if sel.numel() == 0:
        return None
    t_idx = base_idx[sel]
    if k == 1:
        color_t = [base_out[0][i][sel] for i in range(2)]
        alpha_t = [base_out[1][i][sel] for i in range(2)]
        flow_t = [base_out[2][i][sel] for i in range(2)]
    else:
        color, alpha, flow = _forward(state, t_idx, offset=k)
        color_t = [color[i] for i in range(2)]
        alpha_t = [alpha[i] for i in range(2)]
        flow_t = [flow[i] for i in range(2)]
    color_k, alpha_k, flow_k = _forward(state, t_idx + k, offset=k)
    gt = state.gt_flows[k][t_idx]
    conf = state.flow_conf[k][t_idx]
    fe = losses.flow_est_loss(flow_t, gt, conf)
    aw, cw = losses.warp_losses(
        alpha_t,
        [alpha_k[i] for i in range(2)],
        color_t,
        [color_k[i] for i in range(2)],
        flow_t,
    )
    return fe, aw, cw


def _sample_patch_tensor(images: torch.Tensor, scale: int, n: int, rng) -> torch.Tensor:
    """n random crops from a (B, 3, H, W) tensor; keeps the autograd graph."""
    B, _, H, W = images.shape
    srcs = rng.integers(0, B, size=n)
    ys = rng.integers(0, H - scale + 1, size=n)
    xs = rng.integers(0, W - scale + 1, size=n)
    return torch.stack(
        [images[b, :, y : y + scale, x : x + scale] for b, y, x in zip(srcs, ys, xs)]
    )


def _adv_terms(state: TrainState, fg_color, res_color, update_discs: bool):
    """Discriminator updates plus the generator-side adversarial terms."""
    cfg = state.config
    rng = state.rng_patch
    comps = []
    if cfg.use_fg_disc:
        comps.append(("fg", fg_color))
    if cfg.use_res_disc:
        comps.append(("res", res_color))
    gen_terms = {"fg": torch.zeros(()), "res": torch.zeros(())}
    for comp, color in comps:
        bank = state.banks[comp]
        gen_scales = []
        for scale in cfg.disc.scales:
            disc = state.discs[(comp, scale)]
            src = bank.images[rng.integers(0, bank.images.shape[0], size=cfg.disc_patches)]
            pos_np = np.stack(
                [
                    priors.sample_patches(img, scale, 1, rng)[0]
                    for img in src
                ]
            )
            pos = torch.from_numpy(np.moveaxis(pos_np, -1, 1).copy())
            neg = _sample_patch_tensor(color, scale, cfg.disc_patches, rng)
            if update_discs:
                opt = state.opt_discs[(comp, scale)]
                d_loss, _ = losses.adv_losses(
                    torch.sigmoid(disc(pos)), torch.sigmoid(disc(neg.detach()))
                )
                opt.zero_grad(set_to_none=True)
                losses.discriminator_loss(d_loss, cfg.weights).backward()
                opt.step()
            _, g_loss = losses.adv_losses(torch.sigmoid(disc(pos)), torch.sigmoid(disc(neg)))
            gen_scales.append(g_loss)
        gen_terms[comp] = torch.stack(gen_scales).mean()
    return gen_terms["fg"], gen_terms["res"]


def _train_step(state: TrainState, stage: int, fg_adv_factor: float = 1.0, batch_idx=None):
    cfg = state.config
    T = state.T
    if batch_idx is None:
        idx = torch.from_numpy(state.rng.integers(0, T, size=cfg.batch_size))
    else:
        idx = torch.as_tensor(batch_idx)
    color, alpha, flow = _forward(state, idx)
    env = _env_frames(state, idx)
    comp = _composite(env, [color[1], color[0]], [alpha[1], alpha[0]])

    terms = {
        "recon": losses.recon_loss(comp, state.frames[idx]),
        "alpha_reg": losses.alpha_reg_loss([alpha[0], alpha[1]], cfg.weights.gamma),
    }
    if state.mask_init_active:
        terms["mask_init"] = losses.mask_init_loss(
            alpha[0], state.masks[idx], cfg.mask_dilation_radius
        )

    fe_terms, aw_terms, cw_terms = [], [], []
    for k in cfg.offsets:
        out = _offset_terms(state, idx, (color, alpha, flow), k)
        if out is not None:
            fe_terms.append(out[0])
            aw_terms.append(out[1])
            cw_terms.append(out[2])
    if fe_terms:
        terms["flow_est"] = torch.stack(fe_terms).mean()
        terms["alpha_warp"] = torch.stack(aw_terms).mean()
        terms["rgb_warp"] = torch.stack(cw_terms).mean()

    adversarial = stage == 3 and (cfg.use_fg_disc or cfg.use_res_disc)
    if adversarial:
        adv_fg, adv_res = _adv_terms(state, color[0], color[1], update_discs=True)
        terms["adv_fg"] = adv_fg * fg_adv_factor
        terms["adv_res"] = adv_res
    if state.anchor_ref is not None:
        anchored = [i for i, t in enumerate(idx.tolist()) if t in state.anchor_ref]
        if anchored:
            cur = {}
            ref = {}
            for i in anchored:
                t = int(idx[i])
                cur[f"alpha_{t}"] = torch.cat([alpha[0][i], alpha[1][i]])
                cur[f"color_{t}"] = torch.cat([color[0][i], color[1][i]])
                ref[f"alpha_{t}"] = state.anchor_ref[t]["alpha"]
                ref[f"color_{t}"] = state.anchor_ref[t]["color"]
            terms["anchor"] = losses.anchor_loss(cur, ref)

    total, ledger = losses.total_nd_loss(
        terms, cfg.weights, adversarial_active=adversarial, mask_init_active=state.mask_init_active
    )
    state.opt_net.zero_grad(set_to_none=True)
    total.backward()
    state.opt_net.step()

    if state.mask_init_active and ledger.get("mask_init", math.inf) < cfg.weights.mask_init_cutoff:
        state.mask_init_active = False  # monotone: stays off
    state.step_count += 1
    ledger["step"] = state.step_count
    ledger["stage"] = stage
    state.loss_log.append(ledger)
    return ledger


def _steps_per_epoch(state: TrainState) -> int:
    return max(1, math.ceil(state.T / state.config.batch_size))


# ---------------------------------------------------------------------------
# stages


def stage1_fit(clip: VideoClip, cfg: TrainConfig, state: TrainState | None = None) -> TrainState:
    """Marginal fit: reconstruction + regularizers, no discriminators.

    With a provided clean background the stage is skipped entirely and the
    canvas comes from that image.
    """
    if state is None:
        state = prepare_state(clip, cfg)
    if clip.clean_background is not None:
        state.stage1_epochs_done = cfg.stage1_epochs
        return state
    state.canvas.requires_grad_(True)
    state.opt_net = torch.optim.Adam(
        list(state.net.parameters()) + [state.canvas], lr=cfg.learning_rate
    )
    steps = _steps_per_epoch(state)
    for epoch in range(state.stage1_epochs_done, cfg.stage1_epochs):
        for _ in range(steps):
            _train_step(state, stage=1)
        state.stage1_epochs_done = epoch + 1
    state.canvas.requires_grad_(False)
    state.opt_net = None
    return state


def stage2_build_banks(state: TrainState, clip: VideoClip, params: AugmentParams | None = None) -> TrainState:
    """Augmented positive banks from the Stage-1 canvas (or clean bg)."""
    params = params or state.config.augment
    # fold the run seed in so distinct runs get distinct (but reproducible) banks
    params = replace(params, seed=params.seed * 1_000_003 + state.config.seed)
    with torch.no_grad():
        env = _env_frames(state, torch.arange(state.T))
    env_np = np.moveaxis(env.numpy(), 1, -1)
    state.banks = priors.build_positive_banks(clip, env_np, params, size=state.config.bank_size)
    return state


def stage3_adversarial_fit(
    state: TrainState,
    clip: VideoClip,
    cfg: TrainConfig | None = None,
    checkpoint_dir=None,
) -> TrainState:
    """Alternating discriminator/generator training; canvas frozen."""
    cfg = cfg or state.config
    if state.banks is None:
        raise ValueError("Stage 2 banks missing")
    assert not state.canvas.requires_grad
    if state.opt_net is None:
        state.opt_net = torch.optim.Adam(state.net.parameters(), lr=cfg.learning_rate)
    if state.opt_discs is None:
        state.opt_discs = {
            key: torch.optim.Adam(d.parameters(), lr=cfg.learning_rate)
            for key, d in state.discs.items()
        }
    steps = _steps_per_epoch(state)
    for epoch in range(state.stage3_epochs_done, cfg.stage3_epochs):
        in_cooldown = epoch >= cfg.stage3_epochs - cfg.fg_disc_cooldown
        factor = cfg.fg_disc_cooldown_factor if in_cooldown else 1.0
        recon_sum = 0.0
        for _ in range(steps):
            ledger = _train_step(state, stage=3, fg_adv_factor=factor)
            recon_sum += ledger["recon"]
        recon_epoch = recon_sum / steps
        if state.recon_baseline is None:
            state.recon_baseline = recon_epoch
        if recon_epoch > cfg.divergence_factor * state.recon_baseline:
            state.divergence_run += 1
            if state.divergence_run >= cfg.divergence_patience:
                raise TrainingDiverged(
                    f"reconstruction {recon_epoch:.4f} stayed above "
                    f"{cfg.divergence_factor}x its initial value "
                    f"{state.recon_baseline:.4f} for {state.divergence_run} epochs"
                )
        else:
            state.divergence_run = 0
        state.stage3_epochs_done = epoch + 1
        if (
            checkpoint_dir is not None
            and cfg.checkpoint_every > 0
            and state.stage3_epochs_done % cfg.checkpoint_every == 0
        ):
            save_checkpoint(state, Path(checkpoint_dir) / f"checkpoint_ep{state.stage3_epochs_done:05d}.pt")
    return state


def subset_first(clip: VideoClip, cfg: TrainConfig, frame_subset) -> dict:
    """Factor an easier frame subset first; returns the anchor reference.

    The returned mapping {frame: {"alpha", "color"}} feeds the full-video
    Stage 3 through the anchor loss; that run also widens the temporal
    offsets to (1, 4, 8).
    """
    subset = sorted(set(int(t) for t in frame_subset))
    T = clip.frames.shape[0]
    if not subset:
        raise ValueError("frame subset is empty")
    if len(subset) >= T:
        raise ValueError("frame subset must be a strict subset of the video")
    sub_cfg = replace(cfg, anchor_frames=())
    sub_clip = _slice_clip(clip, subset)
    state = stage1_fit(sub_clip, sub_cfg)
    state = stage2_build_banks(state, sub_clip)
    state = stage3_adversarial_fit(state, sub_clip, sub_cfg)
    ref = {}
    with torch.no_grad():
        idx = torch.arange(len(subset))
        color, alpha, _ = _forward(state, idx)
        for i, t in enumerate(subset):
            ref[t] = {
                "alpha": torch.cat([alpha[0][i], alpha[1][i]]).detach(),
                "color": torch.cat([color[0][i], color[1][i]]).detach(),
            }
    return ref


def _slice_clip(clip: VideoClip, frames_idx) -> VideoClip:
    """Contiguous-subset view of a clip (flows re-indexed where valid)."""
    import dataclasses as _dc

    idx = np.asarray(frames_idx)
    if not np.all(np.diff(idx) == 1):
        raise ValueError("frame subset must be contiguous for flow consistency")
    lo, hi = int(idx[0]), int(idx[-1]) + 1
    flows = None
    if clip.flows:
        flows = {}
        for k, pair in clip.flows.items():
            if hi - lo <= k:
                continue
            fwd = pair.forward[lo : hi - k]
            bwd = None if pair.backward is None else pair.backward[lo : hi - k]
            flows[k] = _dc.replace(pair, forward=fwd, backward=bwd)
    return VideoClip(
        frames=clip.frames[lo:hi],
        masks=None if clip.masks is None else clip.masks[lo:hi],
        flows=flows,
        homographies=None if clip.homographies is None else clip.homographies[lo:hi],
        clean_background=clip.clean_background,
    )


def run_pipeline(clip: VideoClip, cfg: TrainConfig, checkpoint_dir=None) -> TrainState:
    """Stage 1 -> Stage 2 -> optional subset-first -> Stage 3."""
    anchor_ref = None
    if cfg.anchor_frames:
        anchor_ref = subset_first(clip, cfg, cfg.anchor_frames)
        offs = tuple(k for k in (1, 4, 8) if k in (clip.flows or {}))
        cfg = replace(cfg, offsets=offs or cfg.offsets)
    state = stage1_fit(clip, cfg)
    state = stage2_build_banks(state, clip)
    state.anchor_ref = anchor_ref
    state = stage3_adversarial_fit(state, clip, cfg, checkpoint_dir=checkpoint_dir)
    return state


def write_previews(state: TrainState, clip: VideoClip, out_dir) -> None:
    """A few composite previews (first / middle / last frames)."""
    from . import compositing, io

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = infer_decomposition(state, clip)
    T = d.shape[0]
    for t in sorted({0, T // 2, T - 1}):
        io.write_png_color(out / f"composite_{t:05d}.png", compositing.composite(d, t))
        io.write_png_color(
            out / f"background_{t:05d}.png", compositing.composite(d, t, subset={ENV, RES})
        )


# ---------------------------------------------------------------------------
# inference, logging, checkpoints


def infer_decomposition(state: TrainState, clip: VideoClip) -> Decomposition:
    state.net.eval()
    T, H, W = clip.shape
    colors, alphas, flows = [], [], []
    with torch.no_grad():
        for start in range(0, T, 16):
            idx = torch.arange(start, min(start + 16, T))
            c, a, f = _forward(state, idx)
            colors.append(c)
            alphas.append(a)
            flows.append(f)
        env = _env_frames(state, torch.arange(T))
    state.net.train()
    color = torch.cat(colors, dim=1).numpy()
    alpha = torch.cat(alphas, dim=1).numpy()
    flow = torch.cat(flows, dim=1).numpy()

    def hwc(x):
        return np.moveaxis(x, 1, -1)

    fg_alpha = alpha[0][:, 0]
    res_alpha = alpha[1][:, 0]
    fg = Layer(
        color=hwc(color[0]),
        alpha_slots=(fg_alpha,),
        kind=FOREGROUND,
        flow={1: hwc(flow[0])},
    )
    if state.config.split_residual:
        res_slots = (res_alpha, np.full_like(res_alpha, -1.0))
        order = CompositionOrder(SPLIT_RESIDUAL_ORDER)
    else:
        res_slots = (res_alpha,)
        order = CompositionOrder(DEFAULT_ORDER)
    res = Layer(color=hwc(color[1]), alpha_slots=res_slots, kind=RESIDUAL, flow={1: hwc(flow[1])})
    env_layer = Layer(
        color=hwc(env.numpy()),
        alpha_slots=(np.ones((T, H, W), dtype=np.float32),),
        kind="environment",
    )
    canvas = Canvas(
        image=np.moveaxis(state.canvas[0].detach().numpy(), 0, -1),
        origin=state.origin,
        homographies=state.homographies,
    )
    d = Decomposition(
        layers={ENV: env_layer, RES: res, FG: fg},
        components=(
            ComponentSpec("foreground", (FG,), "foreground"),
            ComponentSpec("background", (ENV, RES), "background"),
        ),
        order=order,
        canvas=canvas,
        meta={"config_digest": state.config.digest(), "seed": state.config.seed},
    )
    problems = validate(d)
    if problems:
        raise AssertionError(f"inferred decomposition invalid: {problems}")
    return d


def write_loss_csv(state: TrainState, path) -> None:
    """Append-only (step, term, value) rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "term", "value"])
        for rec in state.loss_log:
            step = rec["step"]
            for term, value in rec.items():
                if term in ("step", "stage"):
                    continue
                w.writerow([step, term, repr(float(value))])


def save_checkpoint(state: TrainState, path) -> None:
    payload = {
        "config_digest": state.config.digest(),
        "net": state.net.state_dict(),
        "discs": {f"{c}_{s}": d.state_dict() for (c, s), d in state.discs.items()},
        "canvas": state.canvas,
        "origin": state.origin,
        "homographies": state.homographies,
        "noise_canvas": state.noise_canvas,
        "banks": None
        if state.banks is None
        else {k: (b.images, b.provenance) for k, b in state.banks.items()},
        "mask_init_active": state.mask_init_active,
        "stage1_epochs_done": state.stage1_epochs_done,
        "stage3_epochs_done": state.stage3_epochs_done,
        "step_count": state.step_count,
        "rng_state": state.rng.bit_generator.state,
        "rng_patch_state": state.rng_patch.bit_generator.state,
        "opt_net": None if state.opt_net is None else state.opt_net.state_dict(),
        "opt_discs": None
        if state.opt_discs is None
        else {f"{c}_{s}": o.state_dict() for (c, s), o in state.opt_discs.items()},
        "loss_log": state.loss_log,
        "recon_baseline": state.recon_baseline,
        "divergence_run": state.divergence_run,
        "anchor_ref": state.anchor_ref,
    }
    torch.save(payload, path)


def load_checkpoint(path, clip: VideoClip, cfg: TrainConfig) -> TrainState:
    payload = torch.load(path, weights_only=False)
    if payload["config_digest"] != cfg.digest():
        raise ValueError("checkpoint was produced by a different config")
    state = prepare_state(clip, cfg)
    state.net.load_state_dict(payload["net"])
    for (c, s), d in state.discs.items():
        d.load_state_dict(payload["discs"][f"{c}_{s}"])
    state.canvas = payload["canvas"]
    state.canvas.requires_grad_(False)
    state.homographies = payload["homographies"]
    state.noise_canvas = payload["noise_canvas"]
    if payload["banks"] is not None:
        state.banks = {
            k: priors.PositiveBank(k, images, provenance=prov)
            for k, (images, prov) in payload["banks"].items()
        }
    state.mask_init_active = payload["mask_init_active"]
    state.stage1_epochs_done = payload["stage1_epochs_done"]
    state.stage3_epochs_done = payload["stage3_epochs_done"]
    state.step_count = payload["step_count"]
    state.rng.bit_generator.state = payload["rng_state"]
    state.rng_patch.bit_generator.state = payload["rng_patch_state"]
    state.loss_log = payload["loss_log"]
    state.recon_baseline = payload["recon_baseline"]
    state.divergence_run = payload["divergence_run"]
    state.anchor_ref = payload["anchor_ref"]
    if payload["opt_net"] is not None:
        if state.stage1_epochs_done >= cfg.stage1_epochs:
            state.opt_net = torch.optim.Adam(state.net.parameters(), lr=cfg.learning_rate)
        else:
            state.canvas.requires_grad_(True)
            state.opt_net = torch.optim.Adam(
                list(state.net.parameters()) + [state.canvas], lr=cfg.learning_rate
            )
        state.opt_net.load_state_dict(payload["opt_net"])
    if payload["opt_discs"] is not None:
        state.opt_discs = {}
        for (c, s), d in state.discs.items():
            opt = torch.optim.Adam(d.parameters(), lr=cfg.learning_rate)
            opt.load_state_dict(payload["opt_discs"][f"{c}_{s}"])
            state.opt_discs[(c, s)] = opt
    return state
