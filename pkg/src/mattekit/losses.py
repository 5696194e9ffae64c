"""Loss terms for the decomposition network and its discriminators.

Conventions: tensors are channels-first torch float32 (float64 in gradient
checks). L1 penalties are element means, except the flow-supervision term
whose per-pixel deviation is the true L1 norm over the two flow
components before min-pooling across layers. Alphas enter in [-1, 1] and
are unit-mapped internally where the penalty is defined on [0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossWeights:
    l1: float = 0.005  # color warp
    l2: float = 0.005  # alpha warp
    l3: float = 0.005  # adversarial (decomposition net side)
    l4: float = 0.0005  # alpha regularizer
    l5: float = 0.0005  # flow supervision
    l6: float = 25.0  # mask initialization
    l7: float = 0.0005  # adversarial (discriminator side)
    mask_init_cutoff: float = 0.05
    gamma: float = 0.1  # L1 share inside the alpha regularizer
    anchor_weight: float = 1.0


def recon_loss(composited: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute reconstruction error."""
    if composited.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(composited.shape)} vs {tuple(target.shape)}")
    return (composited - target).abs().mean()


def adv_losses(pos_scores: torch.Tensor, neg_scores: torch.Tensor, eps: float = 1e-7):
    """(discriminator loss, generator loss) from sigmoid scores in (0, 1).

    The discriminator minimizes the negated log objective; the generator
    uses the non-saturating form on the fake scores.
    """
    if pos_scores.numel() == 0 or neg_scores.numel() == 0:
        raise ValueError("empty score batch")
    pos = pos_scores.clamp(eps, 1 - eps)
    neg = neg_scores.clamp(eps, 1 - eps)
    disc = -(torch.log(pos).mean() + torch.log(1 - neg).mean())
    gen = -torch.log(neg).mean()
    return disc, gen


def warp_by_flow(image: torch.Tensor, flow: torch.Tensor):
    """Backward warp: out(p) = image(p + flow(p)); returns (warped, valid).

    ``image``: (B, C, H, W); ``flow``: (B, 2, H, W) in pixels (dx, dy).
    ``valid`` marks pixels whose source stays inside the frame.
    """
    B, _, H, W = image.shape
    device = image.device
    ys, xs = torch.meshgrid(
        torch.arange(H, device=device, dtype=image.dtype),
        torch.arange(W, device=device, dtype=image.dtype),
        indexing="ij",
    )
    sx = xs[None] + flow[:, 0]
    sy = ys[None] + flow[:, 1]
    valid = (sx >= 0) & (sx <= W - 1) & (sy >= 0) & (sy <= H - 1)
    gx = 2.0 * sx / max(W - 1, 1) - 1.0
    gy = 2.0 * sy / max(H - 1, 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1)
    warped = F.grid_sample(image, grid, mode="bilinear", padding_mode="zeros", align_corners=True)
    return warped, valid[:, None]


def flow_confidence(
    forward: np.ndarray,
    backward: np.ndarray | None,
    frame_t: np.ndarray,
    frame_tk: np.ndarray,
    tau_fb: float = 1.0,
    tau_ph: float = 0.1,
) -> np.ndarray:
    """Binary confidence for one (t, t+k) flow field, from left-right
    consistency and photometric agreement. Missing backward flow yields
    all-ones with a warning."""
    from .compositing import bilinear_sample

    H, W = forward.shape[:2]
    if backward is None:
        warnings.warn("no backward flow; flow confidence defaults to 1", stacklevel=2)
        return np.ones((H, W), dtype=np.float32)
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    sx = xs + forward[..., 0]
    sy = ys + forward[..., 1]
    inside = (sx >= 0) & (sx <= W - 1) & (sy >= 0) & (sy <= H - 1)
    back = bilinear_sample(backward, sx, sy)
    fb_err = np.linalg.norm(forward + back, axis=-1)
    warped = bilinear_sample(frame_tk, sx, sy)
    ph_err = np.abs(warped - frame_t).mean(axis=-1)
    w = inside & (fb_err < tau_fb) & (ph_err < tau_ph)
    return w.astype(np.float32)


def flow_est_loss(
    pred_flows: list[torch.Tensor], gt_flow: torch.Tensor, confidence: torch.Tensor
) -> torch.Tensor:
    """Min-pooled flow supervision: per pixel, the layer closest to the
    reference flow pays the (confidence-weighted) L1 deviation."""
    if not pred_flows:
        raise ValueError("no flow-bearing layers")
    errs = [(f - gt_flow).abs().sum(dim=1, keepdim=True) for f in pred_flows]
    min_err = torch.min(torch.stack(errs), dim=0).values
    return (confidence * min_err).mean()


def warp_losses(
    alphas_t: list[torch.Tensor],
    alphas_tk: list[torch.Tensor],
    colors_t: list[torch.Tensor],
    colors_tk: list[torch.Tensor],
    flows_t: list[torch.Tensor],
):
    """(alpha-warp, color-warp): L1 between frame t and the flow-warped
    frame t+k, per layer, averaged over in-frame samples and layers."""
    a_terms = []
    c_terms = []
    for a_t, a_k, c_t, c_k, fl in zip(alphas_t, alphas_tk, colors_t, colors_tk, flows_t):
        wa, valid = warp_by_flow(a_k, fl)
        wc, _ = warp_by_flow(c_k, fl)
        v = valid.to(a_t.dtype)
        denom_a = (v.sum() * a_t.shape[1]).clamp(min=1)
        denom_c = (v.sum() * c_t.shape[1]).clamp(min=1)
        a_terms.append(((a_t - wa).abs() * v).sum() / denom_a)
        c_terms.append(((c_t - wc).abs() * v).sum() / denom_c)
    return torch.stack(a_terms).mean(), torch.stack(c_terms).mean()


def phi0(x: torch.Tensor) -> torch.Tensor:
    """Smooth approximate-L0 penalty: 2 * sigmoid(5 x) - 1 (zero at zero)."""
    return 2.0 * torch.sigmoid(5.0 * x) - 1.0


def alpha_reg_loss(alphas: list[torch.Tensor], gamma: float = 0.1) -> torch.Tensor:
    """Sparsity on unit-mapped alphas: mean of gamma * |a| + phi0(a)."""
    flat = torch.cat([a.reshape(-1) for a in alphas])
    unit = (flat + 1.0) / 2.0
    return (gamma * unit.abs() + phi0(unit)).mean()


def dilate_mask(mask: torch.Tensor, radius: int) -> torch.Tensor:
    if radius <= 0:
        return mask
    return F.max_pool2d(mask, kernel_size=2 * radius + 1, stride=1, padding=radius)


def mask_init_loss(alpha_fg: torch.Tensor, mask: torch.Tensor, radius: int = 5) -> torch.Tensor:
    """Pull the unit foreground alpha toward the segmentation mask,
    ignoring a ``radius``-wide band around the mask boundary."""
    gate = 1.0 - dilate_mask(mask, radius) + mask
    unit = (alpha_fg + 1.0) / 2.0
    return (gate * (mask - unit).abs()).mean()


def anchor_loss(current: dict[str, torch.Tensor], reference: dict[str, torch.Tensor]) -> torch.Tensor:
    """Mean L1 to a frozen earlier solution on anchored frames."""
    if not reference:
        return torch.zeros(())
    diffs = [
        (current[key] - reference[key]).abs().reshape(-1)
        for key in sorted(reference)
    ]
    return torch.cat(diffs).mean()


def total_nd_loss(
    terms: dict[str, torch.Tensor],
    weights: LossWeights,
    adversarial_active: bool,
    mask_init_active: bool,
):
    """Weighted decomposition-network total plus a float ledger.

    The ledger's ``total`` is the exact float64 weighted sum of the logged
    component values, so consumers can re-derive it bit-for-bit.
    """
    w = weights
    zero = torch.zeros((), dtype=next(iter(terms.values())).dtype)

    def term(name):
        return terms.get(name, zero)

    total = term("recon") + w.l1 * term("rgb_warp") + w.l2 * term("alpha_warp")
    if adversarial_active:
        total = total + w.l3 * (term("adv_fg") + term("adv_res"))
    total = total + w.l4 * term("alpha_reg") + w.l5 * term("flow_est")
    if mask_init_active:
        total = total + w.l6 * term("mask_init")
    if "anchor" in terms:
        total = total + w.anchor_weight * term("anchor")

    ledger: dict[str, float] = {k: float(v.detach()) for k, v in terms.items()}
    led_total = ledger.get("recon", 0.0)
    led_total += w.l1 * ledger.get("rgb_warp", 0.0) + w.l2 * ledger.get("alpha_warp", 0.0)
    if adversarial_active:
        led_total += w.l3 * (ledger.get("adv_fg", 0.0) + ledger.get("adv_res", 0.0))
    led_total += w.l4 * ledger.get("alpha_reg", 0.0) + w.l5 * ledger.get("flow_est", 0.0)
    if mask_init_active:
        led_total += w.l6 * ledger.get("mask_init", 0.0)
    led_total += w.anchor_weight * ledger.get("anchor", 0.0)
    ledger["total"] = led_total
    ledger["adv_active"] = float(adversarial_active)
    ledger["mask_init_active"] = float(mask_init_active)
    return total, ledger


def discriminator_loss(disc_adv: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return weights.l7 * disc_adv
