"""Decomposition network, multi-scale patch discriminators, input encoding.

The decomposition net is an encoder-decoder with skip connections and two
parallel output heads: a saturating 3-channel color head and a 3-channel
head carrying alpha (saturated afterwards) plus a 2-channel flow
prediction in pixels. One network instance is shared by all non-static
layers; the per-layer inputs (reference mask, masked flow, warped noise)
tell it which layer to produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import compositing
from .model import FOREGROUND, RESIDUAL, VideoClip

NOISE_CHANNELS = 16
INPUT_CHANNELS = 1 + 2 + NOISE_CHANNELS


@dataclass(frozen=True)
class DecompNetConfig:
    encoder_channels: tuple[int, ...] = (64, 128, 256, 256, 256, 256, 256)
    encoder_strides: tuple[int, ...] = (2, 2, 2, 2, 2, 1, 1)
    decoder_channels: tuple[int, ...] = (256, 256, 128, 64, 64)
    width_multiplier: float = 1.0
    in_channels: int = INPUT_CHANNELS

    def __post_init__(self):
        if len(self.encoder_channels) != len(self.encoder_strides):
            raise ValueError("encoder channels/strides length mismatch")
        k = sum(1 for s in self.encoder_strides if s == 2)
        if len(self.decoder_channels) != k:
            raise ValueError("decoder must have one stage per stride-2 encoder stage")

    def scaled(self, values):
        return tuple(max(4, int(round(c * self.width_multiplier))) for c in values)


TINY_CONFIG = DecompNetConfig(
    encoder_channels=(64, 128, 256),
    encoder_strides=(2, 2, 1),
    decoder_channels=(128, 64),
    width_multiplier=0.125,
)

DESK_CONFIG = DecompNetConfig(width_multiplier=0.25)


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple[int, ...] = (64, 128, 1)
    strides: tuple[int, ...] = (2, 1, 1)
    kernel: int = 4
    scales: tuple[int, ...] = (16, 32, 64)

    def score_map_size(self, patch: int) -> int:
        """Convolution arithmetic of the (kernel, stride, no padding) stack."""
        s = patch
        for stride in self.strides:
            s = (s - self.kernel) // stride + 1
        return s


def _enc_block(cin, cout, stride, norm):
    layers = []
    if stride == 2:
        layers.append(nn.Conv2d(cin, cout, 4, 2, 1))
    else:
        layers.append(nn.Conv2d(cin, cout, 4, 1, padding=3, dilation=2))
    if norm:
        layers.append(nn.BatchNorm2d(cout))
    layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


def _dec_block(cin, cout):
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, 4, 2, 1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class DecompositionNet(nn.Module):
    """Encoder-decoder with skips and parallel color / (alpha, flow) heads."""

    def __init__(self, config: DecompNetConfig = DecompNetConfig()):
        super().__init__()
        self.config = config
        ch = config.scaled(config.encoder_channels)
        dch = config.scaled(config.decoder_channels)
        self.encoder = nn.ModuleList()
        cin = config.in_channels
        self.skip_stages = []
        for i, (c, s) in enumerate(zip(ch, config.encoder_strides)):
            self.encoder.append(_enc_block(cin, c, s, norm=i > 0))
            if s == 2:
                self.skip_stages.append(i)
            cin = c
        self.decoder = nn.ModuleList()
        skip_ch = [ch[i] for i in self.skip_stages]  # back-to-front pops
        for c in dch:
            self.decoder.append(_dec_block(cin + skip_ch.pop(), c))
            cin = c
        self.head_color = nn.Conv2d(cin, 3, 3, 1, 1)
        self.head_alpha_flow = nn.Conv2d(cin, 3, 3, 1, 1)

    def forward(self, x):
        skips = []
        for i, block in enumerate(self.encoder):
            x = block(x)
            if i in self.skip_stages:
                skips.append(x)
        for block in self.decoder:
            skip = skips.pop()
            if x.shape[-2:] != skip.shape[-2:]:
                # odd spatial sizes: align with the skip before concatenating
                x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = block(torch.cat([x, skip], dim=1))
        color = torch.tanh(self.head_color(x))
        ab = self.head_alpha_flow(x)
        alpha = torch.tanh(ab[:, 0:1])
        flow = ab[:, 1:3]
        return color, alpha, flow


class PatchDiscriminator(nn.Module):
    """PatchGAN-style 3-layer conv stack; returns raw score logits."""

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig(), scale: int = 16):
        super().__init__()
        if scale not in config.scales:
            raise ValueError(f"scale {scale} not in {config.scales}")
        self.config = config
        self.scale = scale
        c1, c2, c3 = config.channels
        k = config.kernel
        s1, s2, s3 = config.strides
        self.net = nn.Sequential(
            nn.Conv2d(3, c1, k, s1, 0),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c1, c2, k, s2, 0),
            nn.BatchNorm2d(c2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c2, c3, k, s3, 0),
        )

    def forward(self, patches):
        if patches.shape[-1] != self.scale or patches.shape[-2] != self.scale:
            raise ValueError(f"expected {self.scale}x{self.scale} patches, got {tuple(patches.shape[-2:])}")
        return self.net(patches)


def forward_discriminator(disc: PatchDiscriminator, patches: torch.Tensor) -> torch.Tensor:
    return disc(patches)


def init_weights(module: nn.Module, std: float = 0.02):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, std)
            nn.init.zeros_(m.bias)


def build_networks(config: DecompNetConfig, disc_config: DiscriminatorConfig, seed: int):
    """Seeded construction of the decomposition net and per-scale discriminators."""
    torch.manual_seed(seed)
    net = DecompositionNet(config)
    init_weights(net)
    discs = {}
    for comp in ("fg", "res"):
        for scale in disc_config.scales:
            d = PatchDiscriminator(disc_config, scale)
            init_weights(d)
            discs[(comp, scale)] = d
    return net, discs


# ---------------------------------------------------------------------------
# input encoding


@dataclass
class LayerInputs:
    """Network inputs for the two predicted layers, all frames.

    ``tensors[kind]`` has shape (T, 1+2+C_noise, H, W): reference mask,
    masked flow, warped noise.
    """

    tensors: dict[str, np.ndarray]
    noise_canvas: np.ndarray  # (C, Hc, Wc)

    def stacked(self) -> np.ndarray:
        return np.stack([self.tensors[FOREGROUND], self.tensors[RESIDUAL]])


def sample_noise_canvas(shape_hw, homographies, origin, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-Gaussian noise canvas plus its per-frame warps.

    One noise image is drawn for the whole video and warped by each
    frame's homography so static content keeps a stable noise code.
    """
    H, W = shape_hw
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, 101))))
    pad = int(np.ceil(origin[0])), int(np.ceil(origin[1]))
    Hc, Wc = H + 2 * pad[1], W + 2 * pad[0]
    canvas = rng.normal(0.0, 1.0, size=(Hc, Wc, NOISE_CHANNELS)).astype(np.float32)
    T = homographies.shape[0]
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    warped = np.empty((T, NOISE_CHANNELS, H, W), dtype=np.float32)
    for t in range(T):
        xr, yr = compositing.apply_homography(homographies[t], xs, ys)
        samp = compositing.bilinear_sample(canvas, xr + origin[0], yr + origin[1])
        warped[t] = np.moveaxis(samp, -1, 0)
    return canvas, warped


def encode_inputs(clip: VideoClip, kind: str, t: int, noise_frames: np.ndarray) -> np.ndarray:
    """One layer's network input at frame t: (1+2+C_noise, H, W).

    Reference masks: foreground 1 inside the segmentation mask, residual 0
    inside; both 0.5 outside. Foreground input flow is zeroed outside the
    mask; the residual sees the full-frame flow.
    """
    if clip.masks is None:
        raise ValueError("clip has no masks")
    if clip.flows is None or 1 not in clip.flows:
        raise ValueError("clip has no k=1 flow")
    T, H, W = clip.shape
    mask = clip.masks[t]
    fwd = clip.flows[1].forward
    flow = fwd[t] if t < fwd.shape[0] else np.zeros((H, W, 2), dtype=np.float32)
    if kind == FOREGROUND:
        ref = np.where(mask > 0.5, 1.0, 0.5).astype(np.float32)
        flow = flow * (mask > 0.5)[..., None]
    elif kind == RESIDUAL:
        ref = np.where(mask > 0.5, 0.0, 0.5).astype(np.float32)
    else:
        raise ValueError(f"no encoded inputs for layer kind {kind!r}")
    return np.concatenate(
        [ref[None], np.moveaxis(flow.astype(np.float32), -1, 0), noise_frames[t]], axis=0
    )


def make_layer_inputs(clip: VideoClip, homographies: np.ndarray, origin, seed: int) -> LayerInputs:
    """Encode all frames for the foreground and residual layers."""
    T, H, W = clip.shape
    canvas, warped = sample_noise_canvas((H, W), homographies, origin, seed)
    tensors = {}
    for kind in (FOREGROUND, RESIDUAL):
        tensors[kind] = np.stack([encode_inputs(clip, kind, t, warped) for t in range(T)])
    return LayerInputs(tensors=tensors, noise_canvas=canvas)


def forward_decomposition(net: DecompositionNet, inputs: torch.Tensor):
    """Run the net on stacked per-layer inputs (L, B, C, H, W).

    Returns dicts color/alpha/flow keyed by layer index, each (B, ...).
    """
    L, B = inputs.shape[:2]
    flat = inputs.reshape(L * B, *inputs.shape[2:])
    color, alpha, flow = net(flat)
    return (
        color.reshape(L, B, *color.shape[1:]),
        alpha.reshape(L, B, *alpha.shape[1:]),
        flow.reshape(L, B, *flow.shape[1:]),
    )
