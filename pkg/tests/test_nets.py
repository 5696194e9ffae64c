import numpy as np
import pytest
import torch

from mattekit import nets, synth
from mattekit.model import FOREGROUND, RESIDUAL, FlowPair, VideoClip


def small_clip(T=4, H=32, W=32, flow_scale=0.3, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.uniform(-0.5, 0.5, (T, H, W, 3)).astype(np.float32)
    masks = np.zeros((T, H, W), dtype=np.float32)
    masks[:, 10:20, 12:22] = 1.0
    fwd = rng.uniform(-flow_scale, flow_scale, (T - 1, H, W, 2)).astype(np.float32)
    return VideoClip(frames=frames, masks=masks, flows={1: FlowPair(forward=fwd, backward=-fwd)})


def test_forward_shapes_desk():
    net, _ = nets.build_networks(nets.DESK_CONFIG, nets.DiscriminatorConfig(), seed=1)
    x = torch.randn(2, 2, nets.INPUT_CHANNELS, 64, 112)
    color, alpha, flow = nets.forward_decomposition(net, x)
    assert tuple(color.shape) == (2, 2, 3, 64, 112)
    assert tuple(alpha.shape) == (2, 2, 1, 64, 112)
    assert tuple(flow.shape) == (2, 2, 2, 64, 112)


def test_outputs_finite_and_alpha_bounded():
    net, _ = nets.build_networks(nets.DESK_CONFIG, nets.DiscriminatorConfig(), seed=2)
    x = torch.randn(1, 3, nets.INPUT_CHANNELS, 64, 112) * 3
    color, alpha, flow = nets.forward_decomposition(net, x)
    for t in (color, alpha, flow):
        assert torch.isfinite(t).all()
    assert alpha.min() >= -1.0 and alpha.max() <= 1.0
    assert color.min() >= -1.0 and color.max() <= 1.0


def test_discriminator_score_map_sizes():
    cfg = nets.DiscriminatorConfig()
    # convolution arithmetic oracle: s -> (s-4)//stride + 1 chain
    assert cfg.score_map_size(16) == 1
    assert cfg.score_map_size(32) == 9
    assert cfg.score_map_size(64) == 25
    _, discs = nets.build_networks(nets.DESK_CONFIG, cfg, seed=0)
    for scale, expect in ((16, 1), (32, 9), (64, 25)):
        out = discs[("res", scale)](torch.randn(2, 3, scale, scale))
        assert tuple(out.shape) == (2, 1, expect, expect)


def test_discriminator_rejects_wrong_patch():
    _, discs = nets.build_networks(nets.DESK_CONFIG, nets.DiscriminatorConfig(), seed=0)
    with pytest.raises(ValueError):
        discs[("fg", 16)](torch.randn(1, 3, 32, 32))


def test_seeded_determinism():
    x = torch.randn(1, 2, nets.INPUT_CHANNELS, 32, 32, generator=torch.Generator().manual_seed(5))
    outs = []
    for _ in range(2):
        net, _ = nets.build_networks(nets.TINY_CONFIG, nets.DiscriminatorConfig(), seed=9)
        net.eval()
        with torch.no_grad():
            outs.append(nets.forward_decomposition(net, x))
    for a, b in zip(outs[0], outs[1]):
        assert torch.equal(a, b)


def test_encode_inputs_reference_masks():
    clip = small_clip()
    homs = np.broadcast_to(np.eye(3), (4, 3, 3)).copy()
    _, noise = nets.sample_noise_canvas((32, 32), homs, (2.0, 2.0), seed=0)
    fg = nets.encode_inputs(clip, FOREGROUND, 1, noise)
    res = nets.encode_inputs(clip, RESIDUAL, 1, noise)
    inside = clip.masks[1] > 0.5
    assert np.all(fg[0][inside] == 1.0)
    assert np.all(fg[0][~inside] == 0.5)
    assert np.all(res[0][inside] == 0.0)
    assert np.all(res[0][~inside] == 0.5)
    # fg input flow zeroed outside the mask, full-frame for residual
    assert np.all(fg[1:3][:, ~inside] == 0.0)
    assert np.any(res[1:3][:, ~inside] != 0.0)
    assert np.array_equal(fg[1:3][:, inside], res[1:3][:, inside])


def test_encode_inputs_requires_masks_and_flow():
    clip = small_clip()
    bare = VideoClip(frames=clip.frames)
    homs = np.broadcast_to(np.eye(3), (4, 3, 3)).copy()
    _, noise = nets.sample_noise_canvas((32, 32), homs, (2.0, 2.0), seed=0)
    with pytest.raises(ValueError):
        nets.encode_inputs(bare, FOREGROUND, 0, noise)


def test_noise_warps_with_homography():
    # pure translation: warped noise equals the shifted canvas sample
    T = 3
    homs = np.stack([np.array([[1, 0, 2.0 * t], [0, 1, 0], [0, 0, 1]]) for t in range(T)])
    canvas, warped = nets.sample_noise_canvas((16, 16), homs, (8.0, 8.0), seed=1)
    # at t=1 pixel x sees canvas column x + 2 + origin
    expect = canvas[8 : 8 + 16, 10 : 10 + 16, 0]
    assert np.allclose(warped[1, 0], expect, atol=1e-6)


def test_reference_mask_bias_at_initialization():
    # with near-equal inputs outside the mask, a freshly initialized net
    # tells layers apart mostly inside the mask (where refs differ 1 vs 0)
    clip = small_clip(flow_scale=0.2, seed=3)
    homs = np.broadcast_to(np.eye(3), (4, 3, 3)).copy()
    inputs = nets.make_layer_inputs(clip, homs, (2.0, 2.0), seed=0)
    x = torch.from_numpy(inputs.stacked()[:, :1])  # frame 0 only
    inside = torch.from_numpy(clip.masks[0] > 0.5)
    diffs_eq, diffs_ne = [], []
    for seed in range(12):
        net, _ = nets.build_networks(
            nets.DecompNetConfig(
                encoder_channels=(64, 128, 256, 256, 256),
                encoder_strides=(2, 2, 2, 1, 1),
                decoder_channels=(256, 128, 64),
                width_multiplier=0.25,
            ),
            nets.DiscriminatorConfig(),
            seed=seed,
        )
        net.eval()
        with torch.no_grad():
            _, alpha, _ = nets.forward_decomposition(net, x)
        d = (alpha[0, 0, 0] - alpha[1, 0, 0]).abs()
        diffs_eq.append(float(d[~inside].mean()))
        diffs_ne.append(float(d[inside].mean()))
    assert np.mean(diffs_eq) < np.mean(diffs_ne)
