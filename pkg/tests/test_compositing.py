import numpy as np
import pytest

from mattekit import compositing
from mattekit.model import ENV, FG, RES, alpha_to_unit


def test_over_step_opaque_layer():
    under = np.full((4, 5, 3), -0.3, dtype=np.float32)
    color = np.full((4, 5, 3), 0.7, dtype=np.float32)
    out = compositing.over_step(under, color, np.ones((4, 5), dtype=np.float32))
    assert np.array_equal(out, color)


def test_over_step_transparent_layer():
    under = np.full((4, 5, 3), -0.3, dtype=np.float32)
    color = np.full((4, 5, 3), 0.7, dtype=np.float32)
    out = compositing.over_step(under, color, np.zeros((4, 5), dtype=np.float32))
    assert np.array_equal(out, under)


def test_over_step_midpoint():
    under = np.full((2, 2, 3), -1.0, dtype=np.float32)
    color = np.full((2, 2, 3), 1.0, dtype=np.float32)
    out = compositing.over_step(under, color, np.full((2, 2), 0.5, dtype=np.float32))
    assert np.abs(out).max() == 0.0


def test_over_step_shape_mismatch():
    with pytest.raises(ValueError):
        compositing.over_step(np.zeros((4, 5, 3)), np.zeros((4, 6, 3)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        compositing.over_step(np.zeros((4, 5, 3)), np.zeros((4, 5, 3)), np.zeros((4, 6)))


def test_composite_env_only_is_env_layer(bounce_truth):
    d = bounce_truth.gt_decomposition
    out = compositing.composite(d, 5, subset={ENV})
    assert np.array_equal(out, d.layers[ENV].color[5])


def test_composite_reproduces_rendered_video(bounce_truth):
    d = bounce_truth.gt_decomposition
    video = bounce_truth.video.frames
    for t in (0, 10, 25, len(video) - 1):
        err = np.abs(compositing.composite(d, t) - video[t]).max()
        assert err <= 1 / 255


def test_composite_background_counterfactual(bounce_truth):
    out = compositing.composite(bounce_truth.gt_decomposition, 12, subset={ENV, RES})
    assert np.abs(out - bounce_truth.background_counterfactual[12]).max() <= 1 / 255


def test_composite_errors(bounce_truth):
    d = bounce_truth.gt_decomposition
    with pytest.raises(KeyError):
        compositing.composite(d, 0, subset={"nope"})
    with pytest.raises(IndexError):
        compositing.composite(d, 10_000)


def test_composite_video_empty_subset_is_env(bounce_truth):
    d = bounce_truth.gt_decomposition
    vid = compositing.composite_video(d, subset=set())
    assert np.array_equal(vid, d.layers[ENV].color)


def test_composite_subset_order_independent(bounce_truth):
    d = bounce_truth.gt_decomposition
    a = compositing.composite(d, 7, subset={FG, RES, ENV})
    b = compositing.composite(d, 7, subset={RES, ENV, FG})
    assert np.array_equal(a, b)


def test_fold_associativity(bounce_truth):
    # Pre-fold res and fg into one equivalent layer, compare against the
    # sequential fold. Exact in reals; float32 keeps it under 1e-6.
    d = bounce_truth.gt_decomposition
    t = 13
    a1 = alpha_to_unit(d.layers[RES].alpha_slots[0][t]).astype(np.float64)
    c1 = d.layers[RES].color[t].astype(np.float64)
    a2 = alpha_to_unit(d.layers[FG].alpha_slots[0][t]).astype(np.float64)
    c2 = d.layers[FG].color[t].astype(np.float64)
    a = a2 + (1 - a2) * a1
    num = a2[..., None] * c2 + ((1 - a2) * a1)[..., None] * c1
    c = np.where(a[..., None] > 0, num / np.maximum(a[..., None], 1e-300), 0.0)
    folded = compositing.over_step(
        d.layers[ENV].color[t].astype(np.float64), c, a
    )
    sequential = compositing.composite(d, t)
    assert np.abs(folded - sequential).max() <= 1e-6


def test_over_monotone_linear_in_alpha():
    rng = np.random.default_rng(7)
    under = rng.uniform(-1, 1, (6, 6, 3)).astype(np.float32)
    color = rng.uniform(-1, 1, (6, 6, 3)).astype(np.float32)
    outs = []
    alphas = [0.0, 0.25, 0.5, 0.75, 1.0]
    for a in alphas:
        outs.append(compositing.over_step(under, color, np.full((6, 6), a, np.float32)))
    # Linear interpolation between under and color.
    for a, out in zip(alphas, outs):
        expect = a * color + (1 - a) * under
        assert np.abs(out - expect).max() <= 1e-6
    deltas = [np.abs(out - color).mean() for out in outs]
    assert all(x >= y - 1e-9 for x, y in zip(deltas, deltas[1:]))


def test_counterfactual_consistency(bounce_truth):
    # composite(all) == over_step(composite(all minus topmost), topmost), exactly
    d = bounce_truth.gt_decomposition
    t = 11
    top_id, top_slot = d.order.entries[-1]
    below = compositing.composite(d, t, subset=set(d.layers) - {top_id})
    top = d.layers[top_id]
    rebuilt = compositing.over_step(
        below, top.color[t], alpha_to_unit(top.alpha_slots[0][t])
    )
    assert np.array_equal(rebuilt, compositing.composite(d, t))


def test_warp_canvas_matches_env_within_resample_tolerance(bounce_truth):
    d = bounce_truth.gt_decomposition
    cv = d.canvas
    t = 9
    warped = compositing.warp_canvas_to_frame(
        cv.image, cv.origin, cv.homographies[t], d.shape[1:]
    )
    assert np.abs(warped - d.layers[ENV].color[t]).max() <= 3 / 255
