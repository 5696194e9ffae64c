import math

import numpy as np
import pytest

from mattekit import metrics
from mattekit.model import unit_to_alpha


def test_binarize_all_ones():
    a = np.ones((2, 4, 4), dtype=np.float32)
    assert metrics.binarize_alpha(a, 0.8).min() == 1


def test_binarize_exact_threshold_inclusive():
    a = unit_to_alpha(np.full((3, 3), 0.8))
    assert metrics.binarize_alpha(a, 0.8).min() == 1


def test_binarize_threshold_validation():
    with pytest.raises(ValueError):
        metrics.binarize_alpha(np.zeros((2, 2)), 1.5)


def test_prf_perfect():
    gt = np.array([[1, 1, 0, 0]], dtype=np.int8)
    pred = np.array([[1, 1, 0, 0]], dtype=np.uint8)
    p, r, f, cov = metrics.pr_f(pred, gt)
    assert (p, r, f, cov) == (1.0, 1.0, 1.0, 1.0)


def test_prf_all_negative_degenerate():
    gt = np.array([[1, 1, 0, 0]], dtype=np.int8)
    pred = np.zeros_like(gt, dtype=np.uint8)
    p, r, f, cov = metrics.pr_f(pred, gt)
    assert (p, r, f) == (0.0, 0.0, 0.0)


def test_prf_confusion_arithmetic():
    # 2 TP, 1 FP, 1 FN -> P = R = F = 2/3
    gt = np.array([[1, 1, 1, 0, 0]], dtype=np.int8)
    pred = np.array([[1, 1, 0, 1, 0]], dtype=np.uint8)
    p, r, f, _ = metrics.pr_f(pred, gt)
    assert p == pytest.approx(2 / 3)
    assert r == pytest.approx(2 / 3)
    assert f == pytest.approx(2 / 3)


def test_prf_unknown_excluded():
    gt = np.array([[1, -1, -1, 0]], dtype=np.int8)
    pred = np.array([[1, 1, 1, 0]], dtype=np.uint8)  # FPs only on unknowns
    p, r, f, cov = metrics.pr_f(pred, gt)
    assert (p, r, f) == (1.0, 1.0, 1.0)
    assert cov == pytest.approx(0.5)


def test_prf_all_unknown_flags_zero_coverage():
    gt = np.full((2, 3), -1, dtype=np.int8)
    pred = np.ones((2, 3), dtype=np.uint8)
    p, r, f, cov = metrics.pr_f(pred, gt)
    assert (p, r, f, cov) == (0.0, 0.0, 0.0, 0.0)


def test_auc_perfectly_separated():
    labels = np.array([0, 0, 0, 1, 1, 1], dtype=np.int8)
    alpha = unit_to_alpha(np.array([0.1, 0.2, 0.3, 0.7, 0.8, 0.9]))
    assert metrics.auc(alpha, labels) == pytest.approx(1.0)


def test_auc_random_predictor_near_half():
    rng = np.random.default_rng(0)
    vals = []
    for s in range(6):
        labels = (rng.random(4000) > 0.5).astype(np.int8)
        alpha = unit_to_alpha(rng.random(4000))
        vals.append(metrics.auc(alpha, labels))
    assert abs(np.mean(vals) - 0.5) <= 0.05


def test_auc_reversed_predictor():
    rng = np.random.default_rng(1)
    labels = (rng.random(500) > 0.6).astype(np.int8)
    unit = rng.random(500)
    a = metrics.auc(unit_to_alpha(unit), labels)
    b = metrics.auc(unit_to_alpha(1 - unit), labels)
    assert a + b == pytest.approx(1.0, abs=1e-9)


def test_auc_single_class_marker():
    assert metrics.auc(np.zeros(10), np.ones(10, dtype=np.int8)) is None


def test_auc_matches_pair_counting_oracle():
    rng = np.random.default_rng(2)
    labels = (rng.random(300) > 0.7).astype(np.int8)
    unit = np.round(rng.random(300), 2)  # force ties
    a = metrics.auc(unit_to_alpha(unit), labels)
    pos = unit[labels == 1]
    neg = unit[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    assert a == pytest.approx(wins / (len(pos) * len(neg)), abs=1e-12)


def test_auc_monotone_invariance():
    rng = np.random.default_rng(3)
    labels = (rng.random(400) > 0.5).astype(np.int8)
    unit = rng.random(400)
    a = metrics.auc(unit_to_alpha(unit), labels)
    b = metrics.auc(unit_to_alpha(unit**3), labels)
    assert a == pytest.approx(b, abs=1e-12)


def test_alpha_l1_cases():
    gt = np.zeros((3, 4, 4), dtype=np.float32)
    assert metrics.alpha_l1(gt, gt) == 0.0
    assert metrics.alpha_l1(gt + 0.2, gt) == pytest.approx(0.2, rel=1e-6)


def test_frame_permutation_invariance():
    rng = np.random.default_rng(4)
    pred = rng.uniform(-1, 1, (6, 5, 5))
    gt = rng.uniform(-1, 1, (6, 5, 5))
    perm = rng.permutation(6)
    assert metrics.alpha_l1(pred, gt) == pytest.approx(metrics.alpha_l1(pred[perm], gt[perm]))
    labels = (rng.random((6, 5, 5)) > 0.5).astype(np.int8)
    b = metrics.binarize_alpha(pred, 0.5)
    assert metrics.pr_f(b, labels) == metrics.pr_f(b[perm], labels[perm])
    assert metrics.auc(pred, labels) == pytest.approx(metrics.auc(pred[perm], labels[perm]))


def test_psnr_identical_is_inf():
    x = np.random.default_rng(5).uniform(-1, 1, (2, 4, 4, 3))
    assert metrics.counterfactual_psnr(x, x) == math.inf


def test_psnr_noise_closed_form():
    rng = np.random.default_rng(6)
    gt = rng.uniform(-0.5, 0.5, (8, 32, 32, 3))
    noisy = gt + rng.normal(0, 0.1, gt.shape)
    val = metrics.counterfactual_psnr(noisy, gt)
    assert val == pytest.approx(20 * math.log10(2 / 0.1), abs=0.2)


def test_psnr_monotone_in_mse():
    gt = np.zeros((2, 8, 8, 3))
    a = metrics.counterfactual_psnr(gt + 0.05, gt)
    b = metrics.counterfactual_psnr(gt + 0.1, gt)
    assert a > b


def test_ablation_unknown_variant():
    with pytest.raises(ValueError):
        metrics.run_ablation_suite(None, None, variants=("bogus",))
