"""Quantitative evaluation: background-subtraction metrics and
counterfactual/alpha errors against synthetic ground truth.

Labels follow the {1 positive, 0 negative, -1 unknown} convention;
unknown pixels never enter any count. Alphas compare in their stored
[-1, 1] range; binarization happens on the unit-mapped values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .model import alpha_to_unit


class PRF(NamedTuple):
    precision: float
    recall: float
    f_score: float
    coverage: float  # fraction of pixels with known labels


@dataclass
class MetricReport:
    precision: float | None = None
    recall: float | None = None
    f_score: float | None = None
    auc: float | None = None
    alpha_l1: float | None = None
    background_psnr: float | None = None
    per_frame: dict[str, list[float]] = field(default_factory=dict)
    config_digest: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def write(self, path):
        Path(path).write_text(self.to_json())


def binarize_alpha(alpha: np.ndarray, threshold: float = 0.8) -> np.ndarray:
    """Threshold the unit-mapped alpha; >= is positive."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    return (alpha_to_unit(alpha) >= threshold).astype(np.uint8)


def pr_f(pred: np.ndarray, labels: np.ndarray) -> PRF:
    """Precision/recall/F over known-label pixels.

    Degenerate cases use the 0 convention (no positive predictions gives
    precision 0; empty ground truth gives recall 0).
    """
    if pred.shape != labels.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {labels.shape}")
    known = labels >= 0
    coverage = float(known.mean()) if labels.size else 0.0
    p = pred.astype(bool) & known
    g = (labels == 1) & known
    tp = float(np.count_nonzero(p & g))
    fp = float(np.count_nonzero(p & ~g))
    fn = float(np.count_nonzero(~p & g))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PRF(precision, recall, f, coverage)


def auc(alpha: np.ndarray, labels: np.ndarray) -> float | None:
    """Exact ROC-AUC of the unit alpha against binary labels.

    Unknown-labeled pixels are excluded. Returns None when the labels
    contain a single class (undefined marker). Computed by the
    trapezoidal rule over every distinct score threshold, which makes it
    invariant under strictly monotone transforms of the alpha.
    """
    known = labels >= 0
    scores = alpha_to_unit(alpha)[known].reshape(-1)
    y = (labels[known].reshape(-1) == 1)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    y_sorted = y[order]
    s_sorted = scores[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    # threshold boundaries: last index of each tied score run
    boundary = np.nonzero(np.diff(s_sorted))[0]
    idx = np.concatenate([boundary, [y.size - 1]])
    tpr = np.concatenate([[0.0], tp[idx] / n_pos])
    fpr = np.concatenate([[0.0], fp[idx] / n_neg])
    return float(np.trapezoid(tpr, fpr))


def alpha_l1(pred_alpha: np.ndarray, gt_alpha: np.ndarray) -> float:
    """Mean absolute alpha difference in the stored [-1, 1] range."""
    if pred_alpha.shape != gt_alpha.shape:
        raise ValueError(f"shape mismatch {pred_alpha.shape} vs {gt_alpha.shape}")
    return float(np.abs(pred_alpha.astype(np.float64) - gt_alpha.astype(np.float64)).mean())


def counterfactual_psnr(pred: np.ndarray, gt: np.ndarray, peak: float = 2.0) -> float:
    """PSNR in dB over all frames; +inf marker for identical inputs."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred.astype(np.float64) - gt.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


ABLATION_VARIANTS = ("full", "no_flow_est", "no_alpha_warp", "no_res_disc")


def run_ablation_suite(scene_cfg, train_cfg, variants=("full", "no_flow_est", "no_res_disc"), out_dir=None):
    """Train each named variant with identical seeds; report alpha errors.

    Returns {variant: {"alpha_l1": float, "background_psnr": float}} plus
    the decompositions keyed by variant.
    """
    from . import synth, trainer
    from .model import ENV, FG, RES
    from . import compositing

    unknown = set(variants) - set(ABLATION_VARIANTS)
    if unknown:
        raise ValueError(f"unknown ablation variants {sorted(unknown)}")
    truth = synth.generate_bouncing_scene(scene_cfg)
    gt_alpha = truth.gt_decomposition.layers[FG].alpha_slots[0]
    rows = {}
    decomps = {}
    for variant in variants:
        cfg = trainer.apply_variant(train_cfg, variant)
        state = trainer.run_pipeline(truth.video, cfg)
        decomp = trainer.infer_decomposition(state, truth.video)
        pred_alpha = decomp.layers[FG].alpha_slots[0]
        bg = compositing.composite_video(decomp, subset={ENV, RES})
        rows[variant] = {
            "alpha_l1": alpha_l1(pred_alpha, gt_alpha),
            "background_psnr": counterfactual_psnr(bg, truth.background_counterfactual),
        }
        decomps[variant] = decomp
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "ablation.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["variant", "alpha_l1", "background_psnr"])
                for name, row in rows.items():
                    w.writerow([name, row["alpha_l1"], row["background_psnr"]])
            (out / "ablation.json").write_text(json.dumps(rows, indent=1, sort_keys=True))
    return rows, decomps


def evaluate_against_scene(decomp, scene_dir, threshold: float = 0.8) -> MetricReport:
    """Metrics of a decomposition against a written scene directory."""
    from . import compositing, io
    from .model import ENV, FG, RES

    scene = Path(scene_dir)
    gt = io.import_decomposition(scene / "gt")
    gt_alpha = gt.layers[FG].alpha_slots[0]
    pred_alpha = decomp.layers[FG].alpha_slots[0]
    report = MetricReport(alpha_l1=alpha_l1(pred_alpha, gt_alpha))
    cf_dir = scene / "counterfactual"
    if cf_dir.exists():
        frames = sorted(cf_dir.glob("*.png"))
        cf = np.stack([io.read_png_color(p) for p in frames])
        bg = compositing.composite_video(decomp, subset={ENV, RES})
        report.background_psnr = counterfactual_psnr(bg, cf)
    labels_dir = scene / "labels"
    if labels_dir.exists() and any(labels_dir.iterdir()):
        labels = io.read_labels(labels_dir)
        pred = binarize_alpha(pred_alpha, threshold)
        prf = pr_f(pred, labels)
        report.precision, report.recall, report.f_score = prf.precision, prf.recall, prf.f_score
        report.auc = auc(pred_alpha, labels)
        report.per_frame["f_score"] = [
            pr_f(pred[t], labels[t]).f_score for t in range(labels.shape[0])
        ]
    return report
