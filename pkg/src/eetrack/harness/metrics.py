"""OTB-style one-pass evaluation: center-error precision and IoU success."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..head import BBox

PRECISION_THRESHOLDS = np.arange(0, 51, 1)          # pixels
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 51)      # IoU


def iou(a: BBox, b: BBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def center_error(a: BBox, b: BBox) -> float:
    return float(np.hypot(a.cx - b.cx, a.cy - b.cy))


@dataclass
class MetricReport:
    precision_curve: np.ndarray      # indexed by integer pixel threshold 0..50
    precision_at_20: float
    success_curve: np.ndarray        # over 51 IoU thresholds in [0, 1]
    success_auc: float
    n_frames: int
    mean_exit_layer: float = float("nan")
    mean_flops: float = float("nan")
    extras: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "precision_at_20": self.precision_at_20,
            "success_auc": self.success_auc,
            "mean_exit_layer": self.mean_exit_layer,
            "mean_flops": self.mean_flops,
        }


def evaluate(pred_boxes: list[BBox], gt_boxes: list[BBox],
             mean_exit_layer: float = float("nan"),
             mean_flops: float = float("nan")) -> MetricReport:
    """Precision/success curves over matched prediction and truth lists."""
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError(f"length mismatch: {len(pred_boxes)} preds, {len(gt_boxes)} gts")
    if not pred_boxes:
        raise ValueError("evaluate needs at least one frame")
    cle = np.array([center_error(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    ious = np.array([iou(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    precision = np.array([(cle <= t).mean() for t in PRECISION_THRESHOLDS])
    success = np.array([(ious >= t).mean() for t in SUCCESS_THRESHOLDS])
    return MetricReport(
        precision_curve=precision,
        precision_at_20=float(precision[20]),
        success_curve=success,
        success_auc=float(success.mean()),
        n_frames=len(pred_boxes),
        mean_exit_layer=mean_exit_layer,
        mean_flops=mean_flops,
    )


def write_report_csv(report: MetricReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for key, value in report.summary().items():
            writer.writerow([key, value])
        writer.writerow([])
        writer.writerow(["precision_threshold_px", "fraction"])
        for t, v in zip(PRECISION_THRESHOLDS, report.precision_curve):
            writer.writerow([int(t), v])
        writer.writerow([])
        writer.writerow(["success_threshold_iou", "fraction"])
        for t, v in zip(SUCCESS_THRESHOLDS, report.success_curve):
            writer.writerow([f"{t:.2f}", v])


def plot_curves(report: MetricReport, out_prefix) -> list[Path]:
    """Optional precision/success plots as PNG files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for name, xs, ys, xlabel in (
            ("precision", PRECISION_THRESHOLDS, report.precision_curve,
             "center error threshold (px)"),
            ("success", SUCCESS_THRESHOLDS, report.success_curve, "IoU threshold")):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(xs, ys)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("fraction of frames")
        ax.set_ylim(0, 1.05)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = Path(f"{out_prefix}_{name}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
