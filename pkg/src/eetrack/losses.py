"""Task losses and the combined training objective.

Classification uses the penalty-reduced focal loss over a Gaussian-smoothed
target heat map (peak 1 at the ground-truth cell, radius tied to box size
through the min-overlap rule).  Regression pairs a GIoU term with a plain
L1 on (cx, cy, w, h).  The overall objective is a fixed-coefficient sum of
classification, the two regression terms, the blur-robustness term and the
exit-sparsity term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .config import LossWeights
from .head import BBox
from .numerics import Tensor

_P_CLAMP = 1e-7


@dataclass
class TrainTarget:
    gt_box: BBox                  # normalized search coordinates
    cls_map: np.ndarray           # (G, G) in [0, 1], exactly 1 at the positive cell
    positive_cell: tuple[int, int]


def gaussian_radius(height: float, width: float, min_overlap: float = 0.7) -> float:
    """Largest center shift (in cells) keeping IoU >= min_overlap."""
    a1 = 1
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 - np.sqrt(b1 ** 2 - 4 * a1 * c1)) / 2

    a2 = 4
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 - np.sqrt(b2 ** 2 - 4 * a2 * c2)) / 2

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + np.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def make_target(gt_box: BBox, grid: int) -> TrainTarget:
    """Gaussian heat map centered on the cell containing the box center."""
    col = min(grid - 1, max(0, int(gt_box.cx * grid)))
    row = min(grid - 1, max(0, int(gt_box.cy * grid)))
    radius = max(0.0, gaussian_radius(gt_box.h * grid, gt_box.w * grid))
    sigma = max((2 * radius + 1) / 6.0, 1e-3)
    ys, xs = np.mgrid[0:grid, 0:grid]
    cls_map = np.exp(-((xs - col) ** 2 + (ys - row) ** 2) / (2 * sigma ** 2))
    cls_map[row, col] = 1.0
    return TrainTarget(gt_box=gt_box, cls_map=cls_map, positive_cell=(row, col))


def focal_loss(score_map: Tensor, target: TrainTarget,
               alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """Penalty-reduced focal loss, normalized by the (single) positive."""
    if score_map.shape != target.cls_map.shape:
        raise nm.ShapeError(
            f"score map {score_map.shape} != target map {target.cls_map.shape}")
    p = nm.clamp(score_map, _P_CLAMP, 1.0 - _P_CLAMP)
    y = target.cls_map.astype(p.dtype)
    pos = (y == 1.0).astype(p.dtype)
    neg = 1.0 - pos
    pos_term = nm.mul(nm.mul(nm.power(nm.sub(1.0, p), alpha), nm.log(p)), pos)
    neg_weight = neg * (1.0 - y) ** beta
    neg_term = nm.mul(nm.mul(nm.power(p, alpha), nm.log(nm.sub(1.0, p))), neg_weight)
    n_pos = max(1.0, float(pos.sum()))
    return nm.div(nm.neg(nm.tsum(nm.add(pos_term, neg_term))), n_pos)


def focal_loss_many(score_maps: Tensor, targets: list[TrainTarget],
                    alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """Per-sample focal losses for (B, G, G) maps; returns shape (B,)."""
    y = np.stack([t.cls_map for t in targets])
    if score_maps.shape != y.shape:
        raise nm.ShapeError(f"score maps {score_maps.shape} != targets {y.shape}")
    p = nm.clamp(score_maps, _P_CLAMP, 1.0 - _P_CLAMP)
    y = y.astype(p.dtype)
    pos = (y == 1.0).astype(p.dtype)
    neg = 1.0 - pos
    pos_term = nm.mul(nm.mul(nm.power(nm.sub(1.0, p), alpha), nm.log(p)), pos)
    neg_weight = neg * (1.0 - y) ** beta
    neg_term = nm.mul(nm.mul(nm.power(p, alpha), nm.log(nm.sub(1.0, p))), neg_weight)
    return nm.neg(nm.tsum(nm.add(pos_term, neg_term), axis=(1, 2)))


def _box_parts(box) -> tuple:
    """(cx, cy, w, h) components from a BBox or a (..., 4) tensor."""
    if isinstance(box, BBox):
        return box.cx, box.cy, box.w, box.h
    box = nm.as_tensor(box)
    if box.shape[-1] != 4:
        raise nm.ShapeError(f"expected a (..., 4) box tensor, got {box.shape}")
    return box[..., 0], box[..., 1], box[..., 2], box[..., 3]


def giou_loss(pred, gt) -> Tensor:
    """1 - GIoU; differentiable in the predicted box fields.

    Scalar for single boxes; elementwise (B,) for (B, 4) inputs.
    """
    pcx, pcy, pw, ph = _box_parts(pred)
    gcx, gcy, gw, gh = _box_parts(gt)
    gt_area = (gw.data if isinstance(gw, Tensor) else np.asarray(gw)) * \
              (gh.data if isinstance(gh, Tensor) else np.asarray(gh))
    if (gt_area <= 0).any():
        raise ValueError("giou_loss: degenerate ground-truth box (zero area)")
    gt_area = Tensor(gt_area)

    def corners(cx, cy, w, h):
        half_w, half_h = nm.mul(w, 0.5), nm.mul(h, 0.5)
        return (nm.sub(cx, half_w), nm.sub(cy, half_h),
                nm.add(cx, half_w), nm.add(cy, half_h))

    px0, py0, px1, py1 = corners(nm.as_tensor(pcx), nm.as_tensor(pcy),
                                 nm.as_tensor(pw), nm.as_tensor(ph))
    gx0, gy0, gx1, gy1 = corners(nm.as_tensor(gcx), nm.as_tensor(gcy),
                                 nm.as_tensor(gw), nm.as_tensor(gh))

    inter_w = nm.maximum(nm.sub(nm.minimum(px1, gx1), nm.maximum(px0, gx0)), 0.0)
    inter_h = nm.maximum(nm.sub(nm.minimum(py1, gy1), nm.maximum(py0, gy0)), 0.0)
    inter = nm.mul(inter_w, inter_h)
    area_p = nm.mul(nm.sub(px1, px0), nm.sub(py1, py0))
    union = nm.sub(nm.add(area_p, gt_area), inter)
    iou = nm.div(inter, union)

    hull_w = nm.sub(nm.maximum(px1, gx1), nm.minimum(px0, gx0))
    hull_h = nm.sub(nm.maximum(py1, gy1), nm.minimum(py0, gy0))
    hull = nm.mul(hull_w, hull_h)
    giou = nm.sub(iou, nm.div(nm.sub(hull, union), hull))
    return nm.sub(1.0, giou)


def l1_loss(pred, gt) -> Tensor:
    """Mean absolute difference over the four box fields.

    Scalar for single boxes; per-sample (B,) for (B, 4) inputs.
    """
    pred_t = nm.as_tensor(pred) if not isinstance(pred, BBox) else Tensor(pred.as_array())
    gt_t = nm.as_tensor(gt) if not isinstance(gt, BBox) else Tensor(gt.as_array())
    return nm.tmean(nm.absolute(nm.sub(pred_t, gt_t)), axis=-1)


def overall_loss(cls, iou, l1, blur, sparsity, weights: LossWeights) -> Tensor:
    """Weighted sum of the five components."""
    for name, value in (("cls", cls), ("iou", iou), ("l1", l1),
                        ("blur", blur), ("sparsity", sparsity)):
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        if not np.isfinite(data).all():
            raise ValueError(f"overall_loss: non-finite {name} component")
    total = nm.add(nm.as_tensor(cls), nm.mul(nm.as_tensor(iou), weights.iou_weight))
    total = nm.add(total, nm.mul(nm.as_tensor(l1), weights.l1_weight))
    total = nm.add(total, nm.mul(nm.as_tensor(blur), weights.blur_weight))
    return nm.add(total, nm.mul(nm.as_tensor(sparsity), weights.sparsity_weight))
