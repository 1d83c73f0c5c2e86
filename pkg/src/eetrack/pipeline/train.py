"""Training step and loop: clean pair with exit resolution, blurred pair at
full depth, the five-term objective, and CSV/run artifacts.

The default step stacks the whole batch (clean rows first, blurred rows
after) through one batched forward and resolves each sample's exit layer
from the recorded gate scores; a per-sample reference path implements the
same contract one sample at a time for cross-checking.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import numerics as nm
from ..backbone import full_forward_many, search_slice, template_slice
from ..blur import BlurKernel, BlurPolicy, apply_blur, blur_loss, sample_blur
from ..config import LossWeights, RunConfig, TrackerConfig
from ..deem import exit_scores_many, resolve_exit_batch, sparsity_loss
from ..head import BBox, box_tensor_at_cell, box_tensors_at_cells, head_forward, head_forward_many
from ..losses import (TrainTarget, focal_loss, focal_loss_many, giou_loss, l1_loss,
                      make_target, overall_loss)
from ..numerics import ParamStore, Tensor, save_params
from .crops import SEARCH_CONTEXT, TEMPLATE_CONTEXT, box_to_crop_coords, context_side, crop_square
from .model import forward_training, init_tracker_params
from .optim import AdamW


class TrainingDiverged(RuntimeError):
    """A step produced a non-finite loss; carries the component values."""


@dataclass
class TrainSample:
    template: np.ndarray
    search: np.ndarray
    target: TrainTarget
    blur_kernel: BlurKernel


@dataclass
class StepReport:
    step: int
    cls: float
    iou: float
    l1: float
    blur: float
    sparsity: float
    total: float
    mean_exit_layer: float

    def row(self) -> list:
        return [self.step, self.cls, self.iou, self.l1, self.blur,
                self.sparsity, self.total, self.mean_exit_layer]


LOSS_CSV_HEADER = ["step", "cls", "iou", "l1", "blur", "sparsity", "total", "mean_exit_layer"]


def train_step(batch: list[TrainSample], params: ParamStore, cfg: TrackerConfig,
               weights: LossWeights, optimizer: AdamW, step: int,
               force_full_depth: bool = False, use_exit: bool = True,
               per_sample: bool = False) -> StepReport:
    """One optimizer update over a batch; returns averaged components."""
    if not batch:
        raise ValueError("train_step needs a nonempty batch")
    if per_sample:
        return _train_step_per_sample(batch, params, cfg, weights, optimizer, step,
                                      force_full_depth, use_exit)
    n = len(batch)
    use_blur = weights.blur_weight > 0
    templates = [s.template for s in batch]
    searches = [s.search for s in batch]
    if use_blur:
        templates = templates + [apply_blur(s.template, s.blur_kernel) for s in batch]
        searches = searches + searches[:n]
    layers = full_forward_many(params, templates, searches, cfg)
    kz = cfg.template_tokens

    if use_exit:
        gate_tensors = [exit_scores_many(params, layers[layer - 1], layer, cfg, count=n)
                        for layer in range(cfg.enforced_blocks + 1, cfg.blocks + 1)]
        score_mat = nm.concat([nm.reshape(s, (1, n)) for s in gate_tensors], axis=0)
        exit_layers, counts = resolve_exit_batch(score_mat.data, cfg,
                                                 force_full=force_full_depth)
        dt = score_mat.dtype
        mask = (np.arange(score_mat.shape[0])[:, None] < counts[None, :]).astype(dt)
        means = nm.div(nm.tsum(nm.mul(score_mat, mask), axis=0), counts.astype(dt))
        spar_b = nm.square(nm.sub(means, cfg.sparsity_target))
    else:
        exit_layers = np.full(n, cfg.blocks, dtype=int)
        spar_b = Tensor(np.zeros(n, dtype=layers[0].dtype))

    search_tok = nm.concat([layers[int(exit_layers[b])][b:b + 1, kz:, :]
                            for b in range(n)], axis=0)
    out = head_forward_many(params, search_tok, cfg)
    cls_b = focal_loss_many(out.score, [s.target for s in batch])
    rows = np.array([s.target.positive_cell[0] for s in batch])
    cols = np.array([s.target.positive_cell[1] for s in batch])
    pred = box_tensors_at_cells(out, rows, cols)
    gt = np.stack([s.target.gt_box.as_array() for s in batch]).astype(pred.dtype)
    iou_b = giou_loss(pred, Tensor(gt))
    l1_b = l1_loss(pred, Tensor(gt))

    if use_blur:
        final = layers[cfg.blocks]
        diff = nm.sub(final[:n, :kz, :], final[n:, :kz, :])
        blur_b = nm.tsum(nm.square(diff), axis=(1, 2))
    else:
        blur_b = Tensor(np.zeros(n, dtype=layers[0].dtype))

    total_b = nm.add(cls_b, nm.mul(iou_b, weights.iou_weight))
    total_b = nm.add(total_b, nm.mul(l1_b, weights.l1_weight))
    total_b = nm.add(total_b, nm.mul(blur_b, weights.blur_weight))
    total_b = nm.add(total_b, nm.mul(spar_b, weights.sparsity_weight))
    batch_loss = nm.tmean(total_b)
    if not np.isfinite(batch_loss.data).all():
        raise TrainingDiverged(
            f"step {step}: non-finite loss "
            f"(cls {cls_b.data.mean()}, iou {iou_b.data.mean()}, l1 {l1_b.data.mean()}, "
            f"blur {blur_b.data.mean()}, sparsity {spar_b.data.mean()})")
    optimizer.zero_grad()
    batch_loss.backward()
    optimizer.step()

    return StepReport(step=step, cls=float(cls_b.data.mean()),
                      iou=float(iou_b.data.mean()), l1=float(l1_b.data.mean()),
                      blur=float(blur_b.data.mean()), sparsity=float(spar_b.data.mean()),
                      total=batch_loss.item(),
                      mean_exit_layer=float(np.mean(exit_layers)))


def _train_step_per_sample(batch, params, cfg, weights, optimizer, step,
                           force_full_depth, use_exit) -> StepReport:
    """Reference implementation: one sample at a time, same semantics."""
    totals = []
    comps = np.zeros(5)
    exit_layers = []
    for sample in batch:
        fwd = forward_training(params, sample.template, sample.search, cfg,
                               force_full=force_full_depth or not use_exit)
        exit_layer = fwd.trace.exit_layer
        exit_layers.append(exit_layer)

        out = head_forward(params, search_slice(fwd.layers[exit_layer]), cfg)
        cls = focal_loss(out.score, sample.target)
        row, col = sample.target.positive_cell
        pred_box = box_tensor_at_cell(out, row, col)
        iou = giou_loss(pred_box, sample.target.gt_box)
        l1 = l1_loss(pred_box, sample.target.gt_box)

        if weights.blur_weight > 0:
            blurred_template = apply_blur(sample.template, sample.blur_kernel)
            blurred_layers = forward_training(params, blurred_template, sample.search,
                                              cfg, force_full=True).layers
            blur = blur_loss(template_slice(fwd.layers[cfg.blocks]),
                             template_slice(blurred_layers[cfg.blocks]))
        else:
            blur = 0.0

        spar = sparsity_loss(fwd.trace, cfg.sparsity_target) if use_exit else 0.0
        total = overall_loss(cls, iou, l1, blur, spar, weights)
        totals.append(total)
        comps += [cls.item(), iou.item(), l1.item(),
                  blur.item() if isinstance(blur, nm.Tensor) else blur,
                  spar.item() if isinstance(spar, nm.Tensor) else spar]

    batch_loss = nm.mul(nm.tsum(nm.stack_scalars(totals)), 1.0 / len(batch))
    if not np.isfinite(batch_loss.data).all():
        raise TrainingDiverged(f"step {step}: non-finite loss, components {comps / len(batch)}")
    optimizer.zero_grad()
    batch_loss.backward()
    optimizer.step()

    comps /= len(batch)
    return StepReport(step=step, cls=comps[0], iou=comps[1], l1=comps[2],
                      blur=comps[3], sparsity=comps[4], total=batch_loss.item(),
                      mean_exit_layer=float(np.mean(exit_layers)))


def make_train_sample(frames: list[np.ndarray], boxes: list[BBox],
                      rng: np.random.Generator, cfg: TrackerConfig,
                      policy: BlurPolicy, max_gap: int = 12) -> TrainSample:
    """Template/search pair from two nearby frames of one sequence.

    The search crop center is jittered around the target so localization
    must actually be learned; the jitter keeps the box inside the crop.
    """
    n = len(frames)
    i = int(rng.integers(0, n))
    j = int(np.clip(i + rng.integers(-max_gap, max_gap + 1), 0, n - 1))
    tmpl_box, search_box = boxes[i], boxes[j]

    tmpl_crop, *_ = crop_square(frames[i], (tmpl_box.cx, tmpl_box.cy),
                                context_side(tmpl_box, TEMPLATE_CONTEXT),
                                cfg.template_side)

    # wide scale jitter: the size branch must read relative extent off the
    # crop instead of memorizing the nominal context ratio
    side = context_side(search_box, SEARCH_CONTEXT) * rng.uniform(0.7, 1.4)
    max_shift = max(0.0, side / 2.0 - max(search_box.w, search_box.h) / 2.0 - 1.0)
    shift = rng.uniform(-0.25, 0.25, size=2) * side
    shift = np.clip(shift, -max_shift, max_shift)
    center = (search_box.cx + shift[0], search_box.cy + shift[1])
    search_crop, x0, y0, crop_side = crop_square(frames[j], center, side, cfg.search_side)

    gt_norm = box_to_crop_coords(search_box, x0, y0, crop_side)
    target = make_target(gt_norm, cfg.grid)
    return TrainSample(template=tmpl_crop, search=search_crop, target=target,
                       blur_kernel=sample_blur(rng, policy))


@dataclass
class TrainResult:
    params: ParamStore
    history: list[StepReport] = field(default_factory=list)
    checkpoint_path: Path | None = None
    loss_csv_path: Path | None = None


def run_training(run_cfg: RunConfig, sequences: list, out_dir=None,
                 params: ParamStore | None = None,
                 progress: bool = False) -> TrainResult:
    """Train from scratch on in-memory sequences (frames + pixel boxes).

    ``sequences`` items must expose ``.frames`` and ``.gt_boxes``.  Writes
    the per-step loss CSV and final checkpoint when ``out_dir`` is given.
    """
    cfg, weights, tc = run_cfg.model, run_cfg.weights, run_cfg.train
    dtype = np.float32 if tc.dtype == "float32" else np.float64
    rng = np.random.default_rng(tc.seed)
    if params is None:
        params = init_tracker_params(cfg, seed=tc.seed, dtype=dtype)
    optimizer = AdamW(params, lr=tc.learning_rate, betas=(tc.beta1, tc.beta2),
                      eps=tc.adam_eps, weight_decay=tc.weight_decay)
    policy = BlurPolicy(lengths=tc.blur_lengths, apply_prob=tc.blur_prob)

    history: list[StepReport] = []
    for step in range(tc.steps):
        batch = []
        for _ in range(tc.batch_size):
            seq = sequences[int(rng.integers(0, len(sequences)))]
            batch.append(make_train_sample(seq.frames, seq.gt_boxes, rng, cfg, policy))
        report = train_step(batch, params, cfg, weights, optimizer, step,
                            force_full_depth=step < tc.warmup_full_depth_steps,
                            use_exit=tc.use_exit)
        history.append(report)
        if progress and (step % tc.log_every == 0 or step == tc.steps - 1):
            print(f"step {step:4d}  loss {report.total:10.4f}  "
                  f"cls {report.cls:7.4f}  exit {report.mean_exit_layer:.2f}")

    result = TrainResult(params=params, history=history)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint_path = out_dir / "checkpoint.bdtk"
        save_params(params, result.checkpoint_path)
        result.loss_csv_path = out_dir / "losses.csv"
        with open(result.loss_csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOSS_CSV_HEADER)
            for report in history:
                writer.writerow(report.row())
    return result
