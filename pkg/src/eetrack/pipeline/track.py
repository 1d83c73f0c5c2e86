"""Frame-by-frame inference: template fixed at init, search crop follows
the previous prediction, window-penalized decode, early exit live."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..backbone import search_slice
from ..config import TrackerConfig
from ..head import BBox, decode_box_windowed, hanning_window, head_forward
from ..numerics import ParamStore, count_macs, no_grad
from .crops import (SEARCH_CONTEXT, TEMPLATE_CONTEXT, box_to_frame_coords,
                    clamp_box, context_side, crop_square)
from .flops import flops_estimate
from .model import forward_inference

# Size-state smoothing: blend the decoded extent into the running box and
# bound the per-frame scale change, so one bad frame cannot run away with
# the crop size.
SIZE_UPDATE_RATE = 0.5
MAX_SCALE_STEP = 1.35


@dataclass
class TrackState:
    template_crop: np.ndarray      # fixed for the whole sequence
    current_box: BBox              # frame pixels
    window: np.ndarray             # center penalty at grid extent


@dataclass
class FrameDiag:
    exit_layer: int
    exited_early: bool
    scores: list[float]
    blocks_executed: int
    flops: float
    measured_macs: int
    peak_score: float


def track_init(frame: np.ndarray, box: BBox, cfg: TrackerConfig) -> TrackState:
    """Fix the template crop from the first frame and its box."""
    if box.w <= 0 or box.h <= 0:
        raise ValueError("track_init needs a box with positive extent")
    crop, *_ = crop_square(frame, (box.cx, box.cy),
                           context_side(box, TEMPLATE_CONTEXT), cfg.template_side)
    return TrackState(template_crop=crop,
                      current_box=clamp_box(box, frame.shape[1], frame.shape[0]),
                      window=hanning_window(cfg.grid))


def track_frame(state: TrackState, frame: np.ndarray, params: ParamStore,
                cfg: TrackerConfig, use_exit: bool = True) -> tuple[BBox, FrameDiag]:
    """Predict the box on one frame and advance the state."""
    prev = state.current_box
    search_crop, x0, y0, side = crop_square(
        frame, (prev.cx, prev.cy), context_side(prev, SEARCH_CONTEXT), cfg.search_side)

    with no_grad(), count_macs() as macs:
        seq, trace = forward_inference(params, state.template_crop, search_crop,
                                       cfg, use_exit=use_exit)
        out = head_forward(params, search_slice(seq), cfg)
    box_norm, peak = decode_box_windowed(out, state.window)

    raw = box_to_frame_coords(box_norm, x0, y0, side)
    w = (1.0 - SIZE_UPDATE_RATE) * prev.w + SIZE_UPDATE_RATE * raw.w
    h = (1.0 - SIZE_UPDATE_RATE) * prev.h + SIZE_UPDATE_RATE * raw.h
    w = float(np.clip(w, prev.w / MAX_SCALE_STEP, prev.w * MAX_SCALE_STEP))
    h = float(np.clip(h, prev.h / MAX_SCALE_STEP, prev.h * MAX_SCALE_STEP))
    box_frame = clamp_box(BBox(cx=raw.cx, cy=raw.cy, w=w, h=h),
                          frame.shape[1], frame.shape[0])
    state.current_box = box_frame
    diag = FrameDiag(
        exit_layer=trace.exit_layer,
        exited_early=trace.exited_early,
        scores=trace.score_values,
        blocks_executed=trace.exit_layer,
        flops=flops_estimate(cfg, trace.exit_layer,
                             examined_gates=len(trace.scores)),
        measured_macs=macs.total,
        peak_score=peak,
    )
    return box_frame, diag


@dataclass
class TrackRun:
    boxes: list[BBox] = field(default_factory=list)
    diags: list[FrameDiag] = field(default_factory=list)

    @property
    def mean_exit_layer(self) -> float:
        return float(np.mean([d.exit_layer for d in self.diags])) if self.diags else 0.0

    @property
    def mean_flops(self) -> float:
        return float(np.mean([d.flops for d in self.diags])) if self.diags else 0.0

    @property
    def mean_measured_macs(self) -> float:
        return float(np.mean([d.measured_macs for d in self.diags])) if self.diags else 0.0


def run_tracker(params: ParamStore, cfg: TrackerConfig, frames: list[np.ndarray],
                init_box: BBox, use_exit: bool = True) -> TrackRun:
    """Track a whole sequence from its first-frame box (kept as frame 0's
    prediction, the usual one-pass protocol)."""
    state = track_init(frames[0], init_box, cfg)
    run = TrackRun()
    run.boxes.append(init_box)
    for frame in frames[1:]:
        box, diag = track_frame(state, frame, params, cfg, use_exit=use_exit)
        run.boxes.append(box)
        run.diags.append(diag)
    return run
