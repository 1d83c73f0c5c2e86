"""Orchestration: training loop, optimizer, inference protocol, cost model."""

from .crops import box_to_crop_coords, box_to_frame_coords, clamp_box, crop_square, resize_bilinear
from .flops import block_macs, embed_macs, flops_estimate, gate_macs, head_macs
from .model import forward_inference, forward_training, init_tracker_params
from .optim import AdamW
from .track import FrameDiag, TrackRun, TrackState, run_tracker, track_frame, track_init
from .train import (
    LOSS_CSV_HEADER,
    StepReport,
    TrainResult,
    TrainSample,
    TrainingDiverged,
    make_train_sample,
    run_training,
    train_step,
)

__all__ = [
    "AdamW", "FrameDiag", "LOSS_CSV_HEADER", "StepReport", "TrackRun",
    "TrackState", "TrainResult", "TrainSample", "TrainingDiverged",
    "block_macs", "box_to_crop_coords", "box_to_frame_coords", "clamp_box",
    "crop_square", "embed_macs", "flops_estimate", "forward_inference",
    "forward_training", "gate_macs", "head_macs", "init_tracker_params",
    "make_train_sample", "resize_bilinear", "run_tracker", "run_training",
    "track_frame", "track_init", "train_step",
]
