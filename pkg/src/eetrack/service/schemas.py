"""Pydantic request/response models for the tracking service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class Box(BaseModel):
    cx: float
    cy: float
    w: float
    h: float


class GenerateDataRequest(BaseModel):
    spec_path: str = Field(description="flat key=value data spec on the server")
    out_dir: str


class GenerateDataResponse(BaseModel):
    out_dir: str
    sequences: list[str]
    frames_per_sequence: int


class TrainRequest(BaseModel):
    config_path: str | None = None
    data_dir: str
    out_dir: str
    overrides: dict[str, str] = Field(default_factory=dict)
    progress: bool = False


class TrainResponse(BaseModel):
    checkpoint: str
    loss_csv: str
    steps: int
    final_loss: float
    final_cls: float
    mean_exit_layer: float


class TrackRequest(BaseModel):
    checkpoint: str
    sequence_dir: str
    out_file: str
    config_path: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)
    use_exit: bool = True


class TrackResponse(BaseModel):
    out_file: str
    n_frames: int
    mean_exit_layer: float
    mean_flops: float
    precision_at_20: float | None = None
    success_auc: float | None = None


class EvaluateRequest(BaseModel):
    pred_file: str
    gt_file: str             # sequence dir or raw groundtruth.txt
    report_file: str
    plot: bool = False


class EvaluateResponse(BaseModel):
    report_file: str
    n_frames: int
    precision_at_20: float
    success_auc: float
    plots: list[str] = Field(default_factory=list)


class BenchRequest(BaseModel):
    checkpoint: str
    sequence_dir: str
    repeats: int = 3
    out_file: str | None = None
    config_path: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)


class BenchResponse(BaseModel):
    median_ms_exit: float
    median_ms_full: float
    speedup: float
    mean_flops_exit: float
    mean_flops_full: float
    flops_ratio: float
    block_ratio: float
    out_file: str | None = None


class GridRequest(BaseModel):
    spec_path: str
    out_dir: str


class GridResponse(BaseModel):
    table_csv: str
    cells: int
    failed_cells: int


class SessionInitRequest(BaseModel):
    checkpoint: str
    frame_png_b64: str = Field(description="base64-encoded PNG of the first frame")
    box: Box
    config_path: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)
    use_exit: bool = True


class SessionInitResponse(BaseModel):
    session_id: str


class SessionFrameRequest(BaseModel):
    frame_png_b64: str


class SessionFrameResponse(BaseModel):
    box: Box
    exit_layer: int
    exited_early: bool
    flops: float
    peak_score: float


class SessionCloseResponse(BaseModel):
    session_id: str
    frames_processed: int
