"""FastAPI service wrapping the tracker: batch jobs plus live sessions.

File paths in requests refer to the server's filesystem; this is a
single-host tool, typically driven by the bundled CLI either in-process or
against ``eetrack serve`` on localhost.  Tracking sessions hold a loaded
checkpoint and a fixed template; concurrent sessions share parameters
read-only.
"""

from __future__ import annotations

import base64
import io
import threading
import uuid
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image

from .. import __version__
from ..config import RunConfig, load_run_config, parse_kv_text, run_config_from_mapping
from ..harness.bench import bench as run_bench
from ..harness.bench import write_bench_csv
from ..harness.grid import run_grid_spec
from ..harness.metrics import evaluate, plot_curves, write_report_csv
from ..harness.seqio import (SequenceFormatError, load_boxes, load_sequence_dir,
                             save_boxes, save_sequence)
from ..harness.synth import SequenceSpec, generate_sequence, matched_pair
from ..head import BBox
from ..numerics import CheckpointError, ParamStore, load_params
from ..pipeline.track import TrackState, run_tracker, track_frame, track_init
from ..pipeline.train import run_training
from . import schemas as sc

app = FastAPI(title="eetrack service", version=__version__)


@dataclass
class _Session:
    state: TrackState
    params: ParamStore
    config: RunConfig
    use_exit: bool
    frames_processed: int = 0


_sessions: dict[str, _Session] = {}
_sessions_lock = threading.Lock()


def _fail(status: int, exc: Exception) -> HTTPException:
    return HTTPException(status_code=status, detail=f"{type(exc).__name__}: {exc}")


def _resolve_config(config_path: str | None, overrides: dict[str, str]) -> RunConfig:
    try:
        cfg = load_run_config(config_path) if config_path else RunConfig()
        if overrides:
            base = {}
            for section, obj in (("model", cfg.model), ("weights", cfg.weights),
                                 ("train", cfg.train)):
                for key, value in vars(obj).items():
                    if isinstance(value, tuple):
                        value = ",".join(str(v) for v in value)
                    base[f"{section}.{key}"] = str(value)
            base.update(overrides)
            cfg = run_config_from_mapping(base)
        return cfg
    except (OSError, ValueError) as exc:
        raise _fail(400, exc)


def _load_checkpoint(path: str) -> ParamStore:
    try:
        return load_params(path)
    except (OSError, CheckpointError) as exc:
        raise _fail(400, exc)


def _decode_frame(png_b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(png_b64)
        img = Image.open(io.BytesIO(raw)).convert("RGB")
    except Exception as exc:
        raise _fail(400, exc)
    return np.asarray(img, dtype=np.float64) / 255.0


@app.get("/health", response_model=sc.HealthResponse)
def health() -> sc.HealthResponse:
    return sc.HealthResponse(status="ok", version=__version__)


@app.post("/data/generate", response_model=sc.GenerateDataResponse)
def generate_data(req: sc.GenerateDataRequest) -> sc.GenerateDataResponse:
    try:
        mapping = parse_kv_text(Path(req.spec_path).read_text())
    except (OSError, ValueError) as exc:
        raise _fail(400, exc)
    count = int(mapping.pop("sequences", 8))
    pair_mode = mapping.pop("matched_pairs", "false").lower() in ("1", "true", "yes", "on")
    seed0 = int(mapping.pop("seed", 0))
    try:
        base = SequenceSpec(**{k: _coerce_spec_value(k, v) for k, v in mapping.items()})
    except (TypeError, ValueError) as exc:
        raise _fail(400, exc)

    out_dir = Path(req.out_dir)
    written: list[str] = []
    for i in range(count):
        spec = replace(base, seed=seed0 + i,
                       object_kind="rect" if i % 2 == 0 else "disc")
        if pair_mode:
            clean, blurred = matched_pair(spec)
            written.append(str(save_sequence(clean, out_dir / f"seq_{i:03d}_clean")))
            written.append(str(save_sequence(blurred, out_dir / f"seq_{i:03d}_blur")))
        else:
            written.append(str(save_sequence(generate_sequence(spec),
                                             out_dir / f"seq_{i:03d}")))
    return sc.GenerateDataResponse(out_dir=str(out_dir), sequences=written,
                                   frames_per_sequence=base.frames)


def _coerce_spec_value(key: str, raw: str):
    if key in ("object_kind",):
        return raw
    if key in ("blur_lengths",):
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if key in ("frames", "frame_size", "min_size", "max_size", "distractors", "seed"):
        return int(raw)
    return float(raw)


@app.post("/train", response_model=sc.TrainResponse)
def train(req: sc.TrainRequest) -> sc.TrainResponse:
    cfg = _resolve_config(req.config_path, req.overrides)
    data_dir = Path(req.data_dir)
    try:
        seq_dirs = sorted(p for p in data_dir.iterdir() if p.is_dir())
        sequences = [load_sequence_dir(p) for p in seq_dirs]
    except (OSError, SequenceFormatError) as exc:
        raise _fail(400, exc)
    if not sequences:
        raise HTTPException(status_code=400, detail=f"no sequence directories in {data_dir}")
    result = run_training(cfg, sequences, out_dir=req.out_dir, progress=req.progress)
    last = result.history[-1]
    return sc.TrainResponse(checkpoint=str(result.checkpoint_path),
                            loss_csv=str(result.loss_csv_path),
                            steps=len(result.history), final_loss=last.total,
                            final_cls=last.cls, mean_exit_layer=last.mean_exit_layer)


@app.post("/track", response_model=sc.TrackResponse)
def track(req: sc.TrackRequest) -> sc.TrackResponse:
    cfg = _resolve_config(req.config_path, req.overrides)
    params = _load_checkpoint(req.checkpoint)
    try:
        seq = load_sequence_dir(req.sequence_dir)
    except (OSError, SequenceFormatError) as exc:
        raise _fail(400, exc)
    run = run_tracker(params, cfg.model, seq.frames, seq.gt_boxes[0],
                      use_exit=req.use_exit)
    save_boxes(run.boxes, req.out_file)
    report = evaluate(run.boxes, seq.gt_boxes)
    return sc.TrackResponse(out_file=req.out_file, n_frames=len(run.boxes),
                            mean_exit_layer=run.mean_exit_layer,
                            mean_flops=run.mean_flops,
                            precision_at_20=report.precision_at_20,
                            success_auc=report.success_auc)


@app.post("/evaluate", response_model=sc.EvaluateResponse)
def evaluate_endpoint(req: sc.EvaluateRequest) -> sc.EvaluateResponse:
    try:
        preds = load_boxes(req.pred_file)
        gt_path = Path(req.gt_file)
        if gt_path.is_dir():
            gts = load_sequence_dir(gt_path).gt_boxes
        else:
            gts = _load_gt_file(gt_path)
        report = evaluate(preds, gts)
    except (OSError, ValueError) as exc:
        raise _fail(400, exc)
    write_report_csv(report, req.report_file)
    plots: list[str] = []
    if req.plot:
        prefix = Path(req.report_file).with_suffix("")
        plots = [str(p) for p in plot_curves(report, prefix)]
    return sc.EvaluateResponse(report_file=req.report_file, n_frames=report.n_frames,
                               precision_at_20=report.precision_at_20,
                               success_auc=report.success_auc, plots=plots)


def _load_gt_file(path: Path) -> list[BBox]:
    from ..harness.seqio import _parse_gt_line
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    return [_parse_gt_line(ln, i + 1) for i, ln in enumerate(lines)]


@app.post("/bench", response_model=sc.BenchResponse)
def bench(req: sc.BenchRequest) -> sc.BenchResponse:
    cfg = _resolve_config(req.config_path, req.overrides)
    params = _load_checkpoint(req.checkpoint)
    try:
        seq = load_sequence_dir(req.sequence_dir)
    except (OSError, SequenceFormatError) as exc:
        raise _fail(400, exc)
    report = run_bench(params, cfg.model, seq.frames, seq.gt_boxes[0],
                       repeats=req.repeats)
    if req.out_file:
        write_bench_csv(report, req.out_file)
    return sc.BenchResponse(out_file=req.out_file, **report.summary())


@app.post("/grid", response_model=sc.GridResponse)
def grid(req: sc.GridRequest) -> sc.GridResponse:
    try:
        mapping = parse_kv_text(Path(req.spec_path).read_text())
        table, rows = run_grid_spec(mapping, req.out_dir)
    except (OSError, ValueError) as exc:
        raise _fail(400, exc)
    failed = sum(1 for r in rows if r.get("error"))
    return sc.GridResponse(table_csv=str(table), cells=len(rows), failed_cells=failed)


@app.post("/sessions", response_model=sc.SessionInitResponse)
def session_init(req: sc.SessionInitRequest) -> sc.SessionInitResponse:
    cfg = _resolve_config(req.config_path, req.overrides)
    params = _load_checkpoint(req.checkpoint)
    frame = _decode_frame(req.frame_png_b64)
    box = BBox(cx=req.box.cx, cy=req.box.cy, w=req.box.w, h=req.box.h)
    try:
        state = track_init(frame, box, cfg.model)
    except ValueError as exc:
        raise _fail(400, exc)
    session_id = uuid.uuid4().hex
    with _sessions_lock:
        _sessions[session_id] = _Session(state=state, params=params, config=cfg,
                                         use_exit=req.use_exit)
    return sc.SessionInitResponse(session_id=session_id)


def _get_session(session_id: str) -> _Session:
    with _sessions_lock:
        session = _sessions.get(session_id)
    if session is None:
        raise HTTPException(status_code=404, detail=f"no session {session_id}")
    return session


@app.post("/sessions/{session_id}/track", response_model=sc.SessionFrameResponse)
def session_track(session_id: str, req: sc.SessionFrameRequest) -> sc.SessionFrameResponse:
    session = _get_session(session_id)
    frame = _decode_frame(req.frame_png_b64)
    box, diag = track_frame(session.state, frame, session.params,
                            session.config.model, use_exit=session.use_exit)
    session.frames_processed += 1
    return sc.SessionFrameResponse(
        box=sc.Box(cx=box.cx, cy=box.cy, w=box.w, h=box.h),
        exit_layer=diag.exit_layer, exited_early=diag.exited_early,
        flops=diag.flops, peak_score=diag.peak_score)


@app.delete("/sessions/{session_id}", response_model=sc.SessionCloseResponse)
def session_close(session_id: str) -> sc.SessionCloseResponse:
    with _sessions_lock:
        session = _sessions.pop(session_id, None)
    if session is None:
        raise HTTPException(status_code=404, detail=f"no session {session_id}")
    return sc.SessionCloseResponse(session_id=session_id,
                                   frames_processed=session.frames_processed)
