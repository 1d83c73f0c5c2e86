"""Latency and cost benchmarking: early exit against forced full depth."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import TrackerConfig
from ..head import BBox
from ..numerics import ParamStore
from ..pipeline.track import FrameDiag, track_frame, track_init

BENCH_CSV_HEADER = ["frame", "mode", "exit_layer", "blocks_executed",
                    "flops_estimate", "measured_macs", "wall_ms", "scores"]


@dataclass
class BenchRow:
    frame: int
    mode: str                 # "exit" or "full"
    diag: FrameDiag
    wall_ms: float

    def csv_row(self) -> list:
        return [self.frame, self.mode, self.diag.exit_layer,
                self.diag.blocks_executed, self.diag.flops,
                self.diag.measured_macs, f"{self.wall_ms:.4f}",
                ";".join(f"{s:.6f}" for s in self.diag.scores)]


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    median_ms_exit: float = 0.0
    median_ms_full: float = 0.0
    mean_flops_exit: float = 0.0
    mean_flops_full: float = 0.0
    mean_blocks_exit: float = 0.0
    mean_blocks_full: float = 0.0

    @property
    def speedup(self) -> float:
        return self.median_ms_full / self.median_ms_exit if self.median_ms_exit else 0.0

    @property
    def flops_ratio(self) -> float:
        return self.mean_flops_exit / self.mean_flops_full if self.mean_flops_full else 0.0

    @property
    def block_ratio(self) -> float:
        return self.mean_blocks_exit / self.mean_blocks_full if self.mean_blocks_full else 0.0

    def summary(self) -> dict:
        return {
            "median_ms_exit": self.median_ms_exit,
            "median_ms_full": self.median_ms_full,
            "speedup": self.speedup,
            "mean_flops_exit": self.mean_flops_exit,
            "mean_flops_full": self.mean_flops_full,
            "flops_ratio": self.flops_ratio,
            "block_ratio": self.block_ratio,
        }


def _timed_pass(params: ParamStore, cfg: TrackerConfig, frames, init_box: BBox,
                use_exit: bool, mode: str, rows: list[BenchRow]) -> tuple[list, list, list]:
    state = track_init(frames[0], init_box, cfg)
    times, flops, blocks = [], [], []
    for i, frame in enumerate(frames[1:], start=1):
        t0 = time.perf_counter()
        _, diag = track_frame(state, frame, params, cfg, use_exit=use_exit)
        ms = (time.perf_counter() - t0) * 1e3
        rows.append(BenchRow(frame=i, mode=mode, diag=diag, wall_ms=ms))
        times.append(ms)
        flops.append(diag.flops)
        blocks.append(diag.blocks_executed)
    return times, flops, blocks


def bench(params: ParamStore, cfg: TrackerConfig, frames: list[np.ndarray],
          init_box: BBox, repeats: int = 3) -> BenchReport:
    """Median per-frame wall time with and without early exit."""
    report = BenchReport()
    t_exit, t_full, f_exit, f_full, b_exit, b_full = [], [], [], [], [], []
    for _ in range(max(1, repeats)):
        times, flops, blocks = _timed_pass(params, cfg, frames, init_box,
                                           True, "exit", report.rows)
        t_exit += times; f_exit += flops; b_exit += blocks
        times, flops, blocks = _timed_pass(params, cfg, frames, init_box,
                                           False, "full", report.rows)
        t_full += times; f_full += flops; b_full += blocks
    report.median_ms_exit = float(np.median(t_exit))
    report.median_ms_full = float(np.median(t_full))
    report.mean_flops_exit = float(np.mean(f_exit))
    report.mean_flops_full = float(np.mean(f_full))
    report.mean_blocks_exit = float(np.mean(b_exit))
    report.mean_blocks_full = float(np.mean(b_full))
    return report


def write_bench_csv(report: BenchReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for key, value in report.summary().items():
            writer.writerow([key, value])
        writer.writerow([])
        writer.writerow(BENCH_CSV_HEADER)
        for row in report.rows:
            writer.writerow(row.csv_row())
