"""Ablation grid: component on/off table and weight/depth sweeps.

Each cell trains a fresh model on shared synthetic data and evaluates it
on a shared blurred test set, reporting precision@20, success AUC, mean
exit depth, mean cost, and wall-clock.  Cells are independent and may run
in parallel processes; a failing cell is recorded and the grid continues.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..backbone import template_slice
from ..blur import BlurPolicy, apply_blur, sample_blur
from ..config import RunConfig, run_config_from_mapping
from ..head import BBox
from ..numerics import ParamStore
from ..pipeline.crops import TEMPLATE_CONTEXT, context_side, crop_square
from ..pipeline.model import forward_training
from ..pipeline.track import run_tracker
from ..pipeline.train import run_training
from .metrics import MetricReport, evaluate
from .synth import SequenceSpec, SyntheticSequence, generate_sequence, matched_pair

GRID_KINDS = ("components", "rho", "gamma", "nenf")


@dataclass
class CellSpec:
    name: str
    mbrv: bool = True
    deem: bool = True
    rho: float | None = None        # None = keep the base weight
    gamma: float | None = None
    tau: float | None = None
    n_enf: int | None = None
    seed: int = 0
    steps: int | None = None


@dataclass
class GridData:
    train: list[SyntheticSequence]
    test_clean: list[SyntheticSequence]
    test_blurred: list[SyntheticSequence]


def make_grid_data(n_train: int = 10, n_test: int = 4, frames: int = 40,
                   data_seed: int = 1234, frame_size: int = 128,
                   distractors: int = 1) -> GridData:
    """Shared train set (clean) and matched clean/blurred test twins."""
    train = [generate_sequence(SequenceSpec(frames=frames, frame_size=frame_size,
                                            distractors=distractors,
                                            object_kind="rect" if i % 2 == 0 else "disc",
                                            seed=data_seed + i))
             for i in range(n_train)]
    test_clean, test_blurred = [], []
    for i in range(n_test):
        spec = SequenceSpec(frames=frames, frame_size=frame_size,
                            distractors=distractors,
                            object_kind="rect" if i % 2 == 0 else "disc",
                            seed=data_seed + 10_000 + i)
        clean, blurred = matched_pair(spec)
        test_clean.append(clean)
        test_blurred.append(blurred)
    return GridData(train=train, test_clean=test_clean, test_blurred=test_blurred)


def cell_run_config(base: RunConfig, cell: CellSpec) -> RunConfig:
    model = replace(base.model,
                    **({"enforced_blocks": cell.n_enf} if cell.n_enf is not None else {}),
                    **({"sparsity_target": cell.tau} if cell.tau is not None else {}))
    weights = replace(base.weights,
                      blur_weight=(cell.rho if cell.rho is not None
                                   else base.weights.blur_weight) if cell.mbrv else 0.0,
                      sparsity_weight=(cell.gamma if cell.gamma is not None
                                       else base.weights.sparsity_weight))
    train = replace(base.train, seed=cell.seed, use_exit=cell.deem,
                    **({"steps": cell.steps} if cell.steps is not None else {}))
    return RunConfig(model=model, weights=weights, train=train)


def evaluate_on_sequences(params: ParamStore, cfg, sequences: list,
                          use_exit: bool = True) -> MetricReport:
    """Track every sequence and pool all frames into one report."""
    preds: list[BBox] = []
    gts: list[BBox] = []
    exit_layers: list[int] = []
    flops: list[float] = []
    for seq in sequences:
        run = run_tracker(params, cfg, seq.frames, seq.gt_boxes[0], use_exit=use_exit)
        preds.extend(run.boxes)
        gts.extend(seq.gt_boxes)
        exit_layers.extend(d.exit_layer for d in run.diags)
        flops.extend(d.flops for d in run.diags)
    return evaluate(preds, gts,
                    mean_exit_layer=float(np.mean(exit_layers)) if exit_layers else float("nan"),
                    mean_flops=float(np.mean(flops)) if flops else float("nan"))


def template_blur_mse(params: ParamStore, cfg, sequences: list,
                      lengths: tuple[int, ...] = (3, 5, 7), seed: int = 7,
                      max_templates: int = 6) -> float:
    """Mean per-element squared gap between final-layer template features of
    clean and blurred template crops (lower = more blur-invariant)."""
    rng = np.random.default_rng(seed)
    policy = BlurPolicy(lengths=lengths, apply_prob=1.0)
    gaps = []
    for seq in sequences[:max_templates]:
        box = seq.gt_boxes[0]
        frame = seq.frames[0]
        template, *_ = crop_square(frame, (box.cx, box.cy),
                                   context_side(box, TEMPLATE_CONTEXT), cfg.template_side)
        mid = len(seq.frames) // 2
        sbox = seq.gt_boxes[mid]
        search, *_ = crop_square(seq.frames[mid], (sbox.cx, sbox.cy),
                                 context_side(sbox, 4.0), cfg.search_side)
        blurred = apply_blur(template, sample_blur(rng, policy))
        clean_feats = template_slice(
            forward_training(params, template, search, cfg, force_full=True).layers[cfg.blocks])
        blur_feats = template_slice(
            forward_training(params, blurred, search, cfg, force_full=True).layers[cfg.blocks])
        gaps.append(float(np.mean((clean_feats.data - blur_feats.data) ** 2)))
    return float(np.mean(gaps))


def run_cell(cell: CellSpec, base: RunConfig, data: GridData,
             measure_blur_mse: bool = False) -> dict:
    """Train + evaluate one grid cell; returns a flat result row."""
    t0 = time.perf_counter()
    run_cfg = cell_run_config(base, cell)
    result = run_training(run_cfg, data.train)
    report = evaluate_on_sequences(result.params, run_cfg.model, data.test_blurred,
                                   use_exit=run_cfg.train.use_exit)
    row = {
        "name": cell.name,
        "mbrv": int(cell.mbrv),
        "deem": int(cell.deem),
        "rho": run_cfg.weights.blur_weight,
        "gamma": run_cfg.weights.sparsity_weight,
        "tau": run_cfg.model.sparsity_target,
        "n_enf": run_cfg.model.enforced_blocks,
        "seed": cell.seed,
        "precision_at_20": report.precision_at_20,
        "success_auc": report.success_auc,
        "mean_exit_layer": report.mean_exit_layer,
        "mean_flops": report.mean_flops,
        "wall_seconds": time.perf_counter() - t0,
        "error": "",
    }
    if measure_blur_mse:
        row["template_blur_mse"] = template_blur_mse(result.params, run_cfg.model,
                                                     data.test_clean)
    return row


def _run_cell_task(args) -> dict:
    cell, base, data, measure = args
    try:
        return run_cell(cell, base, data, measure_blur_mse=measure)
    except Exception as exc:  # cell failures must not kill the grid
        return {"name": cell.name, "seed": cell.seed, "error": f"{type(exc).__name__}: {exc}"}


def ablation_grid(cells: list[CellSpec], base: RunConfig, data: GridData,
                  workers: int = 1, measure_blur_mse: bool = False) -> list[dict]:
    tasks = [(cell, base, data, measure_blur_mse) for cell in cells]
    if workers <= 1:
        return [_run_cell_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell_task, tasks))


def build_cells(kind: str, values: list[float] | None, seeds: list[int],
                steps: int | None = None) -> list[CellSpec]:
    """Cell lists mirroring the component table and the three sweeps."""
    if kind not in GRID_KINDS:
        raise ValueError(f"grid kind must be one of {GRID_KINDS}, got {kind!r}")
    cells: list[CellSpec] = []
    if kind == "components":
        combos = [("base", False, False), ("mbrv", True, False),
                  ("deem", False, True), ("mbrv+deem", True, True)]
        for name, mbrv, deem in combos:
            for seed in seeds:
                cells.append(CellSpec(name=f"{name}/s{seed}", mbrv=mbrv, deem=deem,
                                      seed=seed, steps=steps))
        return cells
    if not values:
        raise ValueError(f"grid kind {kind!r} needs a values list")
    for value in values:
        for seed in seeds:
            cell = CellSpec(name=f"{kind}={value}/s{seed}", seed=seed, steps=steps)
            if kind == "rho":
                cell.rho = float(value)
            elif kind == "gamma":
                cell.gamma = float(value)
            else:
                cell.n_enf = int(value)
            cells.append(cell)
    return cells


_GRID_KEYS = {"kind", "values", "seeds", "steps", "workers", "train_sequences",
              "test_sequences", "frames", "data_seed", "measure_blur_mse"}


def parse_grid_spec(mapping: dict[str, str]) -> dict:
    """Split a flat grid spec into grid settings and run-config overrides."""
    grid: dict = {"kind": "components", "values": None, "seeds": [0, 1, 2],
                  "steps": None, "workers": 1, "train_sequences": 10,
                  "test_sequences": 4, "frames": 40, "data_seed": 1234,
                  "measure_blur_mse": False}
    overrides: dict[str, str] = {}
    for key, raw in mapping.items():
        if key in _GRID_KEYS:
            if key == "kind":
                grid["kind"] = raw.strip()
            elif key == "values":
                grid["values"] = [float(v) for v in raw.replace(",", " ").split()]
            elif key == "seeds":
                grid["seeds"] = [int(v) for v in raw.replace(",", " ").split()]
            elif key == "measure_blur_mse":
                grid["measure_blur_mse"] = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                grid[key] = int(raw)
        else:
            overrides[key] = raw
    grid["base"] = run_config_from_mapping(overrides)
    return grid


def run_grid_spec(mapping: dict[str, str], out_dir) -> tuple[Path, list[dict]]:
    """Full grid run from a parsed spec file; writes grid.csv."""
    settings = parse_grid_spec(mapping)
    data = make_grid_data(n_train=settings["train_sequences"],
                          n_test=settings["test_sequences"],
                          frames=settings["frames"],
                          data_seed=settings["data_seed"])
    cells = build_cells(settings["kind"], settings["values"], settings["seeds"],
                        steps=settings["steps"])
    rows = ablation_grid(cells, settings["base"], data,
                         workers=settings["workers"],
                         measure_blur_mse=settings["measure_blur_mse"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "grid.csv"
    write_grid_csv(rows, table)
    return table, rows


def write_grid_csv(rows: list[dict], path) -> None:
    keys: list[str] = []
    for row in rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
