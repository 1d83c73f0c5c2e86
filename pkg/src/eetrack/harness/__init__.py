"""Synthetic data, metrics, ablation grid, and benchmarking."""

from .bench import BenchReport, BenchRow, bench, write_bench_csv
from .grid import (
    CellSpec,
    GridData,
    ablation_grid,
    build_cells,
    cell_run_config,
    evaluate_on_sequences,
    make_grid_data,
    parse_grid_spec,
    run_cell,
    run_grid_spec,
    template_blur_mse,
    write_grid_csv,
)
from .metrics import MetricReport, center_error, evaluate, iou, plot_curves, write_report_csv
from .seqio import (
    LoadedSequence,
    SequenceFormatError,
    load_boxes,
    load_sequence_dir,
    save_boxes,
    save_sequence,
)
from .synth import SequenceSpec, SyntheticSequence, generate_sequence, matched_pair

__all__ = [
    "BenchReport", "BenchRow", "CellSpec", "GridData", "LoadedSequence",
    "MetricReport", "SequenceFormatError", "SequenceSpec", "SyntheticSequence",
    "ablation_grid", "bench", "build_cells", "cell_run_config", "center_error",
    "evaluate", "evaluate_on_sequences", "generate_sequence", "iou",
    "load_boxes", "load_sequence_dir", "make_grid_data", "matched_pair",
    "parse_grid_spec", "plot_curves", "run_cell", "run_grid_spec",
    "save_boxes", "save_sequence", "template_blur_mse", "write_bench_csv",
    "write_grid_csv", "write_report_csv",
]
