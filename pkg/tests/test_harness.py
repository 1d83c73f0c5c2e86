"""Synthetic data, metrics, sequence I/O, grid, and bench."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eetrack.config import RunConfig, TrackerConfig, TrainConfig
from eetrack.harness.bench import bench, write_bench_csv
from eetrack.harness.grid import (CellSpec, GridData, ablation_grid, build_cells,
                                  cell_run_config, make_grid_data, run_cell)
from eetrack.harness.metrics import (MetricReport, center_error, evaluate, iou,
                                     write_report_csv)
from eetrack.harness.seqio import (SequenceFormatError, load_boxes, load_sequence_dir,
                                   save_boxes, save_sequence)
from eetrack.harness.synth import SequenceSpec, generate_sequence, matched_pair
from eetrack.head import BBox
from eetrack.pipeline.model import init_tracker_params

TINY = TrackerConfig(blocks=3, embed_dim=16, heads=2, patch=8,
                     template_side=16, search_side=32, enforced_blocks=1)


class TestGenerate:
    def test_zero_velocity_keeps_boxes_fixed(self):
        spec = SequenceSpec(frames=6, max_speed=0.0, distractors=0, seed=3)
        seq = generate_sequence(spec)
        first = seq.gt_boxes[0]
        for box in seq.gt_boxes:
            assert (box.cx, box.cy, box.w, box.h) == \
                (first.cx, first.cy, first.w, first.h)

    def test_constant_velocity_advances_exactly(self):
        # no bouncing: the mover advances by its velocity every frame
        spec = SequenceSpec(frames=5, max_speed=2.5, distractors=0, seed=11)
        seq = generate_sequence(spec)
        dx = seq.gt_boxes[1].cx - seq.gt_boxes[0].cx
        dy = seq.gt_boxes[1].cy - seq.gt_boxes[0].cy
        for a, b in zip(seq.gt_boxes[:-1], seq.gt_boxes[1:]):
            assert b.cx - a.cx == pytest.approx(dx, abs=1e-9)
            assert b.cy - a.cy == pytest.approx(dy, abs=1e-9)

    def test_same_seed_bit_identical(self):
        spec = SequenceSpec(frames=4, blur_prob=0.5, seed=21)
        a, b = generate_sequence(spec), generate_sequence(spec)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa, fb)

    def test_boxes_inside_frame(self):
        seq = generate_sequence(SequenceSpec(frames=60, max_speed=4.0, seed=5))
        for box in seq.gt_boxes:
            assert 0 <= box.cx <= seq.spec.frame_size
            assert 0 <= box.cy <= seq.spec.frame_size

    def test_oversized_object_rejected(self):
        with pytest.raises(ValueError):
            generate_sequence(SequenceSpec(frame_size=32, max_size=40))

    def test_matched_pair_shares_content(self):
        clean, blurred = matched_pair(SequenceSpec(frames=5, seed=8))
        assert all(k is None for k in clean.blur_schedule)
        assert any(k is not None for k in blurred.blur_schedule)
        for ca, cb in zip(clean.gt_boxes, blurred.gt_boxes):
            assert (ca.cx, ca.cy, ca.w, ca.h) == (cb.cx, cb.cy, cb.w, cb.h)
        blurred_frames = [i for i, k in enumerate(blurred.blur_schedule) if k]
        clean_frames = [i for i, k in enumerate(blurred.blur_schedule) if not k]
        for i in clean_frames:
            assert np.array_equal(clean.frames[i], blurred.frames[i])
        for i in blurred_frames:
            assert not np.array_equal(clean.frames[i], blurred.frames[i])


class TestMetrics:
    def test_perfect_prediction(self):
        boxes = [BBox(20, 30, 10, 12), BBox(40, 50, 8, 8)]
        report = evaluate(boxes, [dataclasses.replace(b) for b in boxes])
        assert report.precision_at_20 == 1.0
        assert report.success_auc == 1.0

    def test_fixed_displacement_25px(self):
        gt = [BBox(50, 50, 10, 10) for _ in range(4)]
        pred = [BBox(75, 50, 10, 10) for _ in range(4)]
        report = evaluate(pred, gt)
        assert report.precision_at_20 == 0.0
        assert (report.precision_curve[25:] == 1.0).all()
        assert (report.precision_curve[:25] == 0.0).all()

    def test_two_frame_auc_against_brute_force(self):
        gt = [BBox(10, 10, 4, 4), BBox(30, 30, 4, 4)]
        pred = [dataclasses.replace(gt[0]), BBox(50, 50, 4, 4)]  # IoUs 1.0 and 0.0
        report = evaluate(pred, gt)
        thresholds = np.linspace(0, 1, 51)
        brute = np.mean([np.mean([iou(p, g) >= t for p, g in zip(pred, gt)])
                         for t in thresholds])
        assert report.success_auc == pytest.approx(brute, abs=1e-9)
        assert report.success_curve[0] == 1.0
        assert (report.success_curve[1:] == 0.5).all()

    def test_order_equivariance(self):
        rng = np.random.default_rng(0)
        gt = [BBox(*rng.uniform(20, 80, 2), *rng.uniform(5, 15, 2)) for _ in range(8)]
        pred = [BBox(*rng.uniform(20, 80, 2), *rng.uniform(5, 15, 2)) for _ in range(8)]
        perm = rng.permutation(8)
        a = evaluate(pred, gt)
        b = evaluate([pred[i] for i in perm], [gt[i] for i in perm])
        assert np.array_equal(a.precision_curve, b.precision_curve)
        assert np.array_equal(a.success_curve, b.success_curve)

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=20, deadline=None)
    def test_curve_monotonicity_and_bounds(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 12))
        gt = [BBox(*rng.uniform(20, 100, 2), *rng.uniform(4, 20, 2)) for _ in range(n)]
        pred = [BBox(*rng.uniform(20, 100, 2), *rng.uniform(4, 20, 2)) for _ in range(n)]
        report = evaluate(pred, gt)
        assert (np.diff(report.precision_curve) >= 0).all()
        assert (np.diff(report.success_curve) <= 0).all()
        assert report.precision_curve.min() >= 0 and report.precision_curve.max() <= 1
        assert report.precision_at_20 == report.precision_curve[20]

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            evaluate([BBox(1, 1, 1, 1)], [])

    def test_report_csv(self, tmp_path):
        report = evaluate([BBox(10, 10, 5, 5)], [BBox(11, 11, 5, 5)])
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        text = path.read_text()
        assert "precision_at_20" in text and "success_threshold_iou" in text


class TestSeqIO:
    def test_roundtrip(self, tmp_path):
        seq = generate_sequence(SequenceSpec(frames=3, seed=4))
        out = save_sequence(seq, tmp_path / "seq")
        loaded = load_sequence_dir(out)
        assert len(loaded) == 3
        assert loaded.frames[0].shape == seq.frames[0].shape
        # PNG quantization: within half a gray level (plus float32 rounding)
        assert np.abs(loaded.frames[0] - seq.frames[0]).max() <= 0.5 / 255 + 1e-6
        for a, b in zip(loaded.gt_boxes, seq.gt_boxes):
            assert a.cx == pytest.approx(b.cx, abs=1e-3)

    def test_topleft_conversion(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        from PIL import Image
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(d / "0001.png")
        (d / "groundtruth.txt").write_text("10,20,30,40\n")
        loaded = load_sequence_dir(d)
        box = loaded.gt_boxes[0]
        assert (box.cx, box.cy, box.w, box.h) == (25.0, 40.0, 30.0, 40.0)

    def test_missing_gt_line_cites_line_number(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        from PIL import Image
        for i in range(3):
            Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(d / f"{i + 1:04d}.png")
        (d / "groundtruth.txt").write_text("1,1,2,2\n3,3,2,2\n")
        with pytest.raises(SequenceFormatError, match="line 3"):
            load_sequence_dir(d)

    def test_malformed_line_cites_line_number(self, tmp_path):
        d = tmp_path / "seq"
        d.mkdir()
        from PIL import Image
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(d / "0001.png")
        (d / "groundtruth.txt").write_text("1,2,3\n")
        with pytest.raises(SequenceFormatError, match="line 1"):
            load_sequence_dir(d)

    def test_missing_files_rejected(self, tmp_path):
        d = tmp_path / "empty"
        d.mkdir()
        with pytest.raises(SequenceFormatError, match="no image files"):
            load_sequence_dir(d)

    def test_box_file_roundtrip(self, tmp_path):
        boxes = [BBox(10.5, 20.25, 5.0, 6.0), BBox(11.0, 21.0, 5.5, 6.5)]
        path = tmp_path / "boxes.txt"
        save_boxes(boxes, path)
        loaded = load_boxes(path)
        for a, b in zip(loaded, boxes):
            assert a.cx == pytest.approx(b.cx, abs=1e-3)


def small_grid_data():
    return GridData(
        train=[generate_sequence(SequenceSpec(frames=8, frame_size=64, min_size=10,
                                              max_size=16, distractors=0, seed=i))
               for i in range(2)],
        test_clean=[generate_sequence(SequenceSpec(frames=6, frame_size=64, min_size=10,
                                                   max_size=16, distractors=0, seed=50))],
        test_blurred=[generate_sequence(SequenceSpec(frames=6, frame_size=64, min_size=10,
                                                     max_size=16, distractors=0,
                                                     blur_prob=1.0, seed=50))],
    )


def small_base() -> RunConfig:
    return RunConfig(model=TINY, train=TrainConfig(steps=2, batch_size=2,
                                                   warmup_full_depth_steps=1, seed=0))


class TestGrid:
    def test_single_cell_runs(self):
        rows = ablation_grid([CellSpec(name="solo", seed=0)], small_base(),
                             small_grid_data())
        assert len(rows) == 1
        row = rows[0]
        assert row["error"] == ""
        assert 0.0 <= row["precision_at_20"] <= 1.0
        assert row["wall_seconds"] > 0

    def test_deem_off_reports_full_depth(self):
        row = run_cell(CellSpec(name="nodeem", deem=False, seed=0), small_base(),
                       small_grid_data())
        assert row["mean_exit_layer"] == TINY.blocks

    def test_cell_rerun_reproduces_row(self):
        cell = CellSpec(name="repro", seed=1)
        a = run_cell(cell, small_base(), small_grid_data())
        b = run_cell(cell, small_base(), small_grid_data())
        for key in ("precision_at_20", "success_auc", "mean_exit_layer", "mean_flops"):
            assert a[key] == b[key]

    def test_failing_cell_recorded_not_raised(self):
        bad = CellSpec(name="bad", n_enf=99, seed=0)  # invalid depth
        rows = ablation_grid([bad, CellSpec(name="good", seed=0)], small_base(),
                             small_grid_data())
        assert rows[0]["error"] != ""
        assert rows[1]["error"] == ""

    def test_parallel_matches_serial(self):
        cells = [CellSpec(name=f"c{i}", seed=i) for i in range(2)]
        serial = ablation_grid(cells, small_base(), small_grid_data(), workers=1)
        parallel = ablation_grid(cells, small_base(), small_grid_data(), workers=2)
        for a, b in zip(serial, parallel):
            assert a["precision_at_20"] == b["precision_at_20"]

    def test_build_cells_shapes(self):
        comp = build_cells("components", None, seeds=[0, 1])
        assert len(comp) == 8
        assert {(c.mbrv, c.deem) for c in comp} == \
            {(False, False), (True, False), (False, True), (True, True)}
        sweep = build_cells("nenf", [1, 2, 3], seeds=[0])
        assert [c.n_enf for c in sweep] == [1, 2, 3]
        with pytest.raises(ValueError):
            build_cells("nope", None, seeds=[0])
        with pytest.raises(ValueError):
            build_cells("rho", None, seeds=[0])

    def test_cell_config_mapping(self):
        base = small_base()
        cfg = cell_run_config(base, CellSpec(name="x", mbrv=False, deem=False,
                                             gamma=5.0, tau=0.25, n_enf=2, seed=3))
        assert cfg.weights.blur_weight == 0.0
        assert cfg.weights.sparsity_weight == 5.0
        assert cfg.model.sparsity_target == 0.25
        assert cfg.model.enforced_blocks == 2
        assert cfg.train.seed == 3
        assert not cfg.train.use_exit


class TestBench:
    def test_bench_structure_and_ratios(self, tmp_path):
        from eetrack.pipeline import flops as flops_mod
        cfg = TrackerConfig()  # desk geometry: block cost dominates
        params = init_tracker_params(cfg, seed=0)
        seq = generate_sequence(SequenceSpec(frames=4, frame_size=128, seed=9))
        report = bench(params, cfg, seq.frames, seq.gt_boxes[0], repeats=1)
        assert report.median_ms_exit > 0 and report.median_ms_full > 0
        assert report.mean_flops_exit <= report.mean_flops_full + 100
        # flops ratio tracks the block-count ratio up to the fixed
        # embed+head share (~8% of full cost at this geometry)
        assert report.flops_ratio == pytest.approx(report.block_ratio, rel=0.10)
        fixed = flops_mod.embed_macs(cfg) + flops_mod.head_macs(cfg)
        bound = fixed / report.mean_flops_full
        assert abs(report.flops_ratio - report.block_ratio) <= bound
        out = tmp_path / "bench.csv"
        write_bench_csv(report, out)
        text = out.read_text().splitlines()
        assert text[0].startswith("median_ms_exit")
        assert any(row.startswith("frame,mode") for row in text)

    def test_forced_full_depth_rows_report_full(self):
        params = init_tracker_params(TINY, seed=1)
        seq = generate_sequence(SequenceSpec(frames=4, frame_size=64, min_size=10,
                                             max_size=16, distractors=0, seed=10))
        report = bench(params, TINY, seq.frames, seq.gt_boxes[0], repeats=1)
        full_rows = [r for r in report.rows if r.mode == "full"]
        assert all(r.diag.exit_layer == TINY.blocks for r in full_rows)
        assert report.mean_blocks_full == TINY.blocks
