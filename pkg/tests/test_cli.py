"""CLI thin client, driven end to end in-process."""

import json

import pytest

from eetrack.cli import build_parser, main

TINY_SETS = [
    "--set", "model.blocks=3", "--set", "model.embed_dim=16",
    "--set", "model.heads=2", "--set", "model.template_side=16",
    "--set", "model.search_side=32", "--set", "model.enforced_blocks=1",
    "--set", "train.steps=2", "--set", "train.batch_size=2",
    "--set", "train.warmup_full_depth_steps=1",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "data.cfg").write_text(
        "sequences=2\nframes=6\nframe_size=64\nmin_size=10\nmax_size=16\n"
        "distractors=0\nseed=3\n")
    main(["gen-data", "--spec", str(root / "data.cfg"), "--out", str(root / "data")])
    return root


def run_json(capsys, argv) -> dict:
    main(argv)
    return json.loads(capsys.readouterr().out)


class TestCommands:
    def test_gen_data_wrote_sequences(self, workspace):
        dirs = sorted(p for p in (workspace / "data").iterdir() if p.is_dir())
        assert len(dirs) == 2

    def test_train_track_eval_bench(self, workspace, capsys):
        out = run_json(capsys, ["train", "--data", str(workspace / "data"),
                                "--out", str(workspace / "run"), *TINY_SETS])
        assert out["steps"] == 2
        ckpt = out["checkpoint"]

        seq = sorted(p for p in (workspace / "data").iterdir() if p.is_dir())[0]
        out = run_json(capsys, ["track", "--ckpt", ckpt, "--seq", str(seq),
                                "--out", str(workspace / "boxes.txt"), *TINY_SETS])
        assert out["n_frames"] == 6

        out = run_json(capsys, ["eval", "--pred", str(workspace / "boxes.txt"),
                                "--gt", str(seq),
                                "--report", str(workspace / "report.csv")])
        assert 0.0 <= out["precision_at_20"] <= 1.0

        out = run_json(capsys, ["bench", "--ckpt", ckpt, "--seq", str(seq),
                                "--repeats", "1", *TINY_SETS])
        assert out["mean_flops_exit"] <= out["mean_flops_full"] + 100

    def test_grid_command(self, workspace, capsys):
        spec = workspace / "grid.cfg"
        spec.write_text(
            "kind=rho\nvalues=0,0.0001\nseeds=0\nsteps=2\ntrain_sequences=2\n"
            "test_sequences=1\nframes=6\nmodel.blocks=3\nmodel.embed_dim=16\n"
            "model.heads=2\nmodel.template_side=16\nmodel.search_side=32\n"
            "model.enforced_blocks=1\ntrain.batch_size=2\n"
            "train.warmup_full_depth_steps=1\n")
        out = run_json(capsys, ["grid", "--spec", str(spec),
                                "--out", str(workspace / "grid_out")])
        assert out["cells"] == 2
        assert (workspace / "grid_out" / "grid.csv").exists()

    def test_track_full_depth_flag(self, workspace, capsys):
        ckpt = str(workspace / "run" / "checkpoint.bdtk")
        seq = sorted(p for p in (workspace / "data").iterdir() if p.is_dir())[0]
        out = run_json(capsys, ["track", "--ckpt", ckpt, "--seq", str(seq),
                                "--out", str(workspace / "boxes2.txt"),
                                "--full-depth", *TINY_SETS])
        assert out["mean_exit_layer"] == 3.0


class TestParser:
    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_bad_override_rejected(self, workspace):
        with pytest.raises(SystemExit):
            main(["train", "--data", str(workspace / "data"),
                  "--out", str(workspace / "x"), "--set", "oops"])

    def test_error_paths_exit_nonzero(self, workspace, capsys):
        with pytest.raises(SystemExit) as err:
            main(["track", "--ckpt", "/missing.bdtk", "--seq", str(workspace / "data"),
                  "--out", "/tmp/never.txt"])
        assert err.value.code == 1
        assert "error 400" in capsys.readouterr().err
