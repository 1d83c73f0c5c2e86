"""Service surface: every endpoint exercised in-process."""

import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from eetrack.service.app import app

TINY_OVERRIDES = {
    "model.blocks": "3", "model.embed_dim": "16", "model.heads": "2",
    "model.patch": "8", "model.template_side": "16", "model.search_side": "32",
    "model.enforced_blocks": "1",
    "train.steps": "2", "train.batch_size": "2",
    "train.warmup_full_depth_steps": "1", "train.seed": "0",
}


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


@pytest.fixture(scope="module")
def data_dir(client, tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    spec = root / "data.cfg"
    spec.write_text("sequences=2\nframes=6\nframe_size=64\nmin_size=10\n"
                    "max_size=16\ndistractors=0\nseed=5\n")
    out = root / "data"
    resp = client.post("/data/generate", json={"spec_path": str(spec),
                                               "out_dir": str(out)})
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["frames_per_sequence"] == 6
    assert len(body["sequences"]) == 2
    return out


@pytest.fixture(scope="module")
def trained(client, data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    resp = client.post("/train", json={"data_dir": str(data_dir),
                                       "out_dir": str(out),
                                       "overrides": TINY_OVERRIDES})
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["steps"] == 2
    return body


class TestHealth:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"


class TestDataGeneration:
    def test_sequences_written(self, data_dir):
        seq_dirs = sorted(p for p in data_dir.iterdir() if p.is_dir())
        assert len(seq_dirs) == 2
        assert (seq_dirs[0] / "groundtruth.txt").exists()
        assert len(list(seq_dirs[0].glob("*.png"))) == 6

    def test_matched_pairs_mode(self, client, tmp_path_factory):
        root = tmp_path_factory.mktemp("pairs")
        spec = root / "data.cfg"
        spec.write_text("sequences=1\nframes=4\nframe_size=64\nmin_size=10\n"
                        "max_size=16\nmatched_pairs=true\nblur_prob=1.0\nseed=2\n")
        resp = client.post("/data/generate", json={"spec_path": str(spec),
                                                   "out_dir": str(root / "out")})
        assert resp.status_code == 200
        names = [p.split("/")[-1] for p in resp.json()["sequences"]]
        assert names == ["seq_000_clean", "seq_000_blur"]

    def test_bad_spec_is_400(self, client, tmp_path_factory):
        root = tmp_path_factory.mktemp("bad")
        spec = root / "data.cfg"
        spec.write_text("frames=not_a_number\n")
        resp = client.post("/data/generate", json={"spec_path": str(spec),
                                                   "out_dir": str(root / "o")})
        assert resp.status_code == 400


class TestTrainTrackEval:
    def test_train_artifacts(self, trained):
        assert trained["checkpoint"].endswith("checkpoint.bdtk")
        assert trained["final_loss"] == trained["final_loss"]  # finite

    def test_track_and_eval(self, client, trained, data_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("trk")
        seq_dir = sorted(p for p in data_dir.iterdir() if p.is_dir())[0]
        boxes = out / "boxes.txt"
        resp = client.post("/track", json={"checkpoint": trained["checkpoint"],
                                           "sequence_dir": str(seq_dir),
                                           "out_file": str(boxes),
                                           "overrides": TINY_OVERRIDES})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert body["n_frames"] == 6
        assert boxes.exists()

        report = out / "report.csv"
        resp = client.post("/evaluate", json={"pred_file": str(boxes),
                                              "gt_file": str(seq_dir),
                                              "report_file": str(report),
                                              "plot": True})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert 0.0 <= body["precision_at_20"] <= 1.0
        assert report.exists()
        assert len(body["plots"]) == 2

    def test_track_full_depth_flag(self, client, trained, data_dir, tmp_path_factory):
        out = tmp_path_factory.mktemp("trkf")
        seq_dir = sorted(p for p in data_dir.iterdir() if p.is_dir())[0]
        resp = client.post("/track", json={"checkpoint": trained["checkpoint"],
                                           "sequence_dir": str(seq_dir),
                                           "out_file": str(out / "b.txt"),
                                           "overrides": TINY_OVERRIDES,
                                           "use_exit": False})
        assert resp.json()["mean_exit_layer"] == 3.0

    def test_missing_checkpoint_is_400(self, client, data_dir):
        seq_dir = sorted(p for p in data_dir.iterdir() if p.is_dir())[0]
        resp = client.post("/track", json={"checkpoint": "/nope.bdtk",
                                           "sequence_dir": str(seq_dir),
                                           "out_file": "/tmp/x.txt"})
        assert resp.status_code == 400

    def test_bench(self, client, trained, data_dir, tmp_path_factory):
        seq_dir = sorted(p for p in data_dir.iterdir() if p.is_dir())[0]
        out = tmp_path_factory.mktemp("bench") / "bench.csv"
        resp = client.post("/bench", json={"checkpoint": trained["checkpoint"],
                                           "sequence_dir": str(seq_dir),
                                           "repeats": 1, "out_file": str(out),
                                           "overrides": TINY_OVERRIDES})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        # when nothing exits early, the exit pass pays only the tiny gate cost
        assert body["mean_flops_exit"] <= body["mean_flops_full"] + 100
        assert out.exists()


class TestGridEndpoint:
    def test_small_grid(self, client, tmp_path_factory):
        root = tmp_path_factory.mktemp("grid")
        spec = root / "grid.cfg"
        spec.write_text(
            "kind=components\nseeds=0\nsteps=2\ntrain_sequences=2\n"
            "test_sequences=1\nframes=6\n"
            + "".join(f"{k}={v}\n" for k, v in TINY_OVERRIDES.items()))
        resp = client.post("/grid", json={"spec_path": str(spec),
                                          "out_dir": str(root / "out")})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert body["cells"] == 4
        assert body["failed_cells"] == 0
        table = (root / "out" / "grid.csv").read_text().splitlines()
        assert table[0].startswith("name,")
        assert len(table) == 5


def frame_b64(frame: np.ndarray) -> str:
    img = Image.fromarray(np.clip(frame * 255, 0, 255).astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


class TestSessions:
    def test_session_lifecycle(self, client, trained, data_dir):
        from eetrack.harness.seqio import load_sequence_dir
        seq = load_sequence_dir(sorted(p for p in data_dir.iterdir() if p.is_dir())[0])
        init_box = seq.gt_boxes[0]
        resp = client.post("/sessions", json={
            "checkpoint": trained["checkpoint"],
            "frame_png_b64": frame_b64(seq.frames[0]),
            "box": {"cx": init_box.cx, "cy": init_box.cy,
                    "w": init_box.w, "h": init_box.h},
            "overrides": TINY_OVERRIDES})
        assert resp.status_code == 200, resp.text
        sid = resp.json()["session_id"]

        for frame in seq.frames[1:3]:
            resp = client.post(f"/sessions/{sid}/track",
                               json={"frame_png_b64": frame_b64(frame)})
            assert resp.status_code == 200
            body = resp.json()
            assert 1 <= body["exit_layer"] <= 3
            assert body["box"]["w"] > 0

        resp = client.delete(f"/sessions/{sid}")
        assert resp.json()["frames_processed"] == 2
        assert client.delete(f"/sessions/{sid}").status_code == 404

    def test_unknown_session_404(self, client):
        resp = client.post("/sessions/abc/track", json={"frame_png_b64": "AA=="})
        assert resp.status_code == 404

    def test_bad_frame_is_400(self, client, trained):
        resp = client.post("/sessions", json={
            "checkpoint": trained["checkpoint"],
            "frame_png_b64": "definitely-not-png",
            "box": {"cx": 5, "cy": 5, "w": 3, "h": 3},
            "overrides": TINY_OVERRIDES})
        assert resp.status_code == 400
