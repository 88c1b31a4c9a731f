import numpy as np
import pytest

from groupflow.cli import main
from groupflow.data import gen_moving_shapes
from groupflow.flow_io import write_flo, write_image

TINY = [
    "model.feat_dim=64", "model.ctx_hidden_dim=48", "model.ctx_input_dim=48",
    "model.enc_embed_dim=64", "model.enc_blocks=2", "model.enc_heads=2",
    "model.motion_dim=64", "model.temporal_dim=64", "model.spatial_dim=64",
    "model.corr_levels=3", "model.corr_radius=3", "model.gru_kernel=5",
    "model.iterations=2",
]


def tiny_args(extra):
    args = []
    for o in TINY + extra:
        args += ["--override", o]
    return args


def make_frames_dir(tmp_path, n=4, size=32, seed=0):
    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    sample = next(gen_moving_shapes(seed, 1, size=size, frames_per_sample=n, max_disp=6))
    for k in range(n):
        write_image(frames_dir / f"frame_{k:04d}.png", sample.frames[k])
    return frames_dir


class TestTrain:
    def test_short_run_writes_artifacts(self, tmp_path):
        out = tmp_path / "run"
        rc = main(["train", "--out", str(out)] + tiny_args(
            ["train.steps=2", "train.batch_size=1", "train.frame_size=32",
             "train.iterations=1", "train.max_disp=6", "train.val_interval=2",
             "train.val_samples=1", "train.log_interval=1"]))
        assert rc == 0
        assert (out / "config_effective.cfg").exists()
        assert (out / "checkpoint.npz").exists()
        assert (out / "metrics.log").read_text().count("step=") >= 2

    def test_missing_config_file_fails_with_path(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)])
        assert rc == 1
        assert "missing.cfg" in capsys.readouterr().err

    def test_same_seed_same_logs(self, tmp_path):
        extra = ["train.steps=2", "train.batch_size=1", "train.frame_size=32",
                 "train.iterations=1", "train.max_disp=6", "train.val_interval=2",
                 "train.val_samples=1", "train.log_interval=1", "train.seed=5"]
        main(["train", "--out", str(tmp_path / "a")] + tiny_args(extra))
        main(["train", "--out", str(tmp_path / "b")] + tiny_args(extra))
        assert (tmp_path / "a/metrics.log").read_text() == (tmp_path / "b/metrics.log").read_text()


class TestInfer:
    def test_writes_one_flow_per_pair(self, tmp_path):
        frames_dir = make_frames_dir(tmp_path, n=5)
        out = tmp_path / "out"
        rc = main(["infer", "--frames", str(frames_dir), "--out", str(out),
                   "--deterministic"] + tiny_args([]))
        assert rc == 0
        flo_files = sorted(out.glob("flow_*.flo"))
        assert [f.name for f in flo_files] == [f"flow_{k:06d}.flo" for k in range(4)]
        assert (out / "config_effective.cfg").exists()

    def test_viz_flag_adds_pngs(self, tmp_path):
        frames_dir = make_frames_dir(tmp_path, n=3)
        out = tmp_path / "out"
        main(["infer", "--frames", str(frames_dir), "--out", str(out), "--viz",
              "--deterministic"] + tiny_args([]))
        assert len(list(out.glob("flow_*.png"))) == 2

    def test_pipelines_agree_at_zero_init(self, tmp_path):
        frames_dir = make_frames_dir(tmp_path, n=5)
        extra = tiny_args(["model.cross_frame_attn=false"])
        out_sim = tmp_path / "sim"
        out_rec = tmp_path / "rec"
        main(["infer", "--frames", str(frames_dir), "--out", str(out_sim),
              "--pipeline", "sim", "--deterministic", "--seed", "3"] + extra)
        main(["infer", "--frames", str(frames_dir), "--out", str(out_rec),
              "--pipeline", "recursive", "--deterministic", "--seed", "3"] + extra)
        for k in range(4):
            a = (out_sim / f"flow_{k:06d}.flo").read_bytes()
            b = (out_rec / f"flow_{k:06d}.flo").read_bytes()
            assert a == b

    def test_too_few_frames_fails(self, tmp_path, capsys):
        frames_dir = tmp_path / "frames"
        frames_dir.mkdir()
        sample = next(gen_moving_shapes(0, 1, size=32, frames_per_sample=2, max_disp=6))
        write_image(frames_dir / "frame_0000.png", sample.frames[0])
        rc = main(["infer", "--frames", str(frames_dir), "--out", str(tmp_path / "o")]
                  + tiny_args([]))
        assert rc == 1
        assert "at least 2 frames" in capsys.readouterr().err

    def test_mismatched_frame_sizes_fail(self, tmp_path, capsys):
        frames_dir = tmp_path / "frames"
        frames_dir.mkdir()
        write_image(frames_dir / "a.png", np.zeros((32, 32, 3)))
        write_image(frames_dir / "b.png", np.zeros((40, 32, 3)))
        rc = main(["infer", "--frames", str(frames_dir), "--out", str(tmp_path / "o")]
                  + tiny_args([]))
        assert rc == 1
        assert "shape" in capsys.readouterr().err


class TestEval:
    def _write_flows(self, directory, flows):
        directory.mkdir(parents=True, exist_ok=True)
        for k, f in enumerate(flows):
            write_flo(directory / f"flow_{k:06d}.flo", f)

    def test_identical_dirs_give_zero(self, tmp_path, capsys):
        flows = [np.random.RandomState(k).randn(8, 8, 2).astype(np.float32) for k in range(3)]
        self._write_flows(tmp_path / "pred", flows)
        self._write_flows(tmp_path / "gt", flows)
        rc = main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
                   "--out", str(tmp_path / "out")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "aggregate epe_all=0.0000 fl_all=0.0000" in out
        assert (tmp_path / "out/eval_report.txt").exists()

    def test_aggregate_is_pixel_weighted(self, tmp_path, capsys):
        gt1 = np.zeros((4, 4, 2), dtype=np.float32)
        gt2 = np.zeros((8, 8, 2), dtype=np.float32)
        pred1 = gt1 + np.float32(1.0)   # epe sqrt(2)
        pred2 = gt2.copy()              # epe 0
        self._write_flows(tmp_path / "pred", [pred1, pred2])
        self._write_flows(tmp_path / "gt", [gt1, gt2])
        rc = main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
                   "--out", str(tmp_path / "out")])
        assert rc == 0
        expected = np.sqrt(2) * 16 / (16 + 64)
        out = capsys.readouterr().out
        agg_line = [l for l in out.splitlines() if l.startswith("aggregate")][0]
        epe_all = float(agg_line.split("epe_all=")[1].split()[0])
        assert epe_all == pytest.approx(expected, abs=1e-4)

    def test_masks_add_region_split(self, tmp_path, capsys):
        gt = np.zeros((8, 8, 2), dtype=np.float32)
        pred = gt.copy()
        pred[:4] = 3.0
        self._write_flows(tmp_path / "pred", [pred])
        self._write_flows(tmp_path / "gt", [gt])
        masks = tmp_path / "masks"
        masks.mkdir()
        occ = np.zeros((8, 8), dtype=np.uint8)
        occ[:4] = 255
        write_image(masks / "flow_000000.png", np.stack([occ] * 3, axis=-1) / 255.0)
        rc = main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
                   "--masks", str(masks), "--out", str(tmp_path / "out")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "epe_matched=0.0000" in out
        assert "epe_unmatched=4.2426" in out  # 3*sqrt(2)

    def test_missing_ground_truth_lists_file(self, tmp_path, capsys):
        self._write_flows(tmp_path / "pred", [np.zeros((4, 4, 2), dtype=np.float32)])
        (tmp_path / "gt").mkdir()
        rc = main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"),
                   "--out", str(tmp_path / "out")])
        assert rc == 1
        assert "flow_000000" in capsys.readouterr().err


class TestBench:
    def test_report_counts_and_summary(self, tmp_path, capsys):
        rc = main(["bench", "--num-frames", "6", "--group-size", "3", "--runs", "2",
                   "--out", str(tmp_path)] + tiny_args(
                       ["train.frame_size=32", "train.deterministic=true"]))
        assert rc == 0
        out = capsys.readouterr().out
        assert "mode=sim" in out and "mode=recursive" in out
        sim_lines = [l for l in out.splitlines() if l.startswith("mode=sim")]
        assert "encoder_calls=6" in sim_lines[0]
        rec_lines = [l for l in out.splitlines() if l.startswith("mode=recursive")]
        assert "encoder_calls=12" in rec_lines[0]
        assert "wall_mean=" in out and "wall_std=" in out
        assert (tmp_path / "bench_report.txt").exists()
