"""End-to-end acceptance suite: one test per criterion, each printing a PASS
line with the measured quantity (run with -v and -s for the full listing).

The two training criteria share one module-scoped fixture that trains the full
tiny model and the two-frame ablation under identical budgets.
"""

import time

import numpy as np
import pytest
import torch

from groupflow.config import ModelConfig, TrainConfig
from groupflow.correlation import build_pyramid, build_volume
from groupflow.data import gen_moving_shapes
from groupflow.encoder import FrameEncoder
from groupflow.flow_io import read_flo, read_kitti_png, write_flo, write_kitti_png
from groupflow.metrics import aggregate_reports, build_report, epe, fl_all, region_epe
from groupflow.model import MultiFrameFlowNet
from groupflow.pipeline import recursive_baseline, run_video, schedule
from groupflow.training import (grad_check, load_checkpoint, sequence_loss,
                                set_deterministic, train)

from test_metrics import epe_loop, fl_loop


def test_criterion_01_correlation_oracle_equivalence():
    """Volumes match a four-nested-loop oracle; pyramid levels match windowed means."""
    start = time.time()
    rng = np.random.default_rng(0)
    worst_rel = 0.0
    for trial in range(20):
        # integer-valued features keep every partial sum exactly representable,
        # so the comparison is bitwise despite gemm reassociation
        f1 = torch.from_numpy(rng.integers(-8, 9, (1, 16, 8, 8)).astype(np.float64))
        f2 = torch.from_numpy(rng.integers(-8, 9, (1, 16, 8, 8)).astype(np.float64))
        vol = build_volume(f1, f2)
        for i in range(8):
            for j in range(8):
                row = f1[0, :, i, j].numpy()
                for m in range(8):
                    for n in range(8):
                        assert vol[0, i, j, m, n].item() == float(row @ f2[0, :, m, n].numpy())
        # gaussian features: reassociation only, tiny relative error
        g1 = torch.randn(1, 16, 8, 8, dtype=torch.float64)
        g2 = torch.randn(1, 16, 8, 8, dtype=torch.float64)
        gvol = build_volume(g1, g2)
        i, j, m, n = rng.integers(0, 8, 4)
        want = torch.dot(g1[0, :, i, j], g2[0, :, m, n]).item()
        assert abs(gvol[0, i, j, m, n].item() - want) <= 1e-12 * max(1.0, abs(want))

        pyr = build_pyramid(vol, 4)
        level0 = vol
        for lvl in range(4):
            k = 2 ** lvl
            got = pyr.levels[lvl].reshape(1, 8, 8, 8 // k, 8 // k)
            for m in range(8 // k):
                for n in range(8 // k):
                    want = level0[..., k * m:k * (m + 1), k * n:k * (n + 1)].mean(dim=(-2, -1))
                    denom = want.abs().clamp(min=1e-30)
                    worst_rel = max(worst_rel, ((got[..., m, n] - want).abs() / denom).max().item())
        assert worst_rel < 1e-5
    elapsed = time.time() - start
    assert elapsed < 10.0
    print(f"PASS criterion 1: volumes exact, pyramid rel err {worst_rel:.2e}, {elapsed:.1f}s")


def test_criterion_02_encoder_parameter_parity():
    """Parameter count never depends on the number of frames integrated."""
    count = lambda m: sum(p.numel() for p in m.parameters())
    enc = FrameEncoder(128, embed_dim=128, blocks=4, heads=4, cross_frame=True)
    n_before = count(enc)
    with torch.no_grad():
        enc(torch.rand(1, 3, 3, 64, 64))   # three-frame group
        n_three = count(enc)
        enc(torch.rand(1, 1, 3, 64, 64))   # single frame
        n_one = count(enc)
    assert n_three == n_one == n_before
    spatial_only = FrameEncoder(128, embed_dim=128, blocks=4, heads=4, cross_frame=False)
    assert count(spatial_only) == n_before
    full_a = MultiFrameFlowNet(ModelConfig())
    full_b = MultiFrameFlowNet(ModelConfig(cross_frame_attn=False, cross_frame_in_context=False))
    assert full_a.parameter_count() == full_b.parameter_count()
    print(f"PASS criterion 2: encoder params {n_three} == {n_one} (cross-frame on == off)")


def test_criterion_03_zero_init_cross_frame_independence():
    """At initialization, a pair's flow ignores the group's other frames."""
    for trial in range(10):
        set_deterministic(trial)
        model = MultiFrameFlowNet(ModelConfig.tiny(
            iterations=6, cross_frame_attn=False)).eval()
        frames = torch.rand(1, 3, 3, 64, 64)
        noised = frames.clone()
        noised[:, 2] = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            a = model(frames)["flows"][-1][:, 0]
            b = model(noised)["flows"][-1][:, 0]
        assert torch.equal(a, b), f"trial {trial} leaked across frames"
    print("PASS criterion 3: pair (0,1) flow exactly invariant to frame-3 noise, 10/10 trials")


def test_criterion_04_pipelines_agree_at_initialization(tmp_path):
    """Grouped and sliding-window inference write identical flow files at init."""
    set_deterministic(0)
    model = MultiFrameFlowNet(ModelConfig.tiny(iterations=4, cross_frame_attn=False)).eval()
    sample = next(gen_moving_shapes(0, 1, size=64, frames_per_sample=10, max_disp=5))
    frames = sample.frames_tensor()
    sim_flows, _, _ = run_video(frames, model, 3)
    rec_flows, _ = recursive_baseline(frames, model, 3)
    for k, (a, b) in enumerate(zip(sim_flows, rec_flows)):
        pa = tmp_path / f"sim_{k:06d}.flo"
        pb = tmp_path / f"rec_{k:06d}.flo"
        write_flo(pa, a.permute(1, 2, 0).numpy())
        write_flo(pb, b.permute(1, 2, 0).numpy())
        assert pa.read_bytes() == pb.read_bytes(), f"pair {k} differs"
    print(f"PASS criterion 4: {len(sim_flows)} flow files byte-identical between pipelines")


def test_criterion_05_memory_bank_transparency():
    """Caching changes nothing; grouped encoding does 10 vs 24 encoder calls."""
    set_deterministic(0)
    model = MultiFrameFlowNet(ModelConfig.tiny(iterations=4)).eval()  # integration on
    frames = torch.rand(10, 3, 64, 64)
    cached, sim_ledger, _ = run_video(frames, model, 3)
    uncached, _, _ = run_video(frames, model, 3, use_bank=False)
    assert all(torch.equal(a, b) for a, b in zip(cached, uncached))
    _, rec_ledger = recursive_baseline(frames, model, 3)
    assert sim_ledger.encoder_calls == 10
    assert rec_ledger.encoder_calls == 24
    reduction = 100.0 * (1 - sim_ledger.encoder_calls / rec_ledger.encoder_calls)
    assert round(reduction, 1) == 58.3
    print(f"PASS criterion 5: cache exact; encoder calls 10 vs 24 ({reduction:.1f}% fewer)")


def test_criterion_06_gradient_check():
    """Autograd matches central finite differences on 200 sampled parameters."""
    start = time.time()
    set_deterministic(0)
    model = MultiFrameFlowNet(ModelConfig.tiny(corr_levels=3, enc_blocks=1))
    samples = list(gen_moving_shapes(0, 1, size=32, frames_per_sample=3, max_disp=6))
    frames = samples[0].frames_tensor().unsqueeze(0)
    gt = samples[0].flows_tensor().unsqueeze(0)
    err = grad_check(model, frames, gt, iterations=2, num_params=200, h=1e-5, seed=0)
    elapsed = time.time() - start
    assert err < 1e-3
    assert elapsed < 300
    print(f"PASS criterion 6: max relative gradient error {err:.2e} over 200 params, {elapsed:.0f}s")


def test_criterion_07_loss_iteration_weights():
    """theta=0.8, N=12 weights: first iteration 0.8^11, last 1.0."""
    gt = torch.zeros(1, 1, 2, 2, 2, dtype=torch.float64)
    unit_err = torch.full_like(gt, 0.5)  # mean per-pixel L1 = 1.0
    zero = torch.zeros_like(gt)
    w_first = sequence_loss([unit_err] + [zero] * 11, gt, theta=0.8).item()
    w_last = sequence_loss([zero] * 11 + [unit_err], gt, theta=0.8).item()
    assert abs(w_first - 0.8 ** 11) < 1e-12
    assert abs(w_first - 0.08589934592) < 1e-9
    assert abs(w_last - 1.0) < 1e-12
    print(f"PASS criterion 7: weights {w_first:.11f} (first) and {w_last:.1f} (last)")


# ---------------------------------------------------------------------------
# training criteria (shared fixture, slow)
# ---------------------------------------------------------------------------

TRAIN_SETTINGS = dict(steps=2000, batch_size=2, lr=1e-3, frame_size=64,
                      frames_per_group=3, iterations=6, max_disp=8, seed=0,
                      log_interval=200, val_interval=500, val_samples=4,
                      deterministic=True)


def _evaluate(model, samples):
    model.eval()
    reports = []
    with torch.no_grad():
        for s in samples:
            pred = model(s.frames_tensor().unsqueeze(0), iterations=6)["flows"][-1][0]
            for p in range(pred.shape[0]):
                reports.append(build_report(pred[p].permute(1, 2, 0).numpy(),
                                            s.gt_flows[p], occ=s.occ_masks[p]))
    return aggregate_reports(reports)


@pytest.fixture(scope="module")
def trained_models(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_training")
    eval_set = list(gen_moving_shapes(777, 16, size=64, frames_per_sample=3, max_disp=8))

    set_deterministic(0)
    untrained = MultiFrameFlowNet(ModelConfig.tiny(iterations=6))
    untrained_report = _evaluate(untrained, eval_set)

    results = {}
    for name, mcfg in [
        ("ablation", ModelConfig.tiny(iterations=6, cross_frame_attn=False, use_temporal=False)),
        ("full", ModelConfig.tiny(iterations=6)),
    ]:
        t0 = time.time()
        out = train(TrainConfig(**TRAIN_SETTINGS), mcfg, out_dir=root / name)
        model, _ = load_checkpoint(out.best_checkpoint)
        results[name] = {
            "report": _evaluate(model, eval_set),
            "wall": time.time() - t0,
        }
    return {"untrained": untrained_report, "eval_set": eval_set, **results}


@pytest.mark.slow
def test_criterion_08_toy_convergence(trained_models):
    """2000 training steps reach held-out EPE < 1.5 px from a > 4 px baseline."""
    untrained = trained_models["untrained"].epe_all
    full = trained_models["full"]["report"].epe_all
    ablation = trained_models["ablation"]["report"].epe_all
    wall = trained_models["full"]["wall"]
    assert untrained > 4.0
    assert full < 1.5
    assert full <= ablation
    assert wall < 3 * 3600
    print(f"PASS criterion 8: EPE untrained {untrained:.2f} -> full {full:.3f} "
          f"(ablation {ablation:.3f}), {wall:.0f}s")


@pytest.mark.slow
def test_criterion_09_occlusion_region_direction(trained_models):
    """Temporal cues must not hurt unmatched-region EPE relative to two-frame."""
    eval_set = trained_models["eval_set"]
    occ_frac = float(np.mean([m.mean() for s in eval_set for m in s.occ_masks]))
    assert occ_frac >= 0.10
    full_unm = trained_models["full"]["report"].epe_unmatched
    abl_unm = trained_models["ablation"]["report"].epe_unmatched
    assert full_unm <= abl_unm
    print(f"PASS criterion 9: unmatched EPE full {full_unm:.3f} <= ablation {abl_unm:.3f} "
          f"(occluded fraction {occ_frac:.2f})")


def test_criterion_10_metrics_and_formats(tmp_path):
    """Metrics match loop oracles exactly; both file formats round-trip."""
    rng = np.random.default_rng(0)
    for trial in range(50):
        pred = rng.normal(scale=10, size=(8, 8, 2))
        gt = rng.normal(scale=10, size=(8, 8, 2))
        valid = rng.random((8, 8)) > 0.2
        if not valid.any():
            valid[0, 0] = True
        occ = rng.random((8, 8)) > 0.6
        assert epe(pred, gt, valid) == epe_loop(pred, gt, valid)
        assert fl_all(pred, gt, valid) == fl_loop(pred, gt, valid)
        matched, unmatched = region_epe(pred, gt, occ, valid)
        if (valid & ~occ).any():
            assert matched == epe_loop(pred, gt, valid & ~occ)
        if (valid & occ).any():
            assert unmatched == epe_loop(pred, gt, valid & occ)

    flo = rng.normal(scale=100, size=(13, 9, 2)).astype(np.float32)
    write_flo(tmp_path / "a.flo", flo)
    assert np.array_equal(read_flo(tmp_path / "a.flo"), flo)

    kitti = rng.uniform(-511, 511, size=(11, 7, 2))
    write_kitti_png(tmp_path / "a.png", kitti)
    back, _ = read_kitti_png(tmp_path / "a.png")
    worst = np.abs(back - kitti).max()
    assert worst <= 1 / 64 + 1e-12
    print(f"PASS criterion 10: 50 oracle matches exact; .flo bit-exact; png err {worst:.5f} px")


def test_criterion_11_schedule_coverage():
    """Every (N, T) in [2,40] x [2,6] covers each adjacent pair exactly once."""
    checked = 0
    for n in range(2, 41):
        for t in range(2, 7):
            plan = schedule(n, t)
            assert plan.pairs == [(k, k + 1) for k in range(n - 1)], (n, t)
            for window, flags in zip(plan.groups, plan.kept):
                for j, keep in enumerate(flags):
                    assert keep == (window[j + 1] == window[j] + 1)
            checked += 1
    print(f"PASS criterion 11: pair coverage exact for {checked} (N, T) combinations")
