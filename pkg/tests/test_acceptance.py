"""Acceptance gate: one test per criterion, each printing a single pass/fail line.

The trained-model criteria (6, 7, 8) share one desk-scale ablation over five seeds; see
``cinerecon.experiments`` for the matched-budget protocol.
"""

import json
import math
import time

import numpy as np
import pytest
import torch
import yaml
from skimage.metrics import normalized_root_mse, peak_signal_noise_ratio, structural_similarity

from cinerecon.cli import main as cli_main
from cinerecon.experiments import DESK, run_ablation
from cinerecon.kspace import apply_adjoint, apply_forward, fft2c, ifft2c, make_mask
from cinerecon.losses import LossConfig, l1_loss, l1_split_loss, l2_loss, perp_loss, ssim_loss
from cinerecon.metrics import challenge_eval, nmse, psnr, ssim
from cinerecon.model import CRNN, ReconModelConfig, count_parameters, data_consistency

from conftest import crandn, fd_relative_error

SEEDS = (0, 1, 2, 3, 4)
ACCS = ("4", "8", "10")


def test_criterion_01_operators(acceptance):
    t0 = time.time()
    g = np.random.default_rng(0)
    worst_adj = worst_parseval = 0.0
    for i in range(100):
        acc = (4, 8, 10)[i % 3]
        w = int(g.integers(16, 64))
        h = int(g.integers(8, 48))
        lines = make_mask(w, acc, seed=i).lines
        x, y = crandn(g, 3, h, w), crandn(g, 3, h, w)
        lhs = np.vdot(y, apply_forward(x, lines))
        rhs = np.vdot(apply_adjoint(y, lines), x)
        worst_adj = max(worst_adj, abs(lhs - rhs) / (abs(lhs) + 1e-12))
        e = np.sum(np.abs(x) ** 2)
        worst_parseval = max(worst_parseval, abs(np.sum(np.abs(fft2c(x)) ** 2) - e) / e,
                             abs(np.sum(np.abs(ifft2c(x)) ** 2) - e) / e)
    dt = time.time() - t0
    acceptance(1, worst_adj < 1e-6 and worst_parseval < 1e-6 and dt <= 10,
               f"adjointness {worst_adj:.1e}, Parseval {worst_parseval:.1e} over 100 instances in {dt:.2f}s")


def test_criterion_02_data_consistency(acceptance):
    t0 = time.time()
    g = np.random.default_rng(1)
    lines = make_mask(16, 4, seed=2).lines
    m = torch.from_numpy(lines)
    gt = torch.from_numpy(crandn(g, 1, 3, 12, 16))
    y = fft2c(gt) * m
    x = torch.from_numpy(crandn(g, 1, 3, 12, 16))
    hard = fft2c(data_consistency(x, y, m, 30.0))
    hard_err = (hard[..., m] - y[..., m]).abs().max().item()
    ident_err = (data_consistency(x, y, m, -math.inf) - x).abs().max().item()
    fixed_err = max((data_consistency(gt, y, m, lam) - gt).abs().max().item() for lam in (-3.0, math.log(0.1), 0.0, 5.0))
    k = np.zeros((1, 4, 4), complex)
    k[0, 1, 2] = 2.0
    yk = np.zeros_like(k)
    yk[0, 1, 2] = 1.0
    one = np.zeros(4, bool)
    one[2] = True
    bin_val = fft2c(data_consistency(ifft2c(k), yk, one, math.log(0.1)))[0, 1, 2]
    dt = time.time() - t0
    ok = hard_err < 1e-6 and ident_err < 1e-12 and fixed_err < 1e-6 and abs(bin_val - 2.1 / 1.1) < 1e-12 and dt <= 5
    acceptance(2, ok, f"hard replacement {hard_err:.1e}, identity {ident_err:.1e}, fixed point {fixed_err:.1e}, "
                      f"single bin {bin_val.real:.7f} in {dt:.2f}s")


def test_criterion_03_gradients(acceptance):
    t0 = time.time()
    g = np.random.default_rng(3)
    target = torch.from_numpy(crandn(g, 3, 8, 8))
    errors = {}
    for name, fn in (("perp", perp_loss), ("ssim", ssim_loss), ("l1_split", l1_split_loss)):
        a = torch.from_numpy(g.normal(size=(3, 8, 8))).requires_grad_()
        b = torch.from_numpy(g.normal(size=(3, 8, 8))).requires_grad_()
        errors[name] = fd_relative_error(lambda v, fn=fn: fn(torch.complex(v[0], v[1]), target), [a, b], 64)
    torch.manual_seed(0)
    model = CRNN(ReconModelConfig(cascades=2, channels=4)).double()
    lines = torch.from_numpy(make_mask(8, 4, center_lines=2, seed=1).lines)
    gt = torch.from_numpy(crandn(g, 1, 3, 8, 8))
    y = fft2c(gt) * lines
    x0 = ifft2c(y)
    errors["crnn"] = fd_relative_error(lambda _: l2_loss(model(x0, y, lines), gt), list(model.parameters()), 8)
    dt = time.time() - t0
    acceptance(3, max(errors.values()) < 1e-4 and dt <= 120,
               ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f" in {dt:.1f}s")


def test_criterion_04_loss_identities(acceptance):
    g = np.random.default_rng(4)
    p = torch.from_numpy(crandn(g, 3, 16, 16))
    t = torch.from_numpy(crandn(g, 3, 16, 16))
    split_gap = abs(l1_split_loss(p, t, LossConfig(highpass_weight_ratio=1.0)).item() - l1_loss(p, t).item())
    zeros = max(abs(fn(t, t.clone()).item()) for fn in (l1_loss, l2_loss, perp_loss, ssim_loss, l1_split_loss))
    rot = complex(math.cos(1.1), math.sin(1.1))
    phase_gap = abs(perp_loss(p * rot, t * rot).item() - perp_loss(p, t).item())
    acceptance(4, split_gap < 1e-6 and zeros < 1e-6 and phase_gap < 1e-6,
               f"split 1:1 vs l1 {split_gap:.1e}, max loss at identity {zeros:.1e}, phase invariance {phase_gap:.1e}")


def test_criterion_05_metric_oracle(acceptance):
    g = np.random.default_rng(5)
    worst = {"ssim": 0.0, "nmse": 0.0, "psnr": 0.0}
    for _ in range(50):
        ref = g.uniform(0, 1, size=(32, 32))
        pred = np.abs(ref + g.normal(scale=g.uniform(0.01, 0.5), size=ref.shape))
        dr = float(ref.max())
        sk = structural_similarity(ref, pred, data_range=dr, gaussian_weights=True, sigma=1.5,
                                   use_sample_covariance=False)
        worst["ssim"] = max(worst["ssim"], abs(ssim(pred, ref, window=11) - sk))
        worst["nmse"] = max(worst["nmse"], abs(nmse(pred, ref) - normalized_root_mse(ref, pred) ** 2))
        worst["psnr"] = max(worst["psnr"], abs(psnr(pred, ref) - peak_signal_noise_ratio(ref, pred, data_range=dr)))
    acceptance(5, max(worst.values()) < 1e-4,
               "max deviation from scikit-image: " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_09_challenge_protocol(acceptance):
    from cinerecon.metrics import challenge_crop_box
    g = np.random.default_rng(9)
    ref = g.uniform(0.2, 1, size=(4, 64, 96))
    same = challenge_eval(ref, ref)
    pred = ref.copy()
    rows, cols = challenge_crop_box(64, 96)
    outside = np.ones((64, 96), bool)
    outside[rows, cols] = False
    pred[:, outside] = g.uniform(0, 1, size=(4, outside.sum()))
    rep = challenge_eval(pred, ref)
    box = challenge_crop_box(256, 512)
    dims = (box[0].stop - box[0].start, box[1].stop - box[1].start)
    ok = (same.full_image.ssim == pytest.approx(1.0) and same.challenge_crop.nmse == 0
          and rep.challenge_crop.ssim == 1.0 and rep.full_image.ssim < 1.0 and rep.full_image.nmse > 0
          and dims == (128, 170))
    acceptance(9, ok, f"corrupted outside crop: challenge_crop SSIM {rep.challenge_crop.ssim:.4f}, "
                      f"full_image SSIM {rep.full_image.ssim:.4f}; 256x512 crop {dims[0]}x{dims[1]}")


def _pipeline(tmp_path):
    cfg = {
        "seed": 3, "run_id": "det",
        "data": {"n_slices": 6, "frames": 3, "height": 32, "width": 32, "split": [4, 1, 1]},
        "model": {"cascades": 2, "channels": 4, "refinement": "end_to_end", "refine_channels": 4},
        "optimizer": {"lr": 1e-3, "epochs": 2},
        "paths": {"data_dir": str(tmp_path / "data"), "checkpoint_dir": str(tmp_path / "ck"),
                  "report_dir": str(tmp_path / "rep")},
    }
    tmp_path.mkdir(parents=True)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    for cmd in (["gen-data"], ["train"], ["eval", "--checkpoint", str(tmp_path / "ck" / "det_best.pt")]):
        assert cli_main([cmd[0], "--config", str(path), *cmd[1:]]) == 0
    return {p: json.loads((tmp_path / "rep" / f"det_table_{p}.json").read_text())
            for p in ("full_image", "challenge_crop")}


def test_criterion_10_determinism(acceptance, tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    acceptance(10, a == b, "gen-data, train (end-to-end refinement), eval repeated: tables "
                           + ("identical" if a == b else "differ"))


# -- trained-model criteria --------------------------------------------------------------------


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation")
    results = {}
    for seed in SEEDS:
        variants = ("crnn", "end_to_end", "sequential", "crnn_ws") + (("unet",) if seed == 0 else ())
        results[seed] = run_ablation(seed, root / f"seed{seed}", DESK["optimizer"]["epochs"], variants)
        print(f"seed {seed}: " + json.dumps({m: round(results[seed].mean(m), 4)
                                              for m in results[seed].tables["full_image"].models}))
    return results


@pytest.mark.slow
def test_criterion_06_acceleration_trend(acceptance, ablation):
    t = ablation[0].tables["full_image"]
    row = {m: [t.get(a, m, "ssim") for a in ACCS] for m in ("zero_filled", "unet", "crnn")}
    monotone = row["crnn"][0] >= row["crnn"][1] >= row["crnn"][2]
    beats = all(row["crnn"][i] > max(row["unet"][i], row["zero_filled"][i]) for i in range(3))
    detail = "; ".join(f"{m} " + "/".join(f"{v:.3f}" for v in r) for m, r in row.items())
    acceptance(6, monotone and beats, f"20-slice test SSIM at 4x/8x/10x: {detail}")


@pytest.mark.slow
def test_criterion_07_refinement(acceptance, ablation):
    e2e_wins = order_wins = 0
    rows = []
    for seed, res in ablation.items():
        plain, seq, e2e = (res.mean(m) for m in ("crnn", "sequential", "end_to_end"))
        e2e_wins += e2e >= plain and res.mean("end_to_end", "nmse") <= res.mean("crnn", "nmse")
        order_wins += plain < seq <= e2e
        rows.append(f"s{seed} {plain:.3f}/{seq:.3f}/{e2e:.3f}")
    ok = e2e_wins >= 4 and order_wins >= 3
    acceptance(7, ok, f"end_to_end >= plain (SSIM and NMSE) in {e2e_wins}/5 seeds, plain < sequential <= "
                      f"end_to_end in {order_wins}/5; SSIM plain/seq/e2e: " + ", ".join(rows))


@pytest.mark.slow
def test_criterion_08_weight_sharing(acceptance, ablation):
    wins = sum(res.eval_ssim["crnn_half"] >= res.eval_ssim["crnn_ws"] for res in ablation.values())
    ch = DESK["model"]["channels"]
    ws = {c: count_parameters(CRNN(ReconModelConfig(cascades=c, channels=ch, weight_sharing=True))) for c in (2, 3, 5)}
    full = count_parameters(CRNN(ReconModelConfig(cascades=DESK["model"]["cascades"], channels=ch)))
    counts_ok = len(set(ws.values())) == 1 and ws[3] < full
    pairs = ", ".join(f"s{s} {r.eval_ssim['crnn_half']:.3f}/{r.eval_ssim['crnn_ws']:.3f}" for s, r in ablation.items())
    acceptance(8, wins >= 3 and counts_ok,
               f"non-shared >= shared eval SSIM in {wins}/5 seeds ({pairs}); params shared {ws[3]} "
               f"(same for 2/3/5 cascades) vs non-shared {full}")
