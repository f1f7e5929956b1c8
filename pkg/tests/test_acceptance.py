"""Acceptance gates.

Every test prints exactly one `[criterion N] ... PASS|FAIL` line (run pytest
with -s to see them live) and asserts the same condition, so a red line and a
red test always agree.  Stated tolerances are encoded literally.
"""

import struct
import time

import numpy as np
import pytest

import semix.autodiff as ad
from semix.autodiff import Tape, Tensor
from semix.checkpoint import load_checkpoint, save_checkpoint
from semix.cli import main
from semix.datasets import read_cifar_binary, read_idx, synth_shapes
from semix.errors import FormatError, LengthError
from semix.evaluation import auroc, equivariance_gap
from semix.experiments import run_directional_experiment, summarize
from semix.gradcheck import run_gradcheck
from semix.mixing import (MixPolicy, make_mixed_batch, mix_cutmix,
                          pair_indices, sample_lambda)
from semix.models import Dense, Flatten, ModelSpec, forward, small_cnn
from semix.training import (SemConfig, TrainConfig, epoch_rng, lr_at,
                            sem_loss, train)


def _report(num, ok, detail):
    line = f"[criterion {num}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. gamma = 0 collapses to plain mixup, bit for bit


def test_criterion_1_gamma_zero_matches_mixup_trainer():
    t0 = time.time()
    ds = synth_shapes(640, image_hw=16, class_count=3, noise=0.05, seed=0)
    epochs, bs = 20, 64  # 10 steps per epoch -> 200 optimizer steps
    cfg = TrainConfig(epochs=epochs, batch_size=bs, lr=0.05,
                      lr_milestones=(10, 15), momentum=0.9, weight_decay=5e-4,
                      mix=MixPolicy("linear", alpha=1.0),
                      sem=SemConfig(gamma=0.0), es_fraction=0.0, seed=0)

    model = small_cnn(1, 16, 3, seed=0)
    train(model, ds, None, cfg)

    # independent mixup-only loop: same published rng streams, no SEM code path
    other = small_cnn(1, 16, 3, seed=0)
    params = other.parameters()
    vel = ad.make_velocities(params)
    steps = 0
    for epoch in range(epochs):
        lr = lr_at(cfg, epoch)
        rng = epoch_rng(cfg.seed, epoch)
        order = rng.permutation(ds.n)
        for step in range(ds.n // bs):
            idx = order[step * bs:(step + 1) * bs]
            x = Tensor(ds.images.data[idx])
            y = Tensor(ds.labels.data[idx])
            pair = pair_indices(bs, rng)
            lam = sample_lambda(1.0, rng)
            xm = ad.scale_add(x, Tensor(x.data[pair]), lam)
            ym = ad.scale_add(y, Tensor(y.data[pair]), lam)
            tape = Tape()
            with tape:
                out = forward(other, xm)
                loss = ad.softmax_cross_entropy(out.logits, ym)
            ad.backward(loss, tape)
            ad.sgd_step(params, vel, lr, cfg.momentum, cfg.weight_decay)
            ad.zero_grads(params)
            steps += 1

    rel = 0.0
    for pa, pb in zip(model.parameters(), other.parameters()):
        a = pa.data.astype(np.float64)
        b = pb.data.astype(np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-30)
        rel = max(rel, float((np.abs(a - b) / denom).max()))
    elapsed = time.time() - t0
    _report(1, rel <= 1e-12 and steps >= 200 and elapsed < 60,
            f"max relative parameter diff {rel:.3e} after {steps} steps "
            f"(tol 1e-12, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 2. finite-difference gradient audit


def test_criterion_2_gradcheck_five_seeds():
    t0 = time.time()
    worst = 0.0
    for seed in range(5):
        err, _, _ = run_gradcheck(seed=seed)
        worst = max(worst, err)
    elapsed = time.time() - t0
    _report(2, worst <= 1e-3 and elapsed < 60,
            f"max relative gradient error {worst:.3e} over seeds 0..4 "
            f"(tol 1e-3, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 3. affine extractor nulls the penalty and the gap


def test_criterion_3_affine_extractor_zero_gap():
    rng = np.random.default_rng(3)
    d_in, d_rep, k, pairs = 64, 16, 3, 1000
    w = Tensor(rng.normal(0, 0.3, (d_in, d_rep)).astype(np.float32), requires_grad=True)
    b = Tensor(rng.normal(0, 0.1, d_rep).astype(np.float32), requires_grad=True)
    head = Dense(Tensor(rng.normal(0, 0.3, (d_rep, k)).astype(np.float32), requires_grad=True),
                 Tensor(np.zeros(k, np.float32), requires_grad=True))
    model = ModelSpec([Flatten(), Dense(w, b)], head, d_rep, k, "affine")

    x_a = rng.random((pairs, 1, 8, 8)).astype(np.float32)
    x_b = rng.random((pairs, 1, 8, 8)).astype(np.float32)
    grid = [round(0.1 * i, 10) for i in range(11)]
    curve = equivariance_gap(model, x_a, x_b, grid)
    worst_gap = float(curve.gap_mean.max())

    y = np.zeros((pairs, k), np.float32)
    y[np.arange(pairs), np.arange(pairs) % k] = 1.0
    worst_pen = 0.0
    for lam in grid:
        mixed = make_mixed_batch(Tensor(x_a), Tensor(y), MixPolicy("linear"),
                                 np.random.default_rng(3), lam=lam)
        _, _, pen = sem_loss(model, Tensor(x_a), mixed, SemConfig(gamma=1.0))
        worst_pen = max(worst_pen, pen)
    _report(3, worst_gap <= 1e-5 and worst_pen <= 1e-5,
            f"affine extractor, {pairs} pairs, full lambda grid: "
            f"max gap {worst_gap:.2e}, max penalty {worst_pen:.2e} (tol 1e-5)")


# ---------------------------------------------------------------------------
# 4. cutmix bookkeeping


def test_criterion_4_cutmix_area_identity():
    rng = np.random.default_rng(4)
    draws_per_size = 10_000 // 3 + 1
    checked = 0
    worst_row = 0.0
    for hw in (8, 16, 32):
        x_i = Tensor(rng.random((2, 1, hw, hw)).astype(np.float32))
        x_j = Tensor(rng.random((2, 1, hw, hw)).astype(np.float32))
        y_i = Tensor(np.eye(3, dtype=np.float32)[[0, 1]])
        y_j = Tensor(np.eye(3, dtype=np.float32)[[2, 0]])
        for _ in range(draws_per_size):
            lam = float(rng.random())
            mb = mix_cutmix(x_i, x_j, y_i, y_j, lam, rng)
            if float(mb.mask.data.astype(np.float64).mean()) != mb.lambda_eff:
                _report(4, False, f"mask mean != lambda_eff at hw={hw}")
            worst_row = max(worst_row, float(
                np.abs(mb.y_mixed.data.astype(np.float64).sum(axis=1) - 1.0).max()))
            checked += 1
    _report(4, worst_row <= 1e-6,
            f"{checked} draws over sizes 8/16/32: mask mean equals lambda_eff "
            f"exactly, max |label row sum - 1| {worst_row:.2e} (tol 1e-6)")


# ---------------------------------------------------------------------------
# 5. mixing ratio sampler distribution


def test_criterion_5_beta_sampler_statistics():
    n = 100_000
    rng = np.random.default_rng(5)
    uni = np.sort(np.array([sample_lambda(1.0, rng) for _ in range(n)]))
    grid = np.arange(1, n + 1) / n
    ks = float(np.maximum(np.abs(uni - grid), np.abs(uni - (grid - 1 / n))).max())

    stats = []
    ok = ks <= 0.02
    for alpha in (0.2, 1.0, 2.0, 5.0):
        draws = np.array([sample_lambda(alpha, rng) for _ in range(n)])
        mean_err = abs(float(draws.mean()) - 0.5)
        var_want = 1.0 / (4.0 * (2.0 * alpha + 1.0))
        var_rel = abs(float(draws.var()) - var_want) / var_want
        stats.append(f"a={alpha}: |mean-0.5|={mean_err:.4f} var off {var_rel * 100:.1f}%")
        ok = ok and mean_err <= 0.01 and var_rel <= 0.05
    _report(5, ok, f"KS(alpha=1 vs uniform)={ks:.4f} (tol 0.02); " + "; ".join(stats))


# ---------------------------------------------------------------------------
# 6. AUROC against the quadratic definition


def test_criterion_6_auroc_matches_definition():
    rng = np.random.default_rng(6)
    worst = 0.0
    for trial in range(100):
        na = int(rng.integers(1, 60))
        nb = int(rng.integers(1, 60))
        decimals = int(rng.integers(0, 3))  # coarse rounding forces ties
        a = np.round(rng.random(na), decimals)
        b = np.round(rng.random(nb), decimals)
        wins = (a[:, None] > b[None, :]).sum()
        ties = (a[:, None] == b[None, :]).sum()
        want = (wins + 0.5 * ties) / (na * nb)
        worst = max(worst, abs(auroc(a, b) - want))
    _report(6, worst <= 1e-12,
            f"100 fixtures with ties: max |auroc - pairwise definition| "
            f"{worst:.2e} (tol 1e-12)")


# ---------------------------------------------------------------------------
# 7. the directional claim


@pytest.mark.slow
def test_criterion_7_penalty_buys_equivariance():
    t0 = time.time()
    outcomes = run_directional_experiment(progress=lambda s: print("   ", s, flush=True))
    s = summarize(outcomes)
    elapsed = time.time() - t0
    # "mean reduction" is gated under both readings: reduction of the mean
    # gaps and the mean of per-seed reductions
    ok = (s["gap_mean_reduction"] >= 0.20 and s["gap_per_seed_reduction"] >= 0.20
          and s["gap_wins"] >= 4 and s["corr_ok"] >= 4 and elapsed <= 20 * 60)
    _report(7, ok,
            f"gap reduction {s['gap_mean_reduction'] * 100:.1f}% of the mean / "
            f"{s['gap_per_seed_reduction'] * 100:.1f}% per seed (need >= 20%), "
            f"gap wins {s['gap_wins']}/5 (need >= 4), corruption within 0.5pp "
            f"{s['corr_ok']}/5 (need >= 4), {elapsed / 60:.1f} min (budget 20)")


# ---------------------------------------------------------------------------
# 8. reproducibility of runs and checkpoints


def test_criterion_8_reproducible_runs(tmp_path):
    t0 = time.time()
    args = ["--dataset", "synth:n=48,hw=8,k=3,noise=0.05,seed=0", "--model",
            "mlp:24", "--epochs", "3", "--batch-size", "16", "--gamma", "0.4"]
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", *args, "--out-dir", str(out)]) == 0
        outs.append(out)
    metrics_same = (outs[0] / "metrics.csv").read_bytes() == (outs[1] / "metrics.csv").read_bytes()

    cfg_text, tensors = load_checkpoint(outs[0] / "model.semx")
    again = tmp_path / "copy.semx"
    save_checkpoint(again, list(tensors.items()), cfg_text)
    bits_same = again.read_bytes() == (outs[0] / "model.semx").read_bytes()
    elapsed = time.time() - t0
    _report(8, metrics_same and bits_same and elapsed < 60,
            f"reruns byte-identical: {metrics_same}; checkpoint load/save "
            f"bit-exact: {bits_same} ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 9. external data formats


def test_criterion_9_data_formats(tmp_path):
    problems = []

    px = (np.arange(2 * 4 * 4, dtype=np.uint8).reshape(2, 4, 4) * 3)
    ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
    ip.write_bytes(struct.pack(">IIII", 0x803, 2, 4, 4) + px.tobytes())
    lp.write_bytes(struct.pack(">II", 0x801, 2) + bytes([1, 0]))
    ds = read_idx(str(ip), str(lp), class_count=2)
    if ds.images.shape != (2, 1, 4, 4) or ds.class_ids().tolist() != [1, 0]:
        problems.append("idx parse")
    if abs(float(ds.images.data[0, 0, 0, 1]) - 3 / 255) > 1e-7:
        problems.append("idx scaling")

    rec = bytes([1]) + bytes(range(256)) * 12
    cp = tmp_path / "cifar.bin"
    cp.write_bytes(rec * 3)
    cds = read_cifar_binary(str(cp), class_count=4)
    if cds.images.shape != (3, 3, 32, 32) or cds.class_ids().tolist() != [1, 1, 1]:
        problems.append("cifar parse")

    bad_magic = tmp_path / "bad.idx"
    bad_magic.write_bytes(struct.pack(">IIII", 0xBAD, 1, 4, 4) + bytes(16))
    with pytest.raises(FormatError):
        read_idx(str(bad_magic), str(lp))
    short = tmp_path / "short.idx"
    short.write_bytes(struct.pack(">IIII", 0x803, 2, 4, 4) + bytes(5))
    with pytest.raises(LengthError):
        read_idx(str(short), str(lp))
    odd = tmp_path / "odd.bin"
    odd.write_bytes(bytes(100))  # not a multiple of the 3073-byte record
    with pytest.raises(LengthError):
        read_cifar_binary(str(odd), 4)

    ck = tmp_path / "model.semx"
    save_checkpoint(ck, [("w", np.ones((2, 2), np.float32))], "seed = 1")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.idx")
    cut = tmp_path / "cut.semx"
    cut.write_bytes(ck.read_bytes()[:-3])
    with pytest.raises(LengthError):
        load_checkpoint(cut)

    _report(9, not problems,
            "idx + cifar fixtures parse; malformed files raise FormatError/"
            "LengthError" + (f"; problems: {problems}" if problems else ""))
