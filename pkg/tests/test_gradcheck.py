"""Finite-difference audit fixture and experiment summary bookkeeping."""

import numpy as np

from semix.experiments import SeedOutcome, summarize
from semix.gradcheck import run_gradcheck


def test_gradcheck_fixture_under_tolerance():
    err, worst, per_tensor = run_gradcheck(seed=0)
    assert err <= 1e-3
    assert worst in per_tensor
    assert per_tensor[worst] == err
    assert all(np.isfinite(v) for v in per_tensor.values())


def test_gradcheck_covers_every_parameter():
    _, _, per_tensor = run_gradcheck(seed=1)
    # conv-conv-dense extractor plus the head, weights and biases each
    assert sorted(per_tensor) == sorted(
        ["g0.w", "g0.b", "g3.w", "g3.b", "g7.w", "g7.b", "q.w", "q.b"])


def _outcome(seed, gm, gs, cm, cs):
    return SeedOutcome(seed, gap_mixup=gm, gap_sem=gs, corr_mixup=cm, corr_sem=cs,
                       clean_mixup=0.9, clean_sem=0.9)


def test_summarize_counts_wins_and_reductions():
    outcomes = [
        _outcome(0, 1.0, 0.5, 0.80, 0.81),
        _outcome(1, 2.0, 1.0, 0.80, 0.79),   # corr drop 0.01 > 0.005: not ok
        _outcome(2, 1.0, 1.2, 0.80, 0.80),   # gap got worse: no win
    ]
    s = summarize(outcomes)
    assert s["seeds"] == 3
    assert s["gap_wins"] == 2
    assert s["corr_ok"] == 2
    want = (np.mean([1, 2, 1]) - np.mean([0.5, 1.0, 1.2])) / np.mean([1, 2, 1])
    assert abs(s["gap_mean_reduction"] - want) < 1e-12


def test_gap_reduction_property():
    o = _outcome(0, 2.0, 0.5, 0.8, 0.8)
    assert o.gap_reduction == 0.75
