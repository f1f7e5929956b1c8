"""Ratio sampling, pairing, and the three mixers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import semix.autodiff as ad
from semix.autodiff import Tape, Tensor, backward
from semix.errors import ConfigError, ShapeError, UsageError, ValidationError
from semix.mixing import (MixPolicy, make_mixed_batch, mix_cutmix, mix_linear,
                          mix_representations, pair_indices, sample_lambda)


def _onehot(ids, k):
    out = np.zeros((len(ids), k), np.float32)
    out[np.arange(len(ids)), ids] = 1
    return out


# ---------------------------------------------------------------------------
# sampling


def test_sample_lambda_in_unit_interval():
    rng = np.random.default_rng(0)
    for alpha in (0.2, 1.0, 5.0):
        draws = [sample_lambda(alpha, rng) for _ in range(500)]
        assert all(0.0 <= l <= 1.0 for l in draws)


def test_sample_lambda_deterministic_given_stream():
    a = [sample_lambda(0.7, np.random.default_rng(42)) for _ in range(1)]
    b = [sample_lambda(0.7, np.random.default_rng(42)) for _ in range(1)]
    assert a == b


def test_sample_lambda_symmetry_of_mean():
    rng = np.random.default_rng(1)
    draws = np.array([sample_lambda(2.0, rng) for _ in range(20000)])
    assert abs(draws.mean() - 0.5) < 0.01


def test_sample_lambda_alpha_small_concentrates_at_ends():
    rng = np.random.default_rng(2)
    draws = np.array([sample_lambda(0.2, rng) for _ in range(5000)])
    # Beta(0.2, 0.2) is bimodal at the ends: most mass outside the middle
    assert ((draws < 0.2) | (draws > 0.8)).mean() > 0.6


def test_sample_lambda_rejects_bad_alpha():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        sample_lambda(0.0, rng)
    with pytest.raises(ConfigError):
        sample_lambda(-1.0, rng)


def test_pair_indices_is_permutation():
    rng = np.random.default_rng(3)
    p = pair_indices(17, rng)
    assert sorted(p.tolist()) == list(range(17))
    with pytest.raises(UsageError):
        pair_indices(1, rng)


def test_pair_indices_slot_frequencies_are_uniform():
    rng = np.random.default_rng(4)
    counts = np.zeros(4)
    for _ in range(10_000):
        counts[pair_indices(4, rng)[0]] += 1
    np.testing.assert_allclose(counts / 10_000, 0.25, atol=0.02)


# ---------------------------------------------------------------------------
# linear mixing


def _pair_fixture(n=6, k=3, seed=0, hw=4):
    rng = np.random.default_rng(seed)
    x_i = Tensor(rng.random((n, 1, hw, hw)).astype(np.float32))
    x_j = Tensor(rng.random((n, 1, hw, hw)).astype(np.float32))
    y_i = Tensor(_onehot(rng.integers(0, k, n), k))
    y_j = Tensor(_onehot(rng.integers(0, k, n), k))
    return x_i, x_j, y_i, y_j


def test_mix_linear_values():
    x_i, x_j, y_i, y_j = _pair_fixture()
    mb = mix_linear(x_i, x_j, y_i, y_j, 0.25)
    np.testing.assert_allclose(mb.x_mixed.data, 0.25 * x_i.data + 0.75 * x_j.data, rtol=1e-6)
    np.testing.assert_allclose(mb.y_mixed.data, 0.25 * y_i.data + 0.75 * y_j.data, rtol=1e-6)
    assert mb.lambda_eff == 0.25
    assert mb.mask is None


def test_mix_linear_endpoints_bitwise():
    x_i, x_j, y_i, y_j = _pair_fixture(seed=1)
    at1 = mix_linear(x_i, x_j, y_i, y_j, 1.0)
    assert np.array_equal(at1.x_mixed.data, x_i.data)
    assert np.array_equal(at1.y_mixed.data, y_i.data)
    at0 = mix_linear(x_i, x_j, y_i, y_j, 0.0)
    assert np.array_equal(at0.x_mixed.data, x_j.data)
    assert np.array_equal(at0.y_mixed.data, y_j.data)


def test_mix_linear_self_mix_identity():
    x_i, _, y_i, _ = _pair_fixture(seed=2)
    mb = mix_linear(x_i, x_i, y_i, y_i, 0.3)
    np.testing.assert_allclose(mb.x_mixed.data, x_i.data, atol=1e-7)


def test_mix_linear_argument_symmetry():
    x_i, x_j, y_i, y_j = _pair_fixture(seed=3)
    a = mix_linear(x_i, x_j, y_i, y_j, 0.3)
    b = mix_linear(x_j, x_i, y_j, y_i, 0.7)
    np.testing.assert_allclose(a.x_mixed.data, b.x_mixed.data, atol=1e-6)
    np.testing.assert_allclose(a.y_mixed.data, b.y_mixed.data, atol=1e-6)


def test_mix_linear_validation():
    x_i, x_j, y_i, y_j = _pair_fixture(seed=4)
    with pytest.raises(ValidationError):
        mix_linear(x_i, x_j, y_i, y_j, 1.5)
    with pytest.raises(ValidationError):
        mix_linear(x_i, x_j, y_i, y_j, -0.1)
    short = Tensor(x_j.data[:3])
    with pytest.raises(ShapeError):
        mix_linear(x_i, short, y_i, y_j, 0.5)


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0.0, 1.0), seed=st.integers(0, 10**6))
def test_mixed_labels_stay_on_simplex(lam, seed):
    rng = np.random.default_rng(seed)
    y_i = Tensor(_onehot(rng.integers(0, 4, 5), 4))
    y_j = Tensor(_onehot(rng.integers(0, 4, 5), 4))
    x = Tensor(rng.random((5, 2)).astype(np.float32))
    mb = mix_linear(x, x, y_i, y_j, lam)
    sums = mb.y_mixed.data.sum(axis=1)
    assert np.abs(sums - 1.0).max() < 1e-6
    assert mb.y_mixed.data.min() >= -1e-7


# ---------------------------------------------------------------------------
# cutmix


def test_cutmix_mask_matches_lambda_eff_exactly():
    rng = np.random.default_rng(5)
    x_i, x_j, y_i, y_j = _pair_fixture(hw=8, seed=5)
    for _ in range(200):
        lam = rng.random()
        mb = mix_cutmix(x_i, x_j, y_i, y_j, lam, rng)
        mask = mb.mask.data.astype(np.float64)
        assert set(np.unique(mask)) <= {0.0, 1.0}
        assert mask.mean() == mb.lambda_eff
        np.testing.assert_allclose(mb.y_mixed.data.sum(axis=1), 1.0, atol=1e-6)


def test_cutmix_pastes_rectangle():
    rng = np.random.default_rng(6)
    x_i, x_j, y_i, y_j = _pair_fixture(hw=8, seed=6)
    mb = mix_cutmix(x_i, x_j, y_i, y_j, 0.4, rng)
    mask = mb.mask.data.astype(bool)
    got = mb.x_mixed.data
    assert np.array_equal(got[..., mask], x_i.data[..., mask])
    assert np.array_equal(got[..., ~mask], x_j.data[..., ~mask])


def test_cutmix_zero_lambda_is_pure_x_j():
    rng = np.random.default_rng(11)
    x_i, x_j, y_i, y_j = _pair_fixture(hw=8, seed=11)
    mb = mix_cutmix(x_i, x_j, y_i, y_j, 0.0, rng)
    assert mb.lambda_eff == 0.0
    assert not mb.mask.data.any()
    assert np.array_equal(mb.x_mixed.data, x_j.data)
    np.testing.assert_allclose(mb.y_mixed.data, y_j.data, atol=1e-6)


def test_cutmix_interior_quarter_box_is_exact():
    # on a 4x4 image, lam 0.25 means a 2x2 box; unclipped draws hit 0.25 exactly
    x_i, x_j, y_i, y_j = _pair_fixture(hw=4, seed=12)
    rng = np.random.default_rng(12)
    seen_exact = False
    for _ in range(100):
        mb = mix_cutmix(x_i, x_j, y_i, y_j, 0.25, rng)
        ones = int(mb.mask.data.sum())
        assert ones <= 4  # clipping only shrinks the box
        if ones == 4:
            assert mb.lambda_eff == 0.25
            rows, cols = np.nonzero(mb.mask.data)
            assert rows.max() - rows.min() == 1 and cols.max() - cols.min() == 1
            seen_exact = True
    assert seen_exact


def test_cutmix_self_mix_identity_by_value():
    rng = np.random.default_rng(7)
    x_i, _, y_i, _ = _pair_fixture(hw=8, seed=7)
    mb = mix_cutmix(x_i, x_i, y_i, y_i, 0.5, rng)
    assert np.array_equal(mb.x_mixed.data, x_i.data)
    np.testing.assert_allclose(mb.y_mixed.data, y_i.data, atol=1e-6)


def test_cutmix_label_uses_effective_lambda():
    rng = np.random.default_rng(8)
    x_i, x_j, y_i, y_j = _pair_fixture(hw=8, seed=8)
    mb = mix_cutmix(x_i, x_j, y_i, y_j, 0.6, rng)
    want = mb.lambda_eff * y_i.data + (1 - mb.lambda_eff) * y_j.data
    np.testing.assert_allclose(mb.y_mixed.data, want, atol=1e-6)


def test_cutmix_needs_spatial_input():
    y = Tensor(_onehot([0, 1], 2))
    flat = Tensor(np.zeros((2, 5), np.float32))
    with pytest.raises(ShapeError):
        mix_cutmix(flat, flat, y, y, 0.5, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# representation mixing & batch assembly


def test_mix_representations_gradients():
    r_i = Tensor(np.ones((3, 4), np.float32), requires_grad=True)
    r_j = Tensor(np.full((3, 4), 2.0, np.float32), requires_grad=True)
    tape = Tape()
    with tape:
        mixed = mix_representations(r_i, r_j, 0.25)
        loss = ad.tsum(mixed)
    backward(loss, tape)
    assert np.all(r_i.grad == np.float32(0.25))
    assert np.all(r_j.grad == np.float32(0.75))
    np.testing.assert_allclose(mixed.data, 0.25 * 1 + 0.75 * 2)


def test_make_mixed_batch_none_passthrough():
    rng = np.random.default_rng(9)
    x = Tensor(rng.random((4, 1, 4, 4)).astype(np.float32))
    y = Tensor(_onehot([0, 1, 0, 1], 2))
    mb = make_mixed_batch(x, y, MixPolicy("none"), rng)
    assert mb.x_mixed is x and mb.y_mixed is y
    assert mb.lambda_eff == 1.0
    assert np.array_equal(mb.pair, np.arange(4))
    assert mb.kind == "none"


def test_make_mixed_batch_draw_order_is_pair_then_lambda():
    x = Tensor(np.random.default_rng(10).random((6, 1, 4, 4)).astype(np.float32))
    y = Tensor(_onehot([0, 1, 2, 0, 1, 2], 3))
    mb = make_mixed_batch(x, y, MixPolicy("linear", alpha=0.8), np.random.default_rng(77))
    ref = np.random.default_rng(77)
    pair = pair_indices(6, ref)
    lam = sample_lambda(0.8, ref)
    assert np.array_equal(mb.pair, pair)
    assert mb.lambda_eff == lam
    np.testing.assert_allclose(
        mb.x_mixed.data, lam * x.data + (1 - lam) * x.data[pair], rtol=1e-6)


def test_make_mixed_batch_forced_lambda():
    x = Tensor(np.random.default_rng(11).random((4, 1, 4, 4)).astype(np.float32))
    y = Tensor(_onehot([0, 1, 0, 1], 2))
    mb = make_mixed_batch(x, y, MixPolicy("linear"), np.random.default_rng(0), lam=0.5)
    assert mb.lambda_eff == 0.5


def test_make_mixed_batch_rejects_tiny_batch():
    x = Tensor(np.zeros((1, 1, 4, 4), np.float32))
    y = Tensor(_onehot([0], 2))
    with pytest.raises(UsageError):
        make_mixed_batch(x, y, MixPolicy("linear"), np.random.default_rng(0))


def test_mix_policy_validation():
    with pytest.raises(ConfigError):
        MixPolicy("blend")
    with pytest.raises(ConfigError):
        MixPolicy("linear", alpha=0.0)
    with pytest.raises(ConfigError):
        MixPolicy("linear", lambda_granularity="sample")
