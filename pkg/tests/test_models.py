"""Model construction, forward contract, and gradient flow."""

import numpy as np
import pytest

import semix.autodiff as ad
from semix.autodiff import Tape, Tensor, backward
from semix.errors import ConfigError, ShapeError
from semix.models import ModelSpec, forward, represent, small_cnn, small_mlp


def test_mlp_parameter_count():
    m = small_mlp(4, [8], 3, seed=0)
    # 4*8 + 8 + 8*3 + 3
    assert m.parameter_count() == 67
    m2 = small_mlp(10, [16, 8], 4, seed=0)
    assert m2.parameter_count() == 10 * 16 + 16 + 16 * 8 + 8 + 8 * 4 + 4
    assert m2.representation_dim == 8


def test_cnn_parameter_count_and_rep_shape():
    m = small_cnn(1, 16, 3, seed=0)
    want = (16 * 1 * 9 + 16) + (16 * 16 * 9 + 16) + (16 * 16 * 9 + 16) \
        + (16 * 2 * 2 * 64 + 64) + (64 * 3 + 3)
    assert m.parameter_count() == want
    x = Tensor(np.random.default_rng(0).random((5, 1, 16, 16)).astype(np.float32))
    out = forward(m, x)
    assert out.representation.shape == (5, 64)
    assert out.logits.shape == (5, 3)


def test_zero_input_with_zero_biases_gives_zero_logits():
    m = small_cnn(1, 16, 3, seed=3)
    out = forward(m, Tensor(np.zeros((2, 1, 16, 16), np.float32)))
    assert np.array_equal(out.logits.data, np.zeros((2, 3), np.float32))


def test_logits_equal_head_of_representation_bitwise():
    m = small_cnn(1, 16, 4, seed=1)
    x = Tensor(np.random.default_rng(1).random((3, 1, 16, 16)).astype(np.float32))
    out = forward(m, x)
    again = m.head.apply(out.representation)
    assert np.array_equal(out.logits.data, again.data)


def test_batch_forward_matches_per_sample():
    m = small_cnn(1, 16, 3, seed=2)
    x = np.random.default_rng(2).random((2, 1, 16, 16)).astype(np.float32)
    both = forward(m, Tensor(x)).logits.data
    one = forward(m, Tensor(x[:1])).logits.data
    two = forward(m, Tensor(x[1:])).logits.data
    np.testing.assert_allclose(both, np.concatenate([one, two]), atol=1e-6)


def test_init_determinism_and_kaiming_bounds():
    a = small_mlp(6, [10], 3, seed=7)
    b = small_mlp(6, [10], 3, seed=7)
    c = small_mlp(6, [10], 3, seed=8)
    for (n1, p1), (_, p2), (_, p3) in zip(a.named_parameters(), b.named_parameters(),
                                          c.named_parameters()):
        assert np.array_equal(p1.data, p2.data)
        if n1.endswith(".w"):
            assert not np.array_equal(p1.data, p3.data)
    w0 = a.extractor[1].w.data
    bound = np.sqrt(6.0 / 6)
    assert np.abs(w0).max() <= bound
    assert np.abs(w0).std() > 0
    assert np.all(a.extractor[1].b.data == 0)


def test_mlp_accepts_image_input_via_flatten():
    m = small_mlp(1 * 8 * 8, [12], 2, seed=0)
    x = Tensor(np.zeros((4, 1, 8, 8), np.float32))
    out = forward(m, x)
    assert out.logits.shape == (4, 2)


def test_config_errors():
    with pytest.raises(ConfigError):
        small_cnn(1, 12, 3)  # not a multiple of 8
    with pytest.raises(ConfigError):
        small_cnn(1, 16, 1)  # one class
    with pytest.raises(ConfigError):
        small_mlp(4, [], 3)
    with pytest.raises(ConfigError):
        small_mlp(0, [4], 3)


def test_shape_mismatch_raises():
    m = small_cnn(1, 16, 3, seed=0)
    with pytest.raises(ShapeError):
        forward(m, Tensor(np.zeros((2, 3, 16, 16), np.float32)))  # wrong channels


def test_every_parameter_receives_gradient():
    m = small_cnn(1, 16, 3, seed=3)
    x = Tensor(np.random.default_rng(3).random((4, 1, 16, 16)).astype(np.float32))
    y = np.zeros((4, 3), np.float32)
    y[np.arange(4), [0, 1, 2, 0]] = 1
    tape = Tape()
    with tape:
        out = forward(m, x)
        loss = ad.softmax_cross_entropy(out.logits, Tensor(y))
    backward(loss, tape)
    for name, p in m.named_parameters():
        assert p.grad is not None, name
        assert np.isfinite(p.grad).all(), name
        assert np.abs(p.grad).max() > 0, name


def test_represent_is_prefix_of_forward():
    m = small_mlp(5, [7], 2, seed=4)
    x = Tensor(np.random.default_rng(4).random((3, 5)).astype(np.float32))
    rep = represent(m, x)
    out = forward(m, x)
    assert np.array_equal(rep.data, out.representation.data)
    assert rep.shape == (3, m.representation_dim)
