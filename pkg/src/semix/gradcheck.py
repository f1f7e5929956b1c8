"""Finite-difference audit of the full training-loss gradient.

Builds a miniature conv net, one linearly mixed batch, and the combined
label + penalty loss, then compares every analytic partial (float32 backward)
against a central difference computed on a float64 shadow copy of the model.
The shadow runs the same ops at higher precision so the difference quotient
itself is trustworthy at h = 1e-3.

relu makes the loss only piecewise smooth: if a preactivation sits within the
step's reach of zero, the central difference straddles the kink and measures
a blend of two slopes, which is not the gradient at the point.  The fixture
avoids that by placing each pre-relu bias so that zero falls in the widest
empty interval of that channel's preactivation distribution; afterwards every
unit keeps a clearance far larger than any single +-h parameter step can
move it, making the loss exactly differentiable in the probed neighborhood.

The reported figure per parameter tensor is

    max_i |analytic_i - fd_i| / max(max_i |fd_i|, 1e-8)

and run_gradcheck returns the worst figure over all tensors.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .mixing import MixPolicy, MixedBatch, make_mixed_batch
from .models import AvgPool, Conv, Dense, Flatten, ModelSpec, Relu
from .training import SemConfig, sem_loss


def _build_model(rng) -> ModelSpec:
    def kaiming(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32),
                      requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n, np.float32), requires_grad=True)

    layers = [
        Conv(kaiming((3, 1, 3, 3), 9), zeros(3)),
        Relu(),
        AvgPool(2),
        Conv(kaiming((5, 3, 3, 3), 27), zeros(5)),
        Relu(),
        AvgPool(2),
        Flatten(),
        Dense(kaiming((5 * 2 * 2, 12), 20), zeros(12)),
    ]
    head = Dense(kaiming((12, 3), 12), zeros(3))
    return ModelSpec(layers, head, 12, 3, "gradcheck-cnn")


def _channel_view(a):
    if a.ndim == 2:
        return a.reshape(-1, a.shape[1])
    return a.transpose(0, 2, 3, 1).reshape(-1, a.shape[1])


def _place_biases(model: ModelSpec, batches) -> float:
    """Shift each pre-relu bias so 0 sits mid-gap in its channel's preactivations.

    `batches` are the input arrays the loss will push through the extractor
    (the clean batch and the mixed batch).  Returns the worst clearance, the
    distance from 0 to the nearest preactivation after placement.
    """
    acts = [np.asarray(b, np.float64) for b in batches]
    worst = np.inf
    for li, layer in enumerate(model.extractor):
        if isinstance(layer, Relu):
            prev = model.extractor[li - 1]
            stacked = np.concatenate([_channel_view(a) for a in acts])
            for c in range(stacked.shape[1]):
                v = np.sort(stacked[:, c])
                cands = [v[0] - 0.05, v[-1] + 0.05]
                gaps = v[1:] - v[:-1]
                for gi in np.argsort(gaps)[::-1][:40]:
                    cands.append((v[gi] + v[gi + 1]) / 2.0)
                best, best_clear = 0.0, np.abs(v).min()
                for z in cands:
                    if abs(z) > 0.8:
                        continue
                    clear = np.abs(v - z).min()
                    if clear > best_clear:
                        best_clear, best = clear, z
                prev.b.data[c] -= np.float32(best)
                for a in acts:
                    if a.ndim == 2:
                        a[:, c] -= best
                    else:
                        a[:, c, :, :] -= best
                worst = min(worst, best_clear)
        outs = []
        for a in acts:
            outs.append(layer.apply(Tensor(a.astype(np.float32))).data.astype(np.float64))
        acts = outs
    return float(worst)


def _shadow64(model: ModelSpec) -> ModelSpec:
    def cast(layer):
        if isinstance(layer, (Conv, Dense)):
            out = type(layer)(Tensor(layer.w.data, dtype=np.float64),
                              Tensor(layer.b.data, dtype=np.float64))
            if isinstance(layer, Conv):
                out.stride, out.pad = layer.stride, layer.pad
            return out
        return layer

    return ModelSpec([cast(l) for l in model.extractor], cast(model.head),
                     model.representation_dim, model.class_count, model.arch)


def run_gradcheck(seed: int = 0, h: float = 1e-3, gamma: float = 0.7,
                  penalty_variant: str = "norm"):
    """Returns (max_rel_err, worst_tensor_name, per_tensor_dict)."""
    rng = np.random.default_rng([seed, 0x6C])
    n, k = 3, 3
    x = Tensor(rng.random((n, 1, 8, 8)).astype(np.float32))
    labels = np.zeros((n, k), np.float32)
    labels[np.arange(n), rng.integers(0, k, n)] = 1.0
    y = Tensor(labels)
    mixed = make_mixed_batch(x, y, MixPolicy("linear", alpha=1.0), rng)
    sem = SemConfig(gamma=gamma, penalty_variant=penalty_variant)

    model = _build_model(np.random.default_rng([seed, 0x11]))
    _place_biases(model, [x.data, mixed.x_mixed.data])

    tape = Tape()
    with tape:
        loss, _, _ = sem_loss(model, x, mixed, sem)
    ad.backward(loss, tape)

    shadow = _shadow64(model)
    x64 = Tensor(x.data, dtype=np.float64)
    mixed64 = MixedBatch(
        x_mixed=Tensor(mixed.x_mixed.data, dtype=np.float64),
        y_mixed=Tensor(mixed.y_mixed.data, dtype=np.float64),
        lambda_eff=mixed.lambda_eff,
        pair=mixed.pair,
        mask=mixed.mask,
        kind=mixed.kind,
    )
    shadow_params = [t for _, t in shadow.named_parameters()]

    def f() -> float:
        t, _, _ = sem_loss(shadow, x64, mixed64, sem)
        return float(t.data)

    per_tensor = {}
    worst = (0.0, "")
    for (name, p32), p64 in zip(model.named_parameters(), shadow_params):
        flat = p64.data.ravel()
        fd = np.empty(flat.size, np.float64)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = f()
            flat[i] = keep - h
            down = f()
            flat[i] = keep
            fd[i] = (up - down) / (2.0 * h)
        analytic = p32.grad.astype(np.float64).ravel()
        err = float(np.abs(analytic - fd).max() / max(np.abs(fd).max(), 1e-8))
        per_tensor[name] = err
        if err > worst[0]:
            worst = (err, name)
    return worst[0], worst[1], per_tensor
