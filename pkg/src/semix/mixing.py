"""Mixup-family batch transforms.

Covers ratio sampling (Beta via the Marsaglia-Tsang gamma squeeze), partner
pairing, linear input mixing, CutMix rectangle mixing, and the linear mixing
of representations used by the equivariance penalty.

One mixing ratio is drawn per batch.  Draw order is part of the contract and
is what makes trainer-vs-oracle comparisons reproducible: first the partner
permutation, then lambda, then (CutMix only) the rectangle center as row
followed by column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, UsageError, ValidationError


@dataclass(frozen=True)
class MixPolicy:
    kind: str = "linear"  # none | linear | cutmix
    alpha: float = 1.0
    lambda_granularity: str = "batch"

    def __post_init__(self):
        if self.kind not in ("none", "linear", "cutmix"):
            raise ConfigError(f"unknown mix kind {self.kind!r}")
        if not (self.alpha > 0) or not math.isfinite(self.alpha):
            raise ConfigError(f"alpha must be a finite positive number, got {self.alpha}")
        if self.lambda_granularity != "batch":
            raise ConfigError("only per-batch lambda sampling is implemented")


@dataclass
class MixedBatch:
    """A mixed batch plus the bookkeeping the losses and tests need.

    lambda_eff is the ratio that actually entered the labels; for CutMix that
    is the clip-corrected rectangle area, not the Beta draw.  mask is the
    binary rectangle (H, W) for CutMix and None otherwise.  pair[i] is the
    partner index of sample i; None when a standalone mixer was called
    without pairing context.
    """

    x_mixed: Tensor
    y_mixed: Tensor
    lambda_eff: float
    pair: np.ndarray | None
    mask: Tensor | None = None
    kind: str = "linear"


def _gamma_ge1(shape: float, rng) -> float:
    # Marsaglia-Tsang squeeze, valid for shape >= 1
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = rng.random()
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


def _gamma(shape: float, rng) -> float:
    if shape < 1.0:
        # boost: Gamma(a) = Gamma(a+1) * U^(1/a)
        return _gamma_ge1(shape + 1.0, rng) * rng.random() ** (1.0 / shape)
    return _gamma_ge1(shape, rng)


def sample_lambda(alpha: float, rng) -> float:
    """Draw lambda ~ Beta(alpha, alpha) as G1 / (G1 + G2), G ~ Gamma(alpha, 1)."""
    if not (alpha > 0) or not math.isfinite(alpha):
        raise ConfigError(f"alpha must be a finite positive number, got {alpha}")
    g1 = _gamma(alpha, rng)
    g2 = _gamma(alpha, rng)
    return g1 / (g1 + g2)


def pair_indices(n: int, rng) -> np.ndarray:
    """Partner permutation for a batch of n samples."""
    if n < 2:
        raise UsageError(f"pairing needs at least 2 samples, got {n}")
    return rng.permutation(n)


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (0.0 <= lam <= 1.0):
        raise ValidationError(f"lambda must lie in [0, 1], got {lam}")
    return lam


def _check_xy(x_i, x_j, y_i, y_j):
    if x_i.shape != x_j.shape:
        raise ShapeError(f"input shapes differ: {x_i.shape} vs {x_j.shape}")
    if y_i.shape != y_j.shape:
        raise ShapeError(f"label shapes differ: {y_i.shape} vs {y_j.shape}")


def mix_linear(x_i: Tensor, x_j: Tensor, y_i: Tensor, y_j: Tensor, lam: float,
               pair=None) -> MixedBatch:
    """Pointwise convex combination of inputs and labels."""
    lam = _check_lambda(lam)
    _check_xy(x_i, x_j, y_i, y_j)
    return MixedBatch(
        x_mixed=ad.scale_add(x_i, x_j, lam),
        y_mixed=ad.scale_add(y_i, y_j, lam),
        lambda_eff=lam,
        pair=pair,
        mask=None,
        kind="linear",
    )


def mix_cutmix(x_i: Tensor, x_j: Tensor, y_i: Tensor, y_j: Tensor, lam_target: float,
               rng, pair=None) -> MixedBatch:
    """Rectangle mixing: paste a box of x_i over x_j.

    The box side lengths are round(H*sqrt(lam)) x round(W*sqrt(lam)); its
    center is uniform over the image, and the box is clipped at the borders.
    Labels use the realized area fraction lambda_eff = box_pixels / (H*W),
    which the caller must also use for representation mixing.
    """
    lam_target = _check_lambda(lam_target)
    _check_xy(x_i, x_j, y_i, y_j)
    if x_i.data.ndim < 3:
        # rank 2 would make the batch axis spatial
        raise ShapeError("cutmix needs spatial inputs (n, ..., H, W)")
    h, w = x_i.shape[-2], x_i.shape[-1]
    if h < 2 or w < 2:
        raise ShapeError(f"cutmix needs H, W >= 2, got {h}x{w}")
    side = math.sqrt(lam_target)
    bh = int(h * side + 0.5)
    bw = int(w * side + 0.5)
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y0 = cy - bh // 2
    x0 = cx - bw // 2
    y1 = max(0, min(h, y0 + bh))
    x1 = max(0, min(w, x0 + bw))
    y0 = max(0, min(h, y0))
    x0 = max(0, min(w, x0))
    area = (y1 - y0) * (x1 - x0)
    lambda_eff = area / (h * w)

    mixed = x_j.data.copy()
    mixed[..., y0:y1, x0:x1] = x_i.data[..., y0:y1, x0:x1]
    mask = np.zeros((h, w), np.float32)
    mask[y0:y1, x0:x1] = 1.0
    return MixedBatch(
        x_mixed=Tensor(mixed),
        y_mixed=ad.scale_add(y_i, y_j, lambda_eff),
        lambda_eff=lambda_eff,
        pair=pair,
        mask=Tensor(mask),
        kind="cutmix",
    )


def mix_representations(r_i: Tensor, r_j: Tensor, lam: float) -> Tensor:
    """lam * r_i + (1 - lam) * r_j; participates in the tape so gradients flow."""
    return ad.scale_add(r_i, r_j, _check_lambda(lam))


def make_mixed_batch(x: Tensor, y: Tensor, policy: MixPolicy, rng, lam=None) -> MixedBatch:
    """Pair up a batch against a permuted copy of itself and mix.

    kind "none" passes the batch through with lambda_eff = 1 and an identity
    pair.  `lam` forces the ratio instead of drawing it (the rest of the draw
    sequence is unchanged), which probes and tests use.
    """
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"batch size mismatch: {x.shape[0]} inputs, {y.shape[0]} labels")
    n = x.shape[0]
    if policy.kind == "none":
        return MixedBatch(x, y, 1.0, np.arange(n), None, "none")
    if n < 2:
        raise UsageError(f"mixing needs at least 2 samples, got {n}")
    pair = pair_indices(n, rng)
    if lam is None:
        lam = sample_lambda(policy.alpha, rng)
    x_j = Tensor(x.data[pair])
    y_j = Tensor(y.data[pair])
    if policy.kind == "linear":
        return mix_linear(x, x_j, y, y_j, lam, pair)
    return mix_cutmix(x, x_j, y, y_j, lam, rng, pair)
