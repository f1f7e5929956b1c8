"""Evaluation harness: clean accuracy, corruption robustness, OOD scoring,
and the representation equivariance probe.

Corruption severities are fixed tables (5 levels per kind) chosen for small
grayscale/color images; every corruption clamps back to [0, 1] and is
deterministic given its rng.  Gap and AUROC computations run in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, UsageError, ValidationError
from .models import ModelSpec, forward, represent

CORRUPTION_KINDS = ("gaussian_noise", "impulse_noise", "gaussian_blur", "contrast")

SEVERITY = {
    "gaussian_noise": (0.04, 0.06, 0.08, 0.09, 0.10),   # additive std
    "impulse_noise": (0.01, 0.02, 0.03, 0.05, 0.07),    # salt/pepper fraction
    "gaussian_blur": (0.4, 0.6, 0.8, 1.0, 1.2),         # kernel std in pixels
    "contrast": (0.75, 0.6, 0.45, 0.3, 0.15),           # scale toward mid-gray
}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int  # 1..5

    def __post_init__(self):
        if self.kind not in SEVERITY:
            raise ConfigError(f"unknown corruption kind {self.kind!r}")
        if not (1 <= int(self.severity) <= 5):
            raise ConfigError(f"severity must be 1..5, got {self.severity}")

    @property
    def strength(self):
        return SEVERITY[self.kind][int(self.severity) - 1]


def _batched_logits(model: ModelSpec, images: np.ndarray, batch: int = 256) -> np.ndarray:
    outs = []
    for start in range(0, images.shape[0], batch):
        out = forward(model, Tensor(images[start:start + batch]))
        outs.append(out.logits.data)
    return np.concatenate(outs, axis=0)


def _batched_reps(model: ModelSpec, images: np.ndarray, batch: int = 256) -> np.ndarray:
    outs = []
    for start in range(0, images.shape[0], batch):
        outs.append(represent(model, Tensor(images[start:start + batch])).data)
    return np.concatenate(outs, axis=0)


def accuracy(model: ModelSpec, dataset, batch: int = 256) -> float:
    if dataset.n == 0:
        raise UsageError("empty dataset")
    logits = _batched_logits(model, dataset.images.data, batch)
    return float((logits.argmax(axis=1) == dataset.class_ids()).mean())


# ---------------------------------------------------------------------------
# corruptions


def _add_gaussian(x, sigma, rng):
    return x + sigma * rng.standard_normal(x.shape)


def _add_impulse(x, frac, rng):
    hit = rng.random(x.shape) < frac
    salt = rng.random(x.shape) < 0.5
    return np.where(hit, np.where(salt, 1.0, 0.0), x)


def _blur(x, sigma):
    radius = max(1, int(3.0 * sigma + 0.5))
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    h, w = x.shape[-2], x.shape[-1]
    if radius >= h or radius >= w:
        raise ValidationError(f"blur radius {radius} too large for {h}x{w} images")
    xp = np.pad(x, ((0, 0), (0, 0), (radius, radius), (0, 0)), mode="reflect")
    x = sum(taps[d] * xp[:, :, d:d + h, :] for d in range(2 * radius + 1))
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (radius, radius)), mode="reflect")
    return sum(taps[d] * xp[:, :, :, d:d + w] for d in range(2 * radius + 1))


def _contrast(x, factor):
    return 0.5 + factor * (x - 0.5)


def corrupt(images: Tensor, spec: CorruptionSpec, rng) -> Tensor:
    """Apply one corruption at one severity; output stays float32 in [0, 1]."""
    x = images.data.astype(np.float64)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValidationError("corrupt expects pixels in [0, 1]")
    s = spec.strength
    if spec.kind == "gaussian_noise":
        x = _add_gaussian(x, s, rng)
    elif spec.kind == "impulse_noise":
        x = _add_impulse(x, s, rng)
    elif spec.kind == "gaussian_blur":
        x = _blur(x, s)
    else:
        x = _contrast(x, s)
    return Tensor(np.clip(x, 0.0, 1.0).astype(np.float32))


@dataclass
class CorruptionSuiteResult:
    cells: dict  # (kind, severity) -> accuracy
    mean: float


def corruption_suite_eval(model: ModelSpec, dataset, seed: int = 0,
                          batch: int = 256) -> CorruptionSuiteResult:
    """Accuracy on every (kind, severity) cell of the 4 x 5 grid plus their mean.

    Each cell gets its own derived rng, so results do not depend on
    evaluation order.
    """
    cells = {}
    for ki, kind in enumerate(CORRUPTION_KINDS):
        for sev in range(1, 6):
            rng = np.random.default_rng([seed, ki, sev])
            imgs = corrupt(dataset.images, CorruptionSpec(kind, sev), rng)
            logits = _batched_logits(model, imgs.data, batch)
            cells[(kind, sev)] = float((logits.argmax(axis=1) == dataset.class_ids()).mean())
    return CorruptionSuiteResult(cells, float(np.mean(list(cells.values()))))


# ---------------------------------------------------------------------------
# OOD scoring


def msp_scores(model: ModelSpec, dataset, batch: int = 256) -> np.ndarray:
    """Per-sample max softmax probability, the confidence score for OOD detection."""
    logits = _batched_logits(model, dataset.images.data, batch).astype(np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return (ez.max(axis=1) / ez.sum(axis=1))


def auroc(id_scores, ood_scores) -> float:
    """Probability that a random ID sample scores above a random OOD sample.

    Rank-sum (Mann-Whitney) formulation with tie-averaged ranks, so ties
    count one half.
    """
    a = np.asarray(id_scores, np.float64).ravel()
    b = np.asarray(ood_scores, np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise UsageError("auroc needs at least one score on each side")
    both = np.concatenate([a, b])
    order = np.argsort(both, kind="mergesort")
    sv = both[order]
    fresh = np.ones(sv.size, bool)
    fresh[1:] = sv[1:] != sv[:-1]
    gid = np.cumsum(fresh) - 1
    counts = np.bincount(gid)
    ends = np.cumsum(counts)
    starts = ends - counts
    avg = (starts + 1 + ends) / 2.0  # mean of ranks start+1..end
    ranks = np.empty(sv.size, np.float64)
    ranks[order] = avg[gid]
    r_id = ranks[: a.size].sum()
    u = r_id - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


# ---------------------------------------------------------------------------
# equivariance probe


@dataclass
class GapCurve:
    lambdas: np.ndarray
    gap_mean: np.ndarray
    gap_std: np.ndarray
    pair_count: int


def equivariance_gap(model: ModelSpec, x_a, x_b, lambda_grid, batch: int = 256) -> GapCurve:
    """|| g(mix(x_a, x_b)) - mix(g(x_a), g(x_b)) || per pair, summarized per lambda.

    x_a and x_b are aligned stacks of P inputs (Tensor or ndarray).  Norms are
    taken per pair in float64; gap_std is the population std over pairs.
    """
    xa = x_a.data if isinstance(x_a, Tensor) else np.asarray(x_a, np.float32)
    xb = x_b.data if isinstance(x_b, Tensor) else np.asarray(x_b, np.float32)
    if xa.shape != xb.shape:
        raise UsageError(f"pair stacks must align, got {xa.shape} vs {xb.shape}")
    if xa.shape[0] < 1:
        raise UsageError("need at least one pair")
    grid = [float(l) for l in lambda_grid]
    if not grid or any(not (0.0 <= l <= 1.0) for l in grid):
        raise ValidationError(f"lambda grid must lie in [0, 1], got {lambda_grid}")
    ra = _batched_reps(model, xa, batch).astype(np.float64)
    rb = _batched_reps(model, xb, batch).astype(np.float64)
    means, stds = [], []
    for lam in grid:
        xm = (lam * xa + (1.0 - lam) * xb).astype(np.float32)
        rm = _batched_reps(model, xm, batch).astype(np.float64)
        gaps = np.linalg.norm(rm - (lam * ra + (1.0 - lam) * rb), axis=1)
        means.append(gaps.mean())
        stds.append(gaps.std())
    return GapCurve(np.asarray(grid), np.asarray(means), np.asarray(stds), xa.shape[0])


def pca_project(reps, dims: int = 2) -> np.ndarray:
    """Center and project onto the top principal directions (SVD).

    Component signs follow the convention that each direction's
    largest-magnitude loading is positive, so projections are reproducible.
    """
    r = reps.data if isinstance(reps, Tensor) else np.asarray(reps)
    r = np.asarray(r, np.float64)
    if r.ndim != 2 or r.shape[1] < dims:
        raise UsageError(f"need (N, D>= {dims}) representations, got {r.shape}")
    if r.shape[0] < dims + 1:
        raise UsageError(f"need at least {dims + 1} points, got {r.shape[0]}")
    centered = r - r.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:dims]
    for i in range(dims):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def write_gap_curve_csv(curve: GapCurve, path):
    with open(path, "w") as fh:
        fh.write("lambda,gap_mean,gap_std\n")
        for lam, m, s in zip(curve.lambdas, curve.gap_mean, curve.gap_std):
            fh.write(f"{float(lam)!r},{float(m)!r},{float(s)!r}\n")


def read_gap_curve_csv(path) -> GapCurve:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "lambda,gap_mean,gap_std":
            raise UsageError(f"unexpected gap curve header: {header}")
        rows = [tuple(float(v) for v in line.split(",")) for line in fh if line.strip()]
    arr = np.asarray(rows, np.float64)
    return GapCurve(arr[:, 0], arr[:, 1], arr[:, 2], -1)
