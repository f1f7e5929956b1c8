"""Training loop: mixed-sample label loss plus the representation equivariance penalty.

The total objective per batch is

    CE(q(g(x_mix)), y_mix) + gamma * mean_i || g(x_mix)_i - mix(g(x_i), g(x_j))_i ||

with the same lambda_eff in both mixes.  gamma == 0 skips the penalty
entirely (no extra forward passes, no extra ops on the tape), which keeps the
gamma=0 trainer step-for-step identical to a plain mixup trainer on the same
rng stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, NumericError, TrainingAbort, UsageError
from .mixing import MixedBatch, MixPolicy, make_mixed_batch, mix_representations
from .models import ModelSpec, forward, represent


@dataclass(frozen=True)
class SemConfig:
    gamma: float = 0.0
    stop_gradient_targets: bool = False
    penalty_variant: str = "norm"  # norm | squared-norm

    def __post_init__(self):
        if self.gamma < 0 or not math.isfinite(self.gamma):
            raise ConfigError(f"gamma must be finite and >= 0, got {self.gamma}")
        if self.penalty_variant not in ("norm", "squared-norm"):
            raise ConfigError(f"unknown penalty variant {self.penalty_variant!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    lr_milestones: tuple | None = None  # None -> 50% and 75% of epochs
    lr_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    mix: MixPolicy = field(default_factory=MixPolicy)
    sem: SemConfig = field(default_factory=SemConfig)
    es_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"epochs={self.epochs}, batch_size={self.batch_size} must be >= 1")
        if self.lr <= 0 or self.lr_factor <= 0:
            raise ConfigError("lr and lr_factor must be positive")
        if not (0.0 <= self.es_fraction <= 1.0):
            raise ConfigError(f"es_fraction must lie in [0, 1], got {self.es_fraction}")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("momentum and weight_decay must be >= 0")


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    loss_total: float
    loss_label: float
    loss_sem: float
    accuracy: float


METRICS_HEADER = "epoch,split,loss_total,loss_label,loss_sem,accuracy"


def metrics_line(rec: MetricsRecord) -> str:
    # repr keeps full float precision, so rewriting the same run is byte-identical
    return (f"{rec.epoch},{rec.split},{rec.loss_total!r},{rec.loss_label!r},"
            f"{rec.loss_sem!r},{rec.accuracy!r}")


def read_metrics_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != METRICS_HEADER:
            raise UsageError(f"unexpected metrics header: {header!r}")
        records = []
        for line in fh:
            if not line.strip():
                continue
            ep, split, lt, ll, ls, acc = line.strip().split(",")
            records.append(MetricsRecord(int(ep), split, float(lt), float(ll),
                                         float(ls), float(acc)))
    return records


def epoch_rng(seed: int, epoch: int):
    """The per-epoch stream; published so reference trainers can share it."""
    return np.random.default_rng([seed, epoch])


def resolve_milestones(cfg: TrainConfig):
    if cfg.lr_milestones is not None:
        return tuple(int(m) for m in cfg.lr_milestones)
    return (int(cfg.epochs * 0.5), int(cfg.epochs * 0.75))


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    decays = sum(1 for m in resolve_milestones(cfg) if epoch >= m)
    return cfg.lr * cfg.lr_factor ** decays


def es_epoch_count(cfg: TrainConfig) -> int:
    # trailing mix-free epochs; round half-up so the count is deterministic
    return int(cfg.es_fraction * cfg.epochs + 0.5)


def _batch_loss(model: ModelSpec, x_clean: Tensor, mixed: MixedBatch, sem: SemConfig):
    if mixed.x_mixed.shape[0] != x_clean.shape[0]:
        raise UsageError(
            f"mixed batch has {mixed.x_mixed.shape[0]} rows, clean batch {x_clean.shape[0]}")
    out = forward(model, mixed.x_mixed)
    label_loss = ad.softmax_cross_entropy(out.logits, mixed.y_mixed)
    if sem.gamma == 0.0 or mixed.kind == "none":
        return label_loss, float(label_loss.data), 0.0, out
    if mixed.pair is None:
        raise UsageError("penalty needs pairing information on the mixed batch")
    x_j = Tensor(x_clean.data[mixed.pair])
    if sem.stop_gradient_targets:
        with ad.pause_tape():
            r_i = represent(model, x_clean)
            r_j = represent(model, x_j)
    else:
        r_i = represent(model, x_clean)
        r_j = represent(model, x_j)
    target = mix_representations(r_i, r_j, mixed.lambda_eff)
    diff = ad.sub(out.representation, target)
    if sem.penalty_variant == "norm":
        penalty = ad.mean_row_norm(diff)
    else:
        penalty = ad.mean_row_sumsq(diff)
    total = ad.add(label_loss, ad.scale(penalty, sem.gamma))
    return total, float(label_loss.data), float(penalty.data), out


def sem_loss(model: ModelSpec, x_clean: Tensor, mixed: MixedBatch, sem: SemConfig):
    """Build the combined loss for one batch.

    Returns (loss_tensor, label_value, penalty_value) with the two values as
    plain floats before gamma weighting.  The penalty runs two clean forward
    passes through g for the mixing targets; with stop_gradient_targets those
    run off-tape so no gradient flows into g through r_i and r_j.
    """
    total, label_val, pen_val, _ = _batch_loss(model, x_clean, mixed, sem)
    return total, label_val, pen_val


def train_epoch(model: ModelSpec, data, config: TrainConfig, rng, mixing_enabled: bool,
                lr: float | None = None, velocities=None, epoch: int = 0) -> MetricsRecord:
    """One pass over `data` in shuffled full batches (ragged tail dropped).

    With mixing disabled the batch goes through unmixed (plain ERM step).
    Raises TrainingAbort if any op produces a non-finite value.
    """
    params = model.parameters()
    if velocities is None:
        velocities = ad.make_velocities(params)
    if lr is None:
        lr = config.lr
    n = data.n
    bs = min(config.batch_size, n)
    order = rng.permutation(n)
    steps = n // bs
    if steps < 1:
        raise UsageError(f"dataset of {n} samples cannot fill a batch of {bs}")
    tot = lab = pen = 0.0
    hits = 0
    seen = 0
    for step in range(steps):
        idx = order[step * bs:(step + 1) * bs]
        x = Tensor(data.images.data[idx])
        y = Tensor(data.labels.data[idx])
        try:
            if mixing_enabled:
                mixed = make_mixed_batch(x, y, config.mix, rng)
            else:
                mixed = MixedBatch(x, y, 1.0, np.arange(bs), None, "none")
            tape = Tape()
            with tape:
                loss, label_val, pen_val, out = _batch_loss(model, x, mixed, config.sem)
            ad.backward(loss, tape)
        except NumericError as e:
            raise TrainingAbort(
                f"non-finite value at epoch {epoch} batch {step} lr {lr}: {e}") from e
        ad.sgd_step(params, velocities, lr, config.momentum, config.weight_decay)
        ad.zero_grads(params)
        tot += float(loss.data)
        lab += label_val
        pen += pen_val
        # train accuracy counts hits against the dominant mixed label
        hits += int((out.logits.data.argmax(axis=1) == mixed.y_mixed.data.argmax(axis=1)).sum())
        seen += bs
    return MetricsRecord(epoch, "train", tot / steps, lab / steps, pen / steps, hits / seen)


def evaluate(model: ModelSpec, data, batch: int = 256):
    """Mean cross-entropy and accuracy over a dataset, without recording."""
    if data.n == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    loss_sum = 0.0
    hits = 0
    for start in range(0, data.n, batch):
        x = Tensor(data.images.data[start:start + batch])
        y = Tensor(data.labels.data[start:start + batch])
        out = forward(model, x)
        ce = ad.softmax_cross_entropy(out.logits, y)
        loss_sum += float(ce.data) * x.shape[0]
        hits += int((out.logits.data.argmax(axis=1) == y.data.argmax(axis=1)).sum())
    return loss_sum / data.n, hits / data.n


def train(model: ModelSpec, train_data, val_data, config: TrainConfig, on_record=None):
    """Full run: per-epoch shuffling, step-decay lr, trailing mix-free epochs.

    Returns (model, records).  `on_record` is called with each MetricsRecord
    as soon as it exists, so callers can persist metrics incrementally.
    """
    params = model.parameters()
    velocities = ad.make_velocities(params)
    es = es_epoch_count(config)
    records = []
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        mixing = config.mix.kind != "none" and epoch < config.epochs - es
        rng = epoch_rng(config.seed, epoch)
        rec = train_epoch(model, train_data, config, rng, mixing, lr, velocities, epoch)
        records.append(rec)
        if on_record:
            on_record(rec)
        if val_data is not None:
            vloss, vacc = evaluate(model, val_data)
            vrec = MetricsRecord(epoch, "val", vloss, vloss, 0.0, vacc)
            records.append(vrec)
            if on_record:
                on_record(vrec)
    return model, records
