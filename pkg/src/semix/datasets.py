"""Dataset container, binary readers, the synthetic shapes generator, and splits.

A Dataset always holds float32 images scaled to [0, 1] with layout
(N, C, H, W) and exactly one-hot float32 label rows.  Construction validates
both invariants so downstream code never has to.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import (ConfigError, FormatError, LengthError, ShapeError,
                     ValidationError)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073  # label byte + 32*32 R, G, B planes


@dataclass
class Dataset:
    images: Tensor
    labels: Tensor
    class_count: int
    name: str = "dataset"

    def __post_init__(self):
        if not isinstance(self.images, Tensor):
            self.images = Tensor(np.asarray(self.images, np.float32))
        if not isinstance(self.labels, Tensor):
            self.labels = Tensor(np.asarray(self.labels, np.float32))
        img = self.images.data
        lab = self.labels.data
        if img.ndim != 4:
            raise ShapeError(f"images must be (N, C, H, W), got {img.shape}")
        if lab.ndim != 2 or lab.shape[0] != img.shape[0]:
            raise ShapeError(f"labels must be (N, K) aligned with images, got {lab.shape}")
        if lab.shape[1] != self.class_count:
            raise ValidationError(
                f"label width {lab.shape[1]} != class_count {self.class_count}")
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            raise ValidationError("pixel values must lie in [0, 1]")
        onehot = np.isin(lab, (0.0, 1.0)).all() and (lab.sum(axis=1) == 1.0).all()
        if not onehot:
            raise ValidationError("every label row must be exactly one-hot")

    @property
    def n(self):
        return self.images.shape[0]

    def __len__(self):
        return self.images.shape[0]

    def class_ids(self) -> np.ndarray:
        return self.labels.data.argmax(axis=1)

    def subset(self, idx, name=None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            Tensor(self.images.data[idx]),
            Tensor(self.labels.data[idx]),
            self.class_count,
            name or self.name,
        )


def _one_hot(ids: np.ndarray, class_count: int) -> np.ndarray:
    out = np.zeros((ids.size, class_count), np.float32)
    out[np.arange(ids.size), ids] = 1.0
    return out


def read_idx(images_path, labels_path, class_count=None) -> Dataset:
    """Parse the big-endian IDX pair used by MNIST-style datasets."""
    with open(images_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise LengthError(f"{images_path}: header needs 16 bytes, file has {len(blob)}")
    magic, n, h, w = struct.unpack(">IIII", blob[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(
            f"{images_path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}")
    want = 16 + n * h * w
    if len(blob) != want:
        raise LengthError(f"{images_path}: expected {want} bytes for {n} {h}x{w} images, got {len(blob)}")
    images = np.frombuffer(blob, np.uint8, offset=16).reshape(n, 1, h, w)

    with open(labels_path, "rb") as fh:
        lblob = fh.read()
    if len(lblob) < 8:
        raise LengthError(f"{labels_path}: header needs 8 bytes, file has {len(lblob)}")
    lmagic, ln = struct.unpack(">II", lblob[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(
            f"{labels_path}: bad magic 0x{lmagic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(lblob) != 8 + ln:
        raise LengthError(f"{labels_path}: expected {8 + ln} bytes for {ln} labels, got {len(lblob)}")
    if ln != n:
        raise LengthError(f"label count {ln} != image count {n}")
    ids = np.frombuffer(lblob, np.uint8, offset=8)
    k = int(class_count) if class_count else int(ids.max()) + 1 if ids.size else 2
    if ids.size and ids.max() >= k:
        raise FormatError(f"label value {ids.max()} outside {k} classes")
    return Dataset(
        Tensor(images.astype(np.float32) / 255.0),
        Tensor(_one_hot(ids, k)),
        k,
        name="idx",
    )


def write_idx(ds: Dataset, images_path, labels_path):
    """Serialize a single-channel dataset as an IDX pair (round-trip of read_idx)."""
    n, c, h, w = ds.images.shape
    if c != 1:
        raise ConfigError(f"IDX export is single-channel, dataset has {c} channels")
    px = np.rint(ds.images.data * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(px.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(ds.class_ids().astype(np.uint8).tobytes())


def read_cifar_binary(path, class_count: int = 10) -> Dataset:
    """Parse one CIFAR-10 style binary batch: 3073-byte records, channel planes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob or len(blob) % CIFAR_RECORD:
        raise LengthError(
            f"{path}: size {len(blob)} is not a positive multiple of {CIFAR_RECORD}")
    raw = np.frombuffer(blob, np.uint8).reshape(-1, CIFAR_RECORD)
    ids = raw[:, 0]
    if ids.max() >= class_count:
        raise FormatError(f"{path}: label {ids.max()} outside {class_count} classes")
    images = raw[:, 1:].reshape(-1, 3, 32, 32)
    return Dataset(
        Tensor(images.astype(np.float32) / 255.0),
        Tensor(_one_hot(ids.astype(np.int64), class_count)),
        class_count,
        name="cifar",
    )


# ---------------------------------------------------------------------------
# synthetic shapes

_SHAPES = ("disk", "square", "cross", "ring", "triangle", "bar")


def _draw_shape(kind, hw, cy, cx, r):
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float64)
    dy = yy - cy
    dx = xx - cx
    if kind == "disk":
        m = dy * dy + dx * dx <= r * r
    elif kind == "square":
        m = (np.abs(dy) <= r) & (np.abs(dx) <= r)
    elif kind == "cross":
        t = max(1.0, 0.35 * r)
        m = ((np.abs(dy) <= t) & (np.abs(dx) <= r)) | ((np.abs(dx) <= t) & (np.abs(dy) <= r))
    elif kind == "ring":
        d2 = dy * dy + dx * dx
        m = (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    elif kind == "triangle":
        m = (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) * 0.5)
    elif kind == "bar":
        m = (np.abs(dy) <= max(1.0, 0.35 * r)) & (np.abs(dx) <= r)
    else:  # pragma: no cover
        raise ConfigError(f"unknown shape {kind}")
    return m


def synth_shapes(n: int, image_hw: int = 16, class_count: int = 3, noise: float = 0.05,
                 seed: int = 0) -> Dataset:
    """Grayscale images of simple shapes, one class per shape kind.

    Classes cycle round-robin over sample index, so any prefix is nearly
    balanced.  Per image the generator draws vertical jitter, horizontal
    jitter, and a size factor; Gaussian pixel noise (std `noise`) is added at
    the end and the result clamped to [0, 1].
    """
    if not (2 <= class_count <= len(_SHAPES)):
        raise ConfigError(f"class_count must be in [2, {len(_SHAPES)}], got {class_count}")
    if image_hw < 8:
        raise ConfigError(f"image_hw must be >= 8, got {image_hw}")
    if n < 1:
        raise ConfigError(f"need at least one sample, got {n}")
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng([seed, 0x5E57])
    imgs = np.zeros((n, 1, image_hw, image_hw), np.float64)
    ids = np.arange(n) % class_count
    half = image_hw / 2.0
    for i in range(n):
        cy = half + rng.uniform(-image_hw / 8.0, image_hw / 8.0)
        cx = half + rng.uniform(-image_hw / 8.0, image_hw / 8.0)
        r = image_hw * rng.uniform(0.20, 0.32)
        imgs[i, 0][_draw_shape(_SHAPES[ids[i]], image_hw, cy, cx, r)] = 0.9
    if noise > 0:
        imgs += noise * rng.standard_normal(imgs.shape)
    np.clip(imgs, 0.0, 1.0, out=imgs)
    return Dataset(
        Tensor(imgs.astype(np.float32)),
        Tensor(_one_hot(ids, class_count)),
        class_count,
        name=f"synth-{class_count}",
    )


def split(ds: Dataset, fractions, seed: int = 0):
    """Class-stratified split into len(fractions) parts.

    Fractions must sum to 1 (1e-6).  Split sizes hit round(N * f) exactly via
    largest-remainder allocation; per-class counts are balanced first, then
    single samples move between splits until the global sizes match, keeping
    per-class proportions within about one sample.
    """
    fr = [float(f) for f in fractions]
    if not fr or min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-6:
        raise ConfigError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    nparts = len(fr)
    rng = np.random.default_rng([seed, 0x51DE])
    ids = ds.class_ids()

    def largest_remainder(total, fracs):
        ideal = [total * f for f in fracs]
        out = [int(v) for v in ideal]
        rem = [v - o for v, o in zip(ideal, out)]
        short = total - sum(out)
        for j in sorted(range(len(fracs)), key=lambda j: (-rem[j], j))[:short]:
            out[j] += 1
        return out

    target = largest_remainder(ds.n, fr)
    per_class = {}
    quotas = np.zeros((ds.class_count, nparts), np.int64)
    for c in range(ds.class_count):
        idx = np.flatnonzero(ids == c)
        rng.shuffle(idx)
        per_class[c] = idx
        quotas[c] = largest_remainder(idx.size, fr)

    # nudge quotas until global split sizes are exact
    totals = quotas.sum(axis=0)
    while True:
        over = [k for k in range(nparts) if totals[k] > target[k]]
        under = [k for k in range(nparts) if totals[k] < target[k]]
        if not over:
            break
        ko, ku = over[0], under[0]
        excess = quotas[:, ko] - np.array([per_class[c].size * fr[ko] for c in range(ds.class_count)])
        c = int(np.argmax(excess))
        quotas[c, ko] -= 1
        quotas[c, ku] += 1
        totals[ko] -= 1
        totals[ku] += 1

    parts = []
    for k in range(nparts):
        chosen = []
        for c in range(ds.class_count):
            start = int(quotas[c, :k].sum())
            chosen.append(per_class[c][start:start + int(quotas[c, k])])
        idx = np.sort(np.concatenate(chosen))
        parts.append(ds.subset(idx, name=f"{ds.name}-part{k}"))
    return parts
