"""Run configuration: flat key = value files, defaults, and resolution order.

Precedence per key is CLI flag > environment (seed only, via SEMX_SEED) >
config file > built-in default.  The fully resolved config is echoed into the
run directory and into checkpoints; re-running from that echo reproduces the
run bit for bit.

Dataset and model are compact strings:

    dataset = synth:n=2000,hw=16,k=3,noise=0.05,seed=0
    dataset = idx:IMAGES_PATH:LABELS_PATH
    dataset = cifar:PATH
    dataset = noise:n=500,c=1,hw=16,seed=0        (uniform noise, OOD source)
    model   = cnn
    model   = mlp:64,32
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .datasets import Dataset, read_cifar_binary, read_idx, synth_shapes
from .errors import ConfigError
from .mixing import MixPolicy
from .models import ModelSpec, small_cnn, small_mlp
from .training import SemConfig, TrainConfig

SEED_ENV = "SEMX_SEED"

# canonical key order; the resolved echo always lists every key in this order
KEYS = (
    "dataset", "model", "epochs", "batch_size", "lr", "lr_milestones", "lr_factor",
    "momentum", "weight_decay", "mix_kind", "alpha", "gamma", "stop_gradient_targets",
    "penalty_variant", "es_fraction", "seed", "out_dir",
)

DEFAULTS = {
    "dataset": "synth:n=2000,hw=16,k=3,noise=0.05,seed=0",
    "model": "cnn",
    "epochs": "10",
    "batch_size": "64",
    "lr": "0.05",
    "lr_milestones": "auto",
    "lr_factor": "0.1",
    "momentum": "0.9",
    "weight_decay": "0.0005",
    "mix_kind": "linear",
    "alpha": "1.0",
    "gamma": "0.5",
    "stop_gradient_targets": "false",
    "penalty_variant": "norm",
    "es_fraction": "0.1",
    "seed": "0",
    "out_dir": "runs/default",
}


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    model: str
    epochs: int
    batch_size: int
    lr: float
    lr_milestones: tuple | None
    lr_factor: float
    momentum: float
    weight_decay: float
    mix_kind: str
    alpha: float
    gamma: float
    stop_gradient_targets: bool
    penalty_variant: str
    es_fraction: float
    seed: int
    out_dir: str


def _parse_bool(raw, key):
    if raw.lower() in ("true", "1", "yes"):
        return True
    if raw.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")


def _parse_int(raw, key):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected an integer, got {raw!r}") from None


def _parse_float(raw, key):
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected a number, got {raw!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"key {key!r}: value must be finite, got {raw!r}")
    return v


def _parse_milestones(raw, key):
    if raw.strip().lower() == "auto":
        return None
    if not raw.strip():
        return ()
    try:
        return tuple(int(tok) for tok in raw.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"key {key!r}: expected 'auto' or comma-separated ints, got {raw!r}") from None


def parse_kv_text(text, source="<config>"):
    """Flat key = value lines; '#' starts a comment; unknown keys are rejected."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = raw
    return out


def resolve(file_values=None, overrides=None, env=None) -> RunConfig:
    """Merge defaults <- file <- SEMX_SEED <- explicit overrides into a RunConfig."""
    env = os.environ if env is None else env
    raw = dict(DEFAULTS)
    raw.update(file_values or {})
    if env.get(SEED_ENV):
        raw["seed"] = env[SEED_ENV]
    for key, val in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown override {key!r}")
        if val is not None:
            raw[key] = str(val)
    mix_kind = raw["mix_kind"]
    if mix_kind not in ("none", "linear", "cutmix"):
        raise ConfigError(f"key 'mix_kind': must be none|linear|cutmix, got {mix_kind!r}")
    penalty = raw["penalty_variant"]
    if penalty not in ("norm", "squared-norm"):
        raise ConfigError(f"key 'penalty_variant': must be norm|squared-norm, got {penalty!r}")
    cfg = RunConfig(
        dataset=raw["dataset"],
        model=raw["model"],
        epochs=_parse_int(raw["epochs"], "epochs"),
        batch_size=_parse_int(raw["batch_size"], "batch_size"),
        lr=_parse_float(raw["lr"], "lr"),
        lr_milestones=_parse_milestones(raw["lr_milestones"], "lr_milestones"),
        lr_factor=_parse_float(raw["lr_factor"], "lr_factor"),
        momentum=_parse_float(raw["momentum"], "momentum"),
        weight_decay=_parse_float(raw["weight_decay"], "weight_decay"),
        mix_kind=mix_kind,
        alpha=_parse_float(raw["alpha"], "alpha"),
        gamma=_parse_float(raw["gamma"], "gamma"),
        stop_gradient_targets=_parse_bool(raw["stop_gradient_targets"], "stop_gradient_targets"),
        penalty_variant=penalty,
        es_fraction=_parse_float(raw["es_fraction"], "es_fraction"),
        seed=_parse_int(raw["seed"], "seed"),
        out_dir=raw["out_dir"],
    )
    to_train_config(cfg)  # surface bad value combinations now, not mid-run
    return cfg


def _fmt_value(key, cfg: RunConfig):
    v = getattr(cfg, key)
    if key == "lr_milestones":
        return "auto" if v is None else ",".join(str(m) for m in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_resolved(cfg: RunConfig) -> str:
    lines = ["# resolved run configuration; rerunning from this file reproduces the run",
             "# cutmix note: labels and representation mixing both use the clip-corrected area ratio"]
    for key in KEYS:
        lines.append(f"{key} = {_fmt_value(key, cfg)}")
    return "\n".join(lines) + "\n"


def load_config_file(path) -> dict:
    with open(path) as fh:
        return parse_kv_text(fh.read(), source=str(path))


def to_train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        lr_milestones=cfg.lr_milestones,
        lr_factor=cfg.lr_factor,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        mix=MixPolicy(kind=cfg.mix_kind, alpha=cfg.alpha),
        sem=SemConfig(gamma=cfg.gamma, stop_gradient_targets=cfg.stop_gradient_targets,
                      penalty_variant=cfg.penalty_variant),
        es_fraction=cfg.es_fraction,
        seed=cfg.seed,
    )


def _parse_kv_args(body, spec, allowed):
    out = {}
    for tok in body.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if "=" not in tok:
            raise ConfigError(f"dataset spec {spec!r}: expected k=v, got {tok!r}")
        k, v = tok.split("=", 1)
        if k not in allowed:
            raise ConfigError(f"dataset spec {spec!r}: unknown argument {k!r}")
        out[k] = v
    return out


def build_dataset(spec: str) -> Dataset:
    """Materialize a dataset from its config string."""
    if ":" not in spec:
        raise ConfigError(f"dataset spec {spec!r}: expected '<kind>:<args>'")
    kind, body = spec.split(":", 1)
    if kind == "synth":
        kv = _parse_kv_args(body, spec, ("n", "hw", "k", "noise", "seed"))
        return synth_shapes(
            n=_parse_int(kv.get("n", "2000"), "n"),
            image_hw=_parse_int(kv.get("hw", "16"), "hw"),
            class_count=_parse_int(kv.get("k", "3"), "k"),
            noise=_parse_float(kv.get("noise", "0.05"), "noise"),
            seed=_parse_int(kv.get("seed", "0"), "seed"),
        )
    if kind == "noise":
        kv = _parse_kv_args(body, spec, ("n", "hw", "c", "k", "seed"))
        n = _parse_int(kv.get("n", "500"), "n")
        hw = _parse_int(kv.get("hw", "16"), "hw")
        c = _parse_int(kv.get("c", "1"), "c")
        k = _parse_int(kv.get("k", "2"), "k")
        rng = np.random.default_rng([_parse_int(kv.get("seed", "0"), "seed"), 0x0D])
        imgs = rng.random((n, c, hw, hw)).astype(np.float32)
        labels = np.zeros((n, k), np.float32)
        labels[np.arange(n), np.arange(n) % k] = 1.0
        return Dataset(Tensor(imgs), Tensor(labels), k, name="noise")
    if kind == "idx":
        parts = body.split(":")
        if len(parts) != 2:
            raise ConfigError(f"dataset spec {spec!r}: expected idx:IMAGES:LABELS")
        return read_idx(parts[0], parts[1])
    if kind == "cifar":
        if not body:
            raise ConfigError(f"dataset spec {spec!r}: expected cifar:PATH")
        return read_cifar_binary(body)
    raise ConfigError(f"dataset spec {spec!r}: unknown kind {kind!r}")


def build_model(model_spec: str, dataset: Dataset, seed: int) -> ModelSpec:
    n, c, h, w = dataset.images.shape
    if model_spec == "cnn":
        if h != w:
            raise ConfigError(f"cnn needs square images, got {h}x{w}")
        return small_cnn(c, h, dataset.class_count, seed=seed)
    if model_spec.startswith("mlp:"):
        body = model_spec[4:]
        try:
            hidden = [int(tok) for tok in body.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"model spec {model_spec!r}: hidden sizes must be ints") from None
        if not hidden:
            raise ConfigError(f"model spec {model_spec!r}: needs at least one hidden size")
        return small_mlp(c * h * w, hidden, dataset.class_count, seed=seed)
    raise ConfigError(f"unknown model spec {model_spec!r} (expected 'cnn' or 'mlp:H1,H2,...')")
