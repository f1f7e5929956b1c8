"""Small trainable models, split into a feature extractor g and a linear head q.

The split matters: the equivariance penalty acts on g's output (the
representation) while classification reads q(g(x)).  forward() computes the
representation once and feeds the same tensor to the head, so logits are
exactly head(representation) with no recomputation drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

_INIT_DTYPE = np.float32


def _kaiming_uniform(rng, shape, fan_in) -> Tensor:
    bound = float(np.sqrt(6.0 / fan_in))
    w = rng.uniform(-bound, bound, size=shape).astype(_INIT_DTYPE)
    return Tensor(w, requires_grad=True)


def _zero_bias(n) -> Tensor:
    return Tensor(np.zeros(n, _INIT_DTYPE), requires_grad=True)


@dataclass
class Dense:
    w: Tensor
    b: Tensor

    def apply(self, x):
        return ad.bias_add(ad.matmul(x, self.w), self.b)

    def params(self):
        return [("w", self.w), ("b", self.b)]


@dataclass
class Conv:
    w: Tensor
    b: Tensor
    stride: int = 1
    pad: int = 1

    def apply(self, x):
        return ad.bias_add(ad.conv2d(x, self.w, self.stride, self.pad), self.b)

    def params(self):
        return [("w", self.w), ("b", self.b)]


@dataclass
class Relu:
    def apply(self, x):
        return ad.relu(x)

    def params(self):
        return []


@dataclass
class AvgPool:
    k: int = 2

    def apply(self, x):
        return ad.avgpool2d(x, self.k)

    def params(self):
        return []


@dataclass
class Flatten:
    def apply(self, x):
        return ad.flatten(x)

    def params(self):
        return []


@dataclass
class ModelSpec:
    """A feature extractor (layer list) plus a single linear head."""

    extractor: list
    head: Dense
    representation_dim: int
    class_count: int
    arch: str = ""

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.extractor):
            for nm, t in layer.params():
                out.append((f"g{i}.{nm}", t))
        for nm, t in self.head.params():
            out.append((f"q.{nm}", t))
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def parameter_count(self):
        return sum(int(t.size) for t in self.parameters())


@dataclass
class ForwardOutput:
    representation: Tensor
    logits: Tensor


def represent(model: ModelSpec, x: Tensor) -> Tensor:
    """Run only the extractor g."""
    h = x
    for layer in model.extractor:
        h = layer.apply(h)
    return h


def forward(model: ModelSpec, x: Tensor) -> ForwardOutput:
    rep = represent(model, x)
    return ForwardOutput(representation=rep, logits=model.head.apply(rep))


def small_mlp(input_dim: int, hidden_dims, class_count: int, seed: int = 0) -> ModelSpec:
    """Fully connected relu net; the last hidden activation is the representation.

    Inputs may arrive as images (N, C, H, W); a leading Flatten brings them to
    (N, input_dim).  Weights are Kaiming-uniform, biases zero.
    """
    hidden_dims = list(hidden_dims)
    if input_dim < 1 or class_count < 2 or not hidden_dims or min(hidden_dims) < 1:
        raise ConfigError(
            f"bad mlp spec: input_dim={input_dim}, hidden={hidden_dims}, classes={class_count}")
    rng = np.random.default_rng(seed)
    layers: list = [Flatten()]
    prev = input_dim
    for h in hidden_dims:
        layers.append(Dense(_kaiming_uniform(rng, (prev, h), prev), _zero_bias(h)))
        layers.append(Relu())
        prev = h
    head = Dense(_kaiming_uniform(rng, (prev, class_count), prev), _zero_bias(class_count))
    arch = "mlp:" + ",".join(str(h) for h in hidden_dims)
    return ModelSpec(layers, head, prev, class_count, arch)


def small_cnn(channels: int, image_hw: int, class_count: int, seed: int = 0,
              rep_dim: int = 64) -> ModelSpec:
    """Three conv-relu-avgpool stages, flatten, dense to a rep_dim representation.

    conv kernels are 3x3 stride 1 pad 1 with 16 filters each; pooling halves
    the grid three times, so image_hw must be a positive multiple of 8.
    """
    if channels < 1 or class_count < 2:
        raise ConfigError(f"bad cnn spec: channels={channels}, classes={class_count}")
    if image_hw < 8 or image_hw % 8:
        raise ConfigError(f"image_hw must be a multiple of 8 and >= 8, got {image_hw}")
    rng = np.random.default_rng(seed)
    layers: list = []
    prev = channels
    for _ in range(3):
        fan_in = prev * 9
        layers.append(Conv(_kaiming_uniform(rng, (16, prev, 3, 3), fan_in), _zero_bias(16)))
        layers.append(Relu())
        layers.append(AvgPool(2))
        prev = 16
    side = image_hw // 8
    flat = 16 * side * side
    layers.append(Flatten())
    layers.append(Dense(_kaiming_uniform(rng, (flat, rep_dim), flat), _zero_bias(rep_dim)))
    head = Dense(_kaiming_uniform(rng, (rep_dim, class_count), rep_dim), _zero_bias(class_count))
    return ModelSpec(layers, head, rep_dim, class_count, "cnn")
