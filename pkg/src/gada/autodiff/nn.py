"""Layer-level building blocks: affine maps and batch normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter, Tensor, _make, add, as_tensor, matmul, relu

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class Affine:
    weight: Parameter  # (d_in, d_out)
    bias: Parameter  # (d_out,)

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, name: str, scale: float | None = None):
        std = np.sqrt(2.0 / d_in) if scale is None else scale
        return cls(
            Parameter(rng.normal(0.0, std, size=(d_in, d_out)), name=f"{name}.weight"),
            Parameter(np.zeros(d_out), name=f"{name}.bias"),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


@dataclass
class TwoLayerMLP:
    """``affine -> relu -> affine`` applied along the last axis."""

    first: Affine
    second: Affine

    @classmethod
    def init(cls, rng, d_in: int, d_hidden: int, d_out: int, name: str):
        return cls(
            Affine.init(rng, d_in, d_hidden, f"{name}.0"),
            Affine.init(rng, d_hidden, d_out, f"{name}.1"),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return self.second(relu(self.first(x)))

    def parameters(self) -> list[Parameter]:
        return self.first.parameters() + self.second.parameters()


@dataclass
class BatchNormParams:
    """Per-channel scale/shift plus running statistics for the last axis."""

    scale: Parameter
    shift: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    name: str = field(default="bn")

    @classmethod
    def init(cls, channels: int, name: str = "bn"):
        return cls(
            Parameter(np.ones(channels), name=f"{name}.scale", decay=False),
            Parameter(np.zeros(channels), name=f"{name}.shift", decay=False),
            np.zeros(channels),
            np.ones(channels),
            name=name,
        )

    def parameters(self) -> list[Parameter]:
        return [self.scale, self.shift]

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}


def batch_norm(x, bn: BatchNormParams, mode: str = "train") -> Tensor:
    """Normalize every channel (last axis) over all remaining axes.

    Train mode uses batch statistics and updates the running estimates in
    place (unbiased variance, as PyTorch does); eval mode uses the running
    estimates and is a fixed affine map.
    """
    x = as_tensor(x)
    if x.shape[-1] != bn.scale.shape[0]:
        raise ValueError(f"batch_norm expects {bn.scale.shape[0]} channels, got shape {x.shape}")
    gamma, beta = bn.scale, bn.shift
    red = tuple(range(x.ndim - 1))

    if mode == "eval":
        inv = 1.0 / np.sqrt(bn.running_var + bn.eps)
        xhat = (x.data - bn.running_mean) * inv

        def back_eval(g):
            return (
                g * (gamma.data * inv),
                (g * xhat).sum(axis=red),
                g.sum(axis=red),
            )

        return _make(xhat * gamma.data + beta.data, (x, gamma, beta), back_eval)

    if mode != "train":
        raise ValueError(f"unknown batch_norm mode {mode!r}")

    n = x.size // x.shape[-1]
    mu = x.data.mean(axis=red)
    var = x.data.var(axis=red)
    inv = 1.0 / np.sqrt(var + bn.eps)
    xhat = (x.data - mu) * inv

    unbiased = var * n / (n - 1) if n > 1 else var
    bn.running_mean *= 1.0 - bn.momentum
    bn.running_mean += bn.momentum * mu
    bn.running_var *= 1.0 - bn.momentum
    bn.running_var += bn.momentum * unbiased

    def back_train(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=red) - xhat * (dxhat * xhat).mean(axis=red))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), back_train)
