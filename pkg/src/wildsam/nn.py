"""Parameter containers and the handful of layers the model needs."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import Tensor


class Parameter(Tensor):
    """A leaf tensor owned by a module. Frozen parameters never receive grads."""

    def __init__(self, data, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.trainable = trainable


class Module:
    """Recursive parameter discovery over attributes, dicts and lists."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[tuple[str, Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if p.trainable]

    def count_parameters(self) -> tuple[int, int]:
        """(total, trainable) element counts."""
        total = trainable = 0
        for p in self.parameters():
            total += p.size
            if p.trainable:
                trainable += p.size
        return total, trainable

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _walk(value, name: str):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{name}.{k}")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}")


def init_weight(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    return rng.standard_normal(shape) * (gain / math.sqrt(max(fan_in, 1)))


class Linear(Module):
    """Token-wise affine map; weight stored as [in, out]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 trainable: bool = True, zero_init: bool = False):
        w = np.zeros((d_in, d_out)) if zero_init else init_weight(rng, (d_in, d_out), d_in)
        self.weight = Parameter(w, trainable)
        self.bias = Parameter(np.zeros(d_out), trainable) if bias else None

    def forward(self, x):
        return nx.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """Stride-1 convolution with "same" zero padding."""

    def __init__(self, c_in: int, c_out: int, kernel, rng: np.random.Generator, groups: int = 1,
                 dilation: int = 1, bias: bool = True, trainable: bool = True):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        fan_in = (c_in // groups) * kh * kw
        self.weight = Parameter(init_weight(rng, (c_out, c_in // groups, kh, kw), fan_in), trainable)
        self.bias = Parameter(np.zeros(c_out), trainable) if bias else None
        self.groups = groups
        self.dilation = dilation

    def forward(self, x):
        return nx.conv2d(x, self.weight, self.bias, groups=self.groups, dilation=self.dilation)


class ConvTranspose2x(Module):
    """Kernel-2, stride-2 transposed convolution (doubles H and W)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, trainable: bool = True):
        self.weight = Parameter(init_weight(rng, (c_in, c_out, 2, 2), c_in), trainable)
        self.bias = Parameter(np.zeros(c_out), trainable)

    def forward(self, x):
        return nx.conv_transpose2d(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, trainable: bool = True, eps: float = 1e-6):
        self.gamma = Parameter(np.ones(dim), trainable)
        self.beta = Parameter(np.zeros(dim), trainable)
        self.eps = eps

    def forward(self, x):
        return nx.layer_norm(x, self.gamma, self.beta, self.eps)


def tokens_to_spatial(tokens, grid: tuple[int, int]):
    """[B, N, D] -> [B, D, h, w]."""
    B, N, D = tokens.shape
    h, w = grid
    if h * w != N:
        raise nx.DimensionError(f"{N} tokens do not form a {h}x{w} grid")
    return nx.reshape(nx.transpose(tokens, (0, 2, 1)), (B, D, h, w))


def spatial_to_tokens(x):
    """[B, D, h, w] -> [B, h*w, D]."""
    B, D, h, w = x.shape
    return nx.transpose(nx.reshape(x, (B, D, h * w)), (0, 2, 1))


def component_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent generator per model component so toggling one never shifts another."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(p) for p in path]]))
