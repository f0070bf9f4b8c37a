"""Phase-aware mixture-of-experts adapter.

Four convolutional experts see the same spatial feature map. A small router
turns its global average into a probability vector and the expert outputs are
mixed with those weights; a 1x1 head then emits the Query/Value perturbations
for the host encoder block.
"""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .nn import Conv2d, Linear, Module, component_rng, spatial_to_tokens, tokens_to_spatial
from .numerics import DimensionError, Tensor

EXPERT_NAMES = ("depthwise", "dilated", "asymmetric", "laplacian")

LAPLACIAN_3x3 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


class DepthwiseExpert(Module):
    """E1: 3x3 depthwise convolution, local texture."""

    def __init__(self, channels: int, rng):
        self.conv = Conv2d(channels, channels, 3, rng, groups=channels)

    def forward(self, x):
        return self.conv(x)


class DilatedExpert(Module):
    """E2: 3x3 convolution with dilation 2, wider context."""

    def __init__(self, channels: int, rng):
        self.conv = Conv2d(channels, channels, 3, rng, dilation=2)

    def forward(self, x):
        return self.conv(x)


class AsymmetricExpert(Module):
    """E3: 1x5 followed by 5x1, directional structure."""

    def __init__(self, channels: int, rng):
        self.conv_h = Conv2d(channels, channels, (1, 5), rng)
        self.conv_v = Conv2d(channels, channels, (5, 1), rng)

    def forward(self, x):
        return self.conv_v(self.conv_h(x))


class LaplacianExpert(Module):
    """E4: fixed depthwise Laplacian, then a learnable 1x1 mix.

    Edge replication keeps the Laplacian exactly zero on constant inputs,
    including at the border.
    """

    def __init__(self, channels: int, rng):
        self.kernel = np.broadcast_to(LAPLACIAN_3x3, (channels, 1, 3, 3)).copy()
        self.mix = Conv2d(channels, channels, 1, rng)

    def laplacian(self, x):
        x = nx.as_tensor(x)
        xp = nx.pad_edge(x, (1, 1, 1, 1))
        kernel = Tensor(self.kernel.astype(x.dtype))
        return nx.conv2d(xp, kernel, groups=x.shape[1], padding=0)

    def forward(self, x):
        return self.mix(self.laplacian(x))


EXPERT_TYPES = dict(zip(EXPERT_NAMES, (DepthwiseExpert, DilatedExpert, AsymmetricExpert, LaplacianExpert)))


class Router(Module):
    """GAP -> Linear(C, C/r) -> GELU -> Linear(C/r, n_experts, no bias) -> softmax."""

    def __init__(self, channels: int, n_experts: int, rng, ratio: int = 4):
        if channels < ratio:
            raise ValueError(f"router needs at least {ratio} channels, got {channels}")
        self.fc1 = Linear(channels, channels // ratio, rng)
        self.fc2 = Linear(channels // ratio, n_experts, rng, bias=False)

    def forward(self, x):
        g = nx.global_average_pool(x)
        return nx.softmax(self.fc2(nx.gelu(self.fc1(g))), axis=-1)


class PAMoEAdapter(Module):
    """Adapter for one encoder block; ``expert_mask`` selects the active experts."""

    def __init__(self, channels: int, embed_dim: int, seed: int = 0, block: int = 0,
                 expert_mask=(True, True, True, True), ratio: int = 4):
        mask = tuple(bool(m) for m in expert_mask)
        if len(mask) != 4 or not any(mask):
            raise ValueError("expert_mask needs four entries with at least one enabled")
        self.expert_mask = mask
        self.embed_dim = embed_dim
        self.experts = {
            name: EXPERT_TYPES[name](channels, component_rng(seed, 1, block, idx + 1))
            for idx, name in enumerate(EXPERT_NAMES) if mask[idx]
        }
        self.router = Router(channels, len(self.experts), component_rng(seed, 1, block, 10), ratio)
        self.head = Conv2d(channels, 2 * embed_dim, 1, component_rng(seed, 1, block, 11))

    def route(self, x):
        return self.router(x)

    def fuse(self, x, w):
        """Sum of w_i * E_i(x) with per-sample weights w [B, n_experts]."""
        x = nx.as_tensor(x)
        B = x.shape[0]
        experts = list(self.experts.values())
        if w.shape != (B, len(experts)):
            raise DimensionError(f"routing weights {w.shape} do not match {B} x {len(experts)} experts")
        out = None
        for i, expert in enumerate(experts):
            term = nx.reshape(w[:, i], (B, 1, 1, 1)) * expert(x)
            out = term if out is None else out + term
        return out

    def perturb_head(self, y, grid: tuple[int, int]):
        """1x1 conv to 2D channels, split and flatten to token shape."""
        if tuple(y.shape[2:]) != tuple(grid):
            raise DimensionError(f"feature grid {y.shape[2:]} differs from token grid {grid}")
        D = self.embed_dim
        z = self.head(y)
        dq = spatial_to_tokens(z[:, 0:D])
        dv = spatial_to_tokens(z[:, D:2 * D])
        return dq, dv

    def forward(self, tokens, grid: tuple[int, int]):
        x = tokens_to_spatial(tokens, grid)
        w = self.route(x)
        return self.perturb_head(self.fuse(x, w), grid)
