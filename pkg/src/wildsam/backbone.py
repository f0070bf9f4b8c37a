"""Toy frozen ViT encoder with per-block Query/Value injection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .nn import LayerNorm, Linear, Module, Parameter, component_rng, tokens_to_spatial
from .numerics import DimensionError


@dataclass
class ViTConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    heads: int = 4
    depth: int = 4
    mlp_ratio: int = 4

    @property
    def grid(self) -> tuple[int, int]:
        g = self.image_size // self.patch_size
        return g, g

    @property
    def num_tokens(self) -> int:
        h, w = self.grid
        return h * w

    def validate(self) -> None:
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if min(self.image_size, self.patch_size, self.embed_dim, self.heads, self.depth) < 1:
            raise ValueError("ViT dimensions must be positive")


def adapter_layer_preset(name: str, depth: int) -> list[int]:
    """Block indices for the S / B / L settings: last quarter, last half, all blocks."""
    key = name.upper()
    if key in ("NONE", "OFF", ""):
        return []
    fraction = {"S": 0.25, "B": 0.5, "L": 1.0}.get(key)
    if fraction is None:
        raise ValueError(f"unknown adapter preset {name!r}; expected S, B, L or none")
    count = max(1, int(round(depth * fraction)))
    return list(range(depth - count, depth))


class PatchEmbed(Module):
    """Non-overlapping patch projection plus positional embedding (all frozen)."""

    def __init__(self, cfg: ViTConfig, rng: np.random.Generator):
        p = cfg.patch_size
        self.cfg = cfg
        self.proj = Linear(3 * p * p, cfg.embed_dim, rng, trainable=False)
        self.pos = Parameter(rng.standard_normal((cfg.num_tokens, cfg.embed_dim)) * 0.5,
                             trainable=False)

    def forward(self, img):
        img = nx.as_tensor(img)
        S, p = self.cfg.image_size, self.cfg.patch_size
        if img.ndim == 3:
            img = nx.reshape(img, (1,) + img.shape)
        if img.shape[1:] != (3, S, S):
            raise DimensionError(f"expected images of shape [B,3,{S},{S}], got {img.shape}")
        B = img.shape[0]
        g = S // p
        x = nx.reshape(img, (B, 3, g, p, g, p))
        x = nx.reshape(nx.transpose(x, (0, 2, 4, 1, 3, 5)), (B, g * g, 3 * p * p))
        return self.proj(x) + self.pos


class EncoderBlock(Module):
    """Pre-norm transformer block. Perturbations enter as Q + a*dq, V + a*dv."""

    def __init__(self, cfg: ViTConfig, rng: np.random.Generator):
        D = cfg.embed_dim
        self.heads = cfg.heads
        self.norm1 = LayerNorm(D, trainable=False)
        self.qkv = Linear(D, 3 * D, rng, trainable=False)
        self.proj = Linear(D, D, rng, trainable=False)
        self.norm2 = LayerNorm(D, trainable=False)
        self.fc1 = Linear(D, cfg.mlp_ratio * D, rng, trainable=False)
        self.fc2 = Linear(cfg.mlp_ratio * D, D, rng, trainable=False)

    def project_qkv(self, x, perturb=None, alpha=None):
        D = x.shape[-1]
        qkv = self.qkv(self.norm1(x))
        q = qkv[..., 0:D]
        k = qkv[..., D:2 * D]
        v = qkv[..., 2 * D:3 * D]
        if perturb is not None:
            dq, dv = perturb
            if dq.shape != q.shape or dv.shape != v.shape:
                raise DimensionError(f"perturbation {dq.shape}/{dv.shape} does not match Q/V {q.shape}")
            q = q + alpha * dq
            v = v + alpha * dv
        return q, k, v

    def forward(self, x, perturb=None, alpha=None):
        B, N, D = x.shape
        H = self.heads
        q, k, v = self.project_qkv(x, perturb, alpha)

        def heads(t):
            return nx.transpose(nx.reshape(t, (B, N, H, D // H)), (0, 2, 1, 3))

        a = nx.scaled_dot_attention(heads(q), heads(k), heads(v))
        a = nx.reshape(nx.transpose(a, (0, 2, 1, 3)), (B, N, D))
        x = x + self.proj(a)
        return x + self.fc2(nx.gelu(self.fc1(self.norm2(x))))


class Backbone(Module):
    """Frozen encoder. Only the per-block scalars ``alphas`` are trainable."""

    def __init__(self, cfg: ViTConfig, adapter_layers=(), seed: int = 0, tap_layer: int = -1):
        cfg.validate()
        self.cfg = cfg
        rng = component_rng(seed, 0)
        self.patch_embed = PatchEmbed(cfg, rng)
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.depth)]
        layers = sorted(set(int(i) for i in adapter_layers))
        for i in layers:
            if not 0 <= i < cfg.depth:
                raise ValueError(f"adapter layer {i} outside 0..{cfg.depth - 1}")
        self.adapter_layers = layers
        # alpha starts at zero so the adapted network equals the frozen one
        self.alphas = {str(i): Parameter(np.zeros(()), trainable=True) for i in layers}
        self.tap_layer = tap_layer % cfg.depth

    @property
    def grid(self) -> tuple[int, int]:
        return self.cfg.grid

    def encode(self, img, adapters=None):
        """Returns (final tokens [B,N,D], tap feature [B,D,h,w])."""
        x = self.patch_embed(img)
        tap = None
        adapters = adapters or {}
        for i, block in enumerate(self.blocks):
            key = str(i)
            adapter = adapters.get(key) if key in self.alphas else None
            if adapter is not None:
                x = block(x, adapter(x, self.grid), self.alphas[key])
            else:
                x = block(x)
            if i == self.tap_layer:
                tap = tokens_to_spatial(x, self.grid)
        return x, tap
