"""Mask decoder and the hybrid BCE + Dice loss."""
from __future__ import annotations

from . import numerics as nx
from .nn import Conv2d, ConvTranspose2x, Module, component_rng, tokens_to_spatial
from .numerics import DimensionError


class MaskDecoder(Module):
    """embedding + dense prompt -> two 2x transposed-conv stages -> 1x1 -> resize."""

    def __init__(self, embed_dim: int, seed: int = 0):
        rng = component_rng(seed, 3)
        d1 = max(1, embed_dim // 2)
        d2 = max(1, embed_dim // 4)
        self.up1 = ConvTranspose2x(embed_dim, d1, rng)
        self.up2 = ConvTranspose2x(d1, d2, rng)
        self.head = Conv2d(d2, 1, 1, rng)

    def forward(self, tokens, grid, prompt=None, out_size=None):
        x = tokens_to_spatial(tokens, grid)
        if prompt is not None:
            if tuple(prompt.shape) != tuple(x.shape):
                raise DimensionError(f"prompt {prompt.shape} does not match embedding {x.shape}")
            x = x + prompt
        x = nx.gelu(self.up1(x))
        x = nx.gelu(self.up2(x))
        logits = self.head(x)
        if out_size is not None:
            logits = nx.resize_bilinear(logits, out_size)
        B, _, H, W = logits.shape
        return nx.reshape(logits, (B, H, W))


def bce_loss(logits, gt):
    """Mean logit-form binary cross-entropy: softplus(x) - x*y."""
    logits = nx.as_tensor(logits)
    y = nx.as_tensor(gt, dtype=logits.dtype)
    if logits.shape != y.shape:
        raise DimensionError(f"logits {logits.shape} vs mask {y.shape}")
    return nx.mean(nx.softplus(logits) - logits * y)


def dice_loss(logits, gt, smooth: float = 1.0):
    """1 - (2 sum(p*y) + eps) / (sum p + sum y + eps), p = sigmoid(logits).

    For a batch [B, H, W] the sums run per image and the losses are averaged.
    """
    logits = nx.as_tensor(logits)
    y = nx.as_tensor(gt, dtype=logits.dtype)
    if logits.shape != y.shape:
        raise DimensionError(f"logits {logits.shape} vs mask {y.shape}")
    p = nx.sigmoid(logits)
    axes = None if logits.ndim == 2 else (-2, -1)
    inter = nx.tsum(p * y, axis=axes)
    ratio = (2.0 * inter + smooth) / (nx.tsum(p, axis=axes) + nx.tsum(y, axis=axes) + smooth)
    return nx.mean(1.0 - ratio)


def total_loss(logits, gt, lam: float = 1.0):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    bce = bce_loss(logits, gt)
    if lam == 0:
        return bce
    return bce + lam * dice_loss(logits, gt)
