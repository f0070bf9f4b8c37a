"""Wavelet-guided subband enhancement: Haar DWT to a dense high-frequency prompt."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import numerics as nx
from .nn import Conv2d, Linear, Module, component_rng, spatial_to_tokens
from .numerics import DimensionError

BANDS = ("LH", "HL", "HH")


class SubbandSet(NamedTuple):
    LL: object
    LH: object
    HL: object
    HH: object


def dwt_haar(x) -> SubbandSet:
    """Single-level orthonormal Haar over 2x2 blocks [[a, b], [c, d]].

    LL=(a+b+c+d)/2, LH=(a+b-c-d)/2, HL=(a-b+c-d)/2, HH=(a-b-c+d)/2.
    """
    x = nx.as_tensor(x)
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise DimensionError(f"dwt_haar needs even height and width, got {H}x{W}")
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    top, bottom = a + b, c + d
    left, right = a + c, b + d
    ad, bc = a + d, b + c
    return SubbandSet(
        LL=(top + bottom) * 0.5,
        LH=(top - bottom) * 0.5,
        HL=(left - right) * 0.5,
        HH=(ad - bc) * 0.5,
    )


def idwt_haar(s: SubbandSet):
    """Inverse of :func:`dwt_haar`."""
    LL, LH, HL, HH = (nx.as_tensor(t) for t in s)
    if not (LL.shape == LH.shape == HL.shape == HH.shape):
        raise DimensionError("subbands must share one shape")
    a = (LL + LH + HL + HH) * 0.5
    b = (LL + LH - HL - HH) * 0.5
    c = (LL - LH + HL - HH) * 0.5
    d = (LL - LH - HL + HH) * 0.5
    h, w = LL.shape[-2:]
    lead = LL.shape[:-2]
    top = nx.stack([a, b], axis=-1)        # [..., h, w, 2]
    bottom = nx.stack([c, d], axis=-1)
    blocks = nx.stack([top, bottom], axis=-3)  # [..., h, 2, w, 2]
    return nx.reshape(blocks, lead + (2 * h, 2 * w))


class AFM(Module):
    """Direction-matched depthwise convs, 1x1 projection, GELU, then tokens."""

    KERNELS = {"LH": [(1, 5), (5, 1)], "HL": [(5, 1), (1, 5)], "HH": [(3, 3)]}

    def __init__(self, band: str, channels: int, width: int, rng):
        self.band = band
        self.convs = [Conv2d(channels, channels, k, rng, groups=channels) for k in self.KERNELS[band]]
        self.proj = Conv2d(channels, width, 1, rng)

    def forward(self, x):
        for conv in self.convs:
            x = conv(x)
        return spatial_to_tokens(nx.gelu(self.proj(x)))


class SpectralCouplingBridge(Module):
    """F* = F + Linear(softmax(F Wq (S Wk)^T / sqrt(d)) S Wv); output Linear starts at zero."""

    def __init__(self, width: int, rng):
        self.wq = Linear(width, width, rng, bias=False)
        self.wk = Linear(width, width, rng, bias=False)
        self.wv = Linear(width, width, rng, bias=False)
        self.out = Linear(width, width, rng, zero_init=True)

    def forward(self, f, context):
        if f.shape[-1] != context.shape[-1]:
            raise DimensionError(f"token width {f.shape[-1]} != context width {context.shape[-1]}")
        attended = nx.scaled_dot_attention(self.wq(f), self.wk(context), self.wv(context))
        return f + self.out(attended)


class SEGate(Module):
    """Channel gate s = sigmoid(W4 GELU(W3 mean_tokens(F))); returns s * F."""

    def __init__(self, channels: int, rng, ratio: int = 4):
        self.fc1 = Linear(channels, max(1, channels // ratio), rng)
        self.fc2 = Linear(max(1, channels // ratio), channels, rng)

    def gate(self, f):
        return nx.sigmoid(self.fc2(nx.gelu(self.fc1(nx.mean(f, axis=1)))))

    def forward(self, f):
        s = self.gate(f)
        return nx.reshape(s, (s.shape[0], 1, s.shape[1])) * f


def concat_bands(f_lh, f_hl, f_hh):
    """Feature-axis concatenation in LH, HL, HH order."""
    if not (f_lh.shape[1] == f_hl.shape[1] == f_hh.shape[1]):
        raise DimensionError("subband token counts differ")
    return nx.concat([f_lh, f_hl, f_hh], axis=-1)


class WGSE(Module):
    def __init__(self, channels: int, embed_dim: int, width: int | None = None, seed: int = 0):
        width = width or embed_dim
        self.width = width
        self.embed_dim = embed_dim
        self.afm = {band: AFM(band, channels, width, component_rng(seed, 2, i)) for i, band in enumerate(BANDS)}
        self.scb = SpectralCouplingBridge(width, component_rng(seed, 2, 10))
        self.se = SEGate(3 * width, component_rng(seed, 2, 11))
        self.proj = Linear(3 * width, embed_dim, component_rng(seed, 2, 12), bias=False)

    def subband_tokens(self, x):
        bands = dwt_haar(x)
        return {band: self.afm[band](getattr(bands, band)) for band in BANDS}

    def shared_context(self, tokens: dict):
        return nx.concat([tokens[b] for b in BANDS], axis=1)

    def to_dense_prompt(self, p_hf, band_grid: tuple[int, int], grid: tuple[int, int]):
        B, N, _ = p_hf.shape
        hs, ws = band_grid
        if N != hs * ws:
            raise DimensionError(f"{N} tokens do not match subband grid {band_grid}")
        z = self.proj(p_hf)
        z = nx.reshape(nx.transpose(z, (0, 2, 1)), (B, self.embed_dim, hs, ws))
        return nx.resize_bilinear(z, grid)

    def stages(self, x, grid: tuple[int, int]) -> dict:
        """Every intermediate of the pipeline, for inspection."""
        x = nx.as_tensor(x)
        band_grid = (x.shape[2] // 2, x.shape[3] // 2)
        tokens = self.subband_tokens(x)
        context = self.shared_context(tokens)
        enhanced = {b: self.scb(tokens[b], context) for b in BANDS}
        fused = concat_bands(*(enhanced[b] for b in BANDS))
        p_hf = self.se(fused)
        prompt = self.to_dense_prompt(p_hf, band_grid, grid)
        return {"tokens": tokens, "context": context, "enhanced": enhanced,
                "fused": fused, "p_hf": p_hf, "prompt": prompt}

    def forward(self, x, grid: tuple[int, int]):
        return self.stages(x, grid)["prompt"]
