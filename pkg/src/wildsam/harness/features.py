"""Raw feature-map files for offline inspection.

Same spirit as IGRAM patches: a 32-byte little-endian header, then a
row-major float32 payload::

    "FEAT"  u32 version=1  u32 channels  u32 height  u32 width  u32 reserved=0  u64 reserved=0
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..phase_io import FormatError

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
FEAT_HEADER = struct.Struct("<4sIIIIIQ")


def write_feature(path, array) -> Path:
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"feature maps are [C,H,W], got shape {a.shape}")
    C, H, W = a.shape
    path = Path(path)
    path.write_bytes(FEAT_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, C, H, W, 0, 0) + a.tobytes(order="C"))
    return path


def read_feature(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < FEAT_HEADER.size:
        raise FormatError("truncated feature header", len(blob))
    magic, version, C, H, W, r1, r2 = FEAT_HEADER.unpack_from(blob)
    if magic != FEAT_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != FEAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if r1 or r2:
        raise FormatError("reserved fields must be zero", 20)
    need = FEAT_HEADER.size + 4 * C * H * W
    if len(blob) != need:
        raise FormatError(f"payload size {len(blob) - FEAT_HEADER.size}, expected {need - FEAT_HEADER.size}",
                          min(len(blob), need))
    return np.frombuffer(blob, dtype="<f4", offset=FEAT_HEADER.size).reshape(C, H, W).copy()


def extract_features(model, img: np.ndarray) -> dict:
    """Named [C,H,W] maps for one prepared image ``[3,S,S]``."""
    from .. import nn
    from ..wgse import dwt_haar

    x = img[None]
    feats = model.features(x)
    grid = model.grid
    out = {
        "embedding": nn.tokens_to_spatial(feats["tokens"], grid).data[0],
        "tap": feats["tap"].data[0],
    }
    for name, band in zip(("LL", "LH", "HL", "HH"), dwt_haar(feats["tap"])):
        out[f"tap_{name}"] = band.data[0]
    if feats["prompt"] is not None:
        out["prompt"] = feats["prompt"].data[0]
    out["logits"] = model(x).data
    return out
