"""Checkpoint files: a length-prefixed text manifest followed by float32 payloads.

Layout (little-endian)::

    "WSCK"  u32 version  u64 manifest_bytes  manifest (UTF-8)  payload

The manifest holds ``config <key> = <value>`` lines, enough to rebuild the
model, then one ``param <name> float32 <shape> <offset> <count>`` line per
parameter. ``shape`` is comma separated (``-`` for scalars) and ``offset`` is a
byte offset into the payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..phase_io import FormatError
from .config import TrainConfig, dumps, loads

MAGIC = b"WSCK"
VERSION = 1
_HEAD = struct.Struct("<4sIQ")


class CompatibilityError(ValueError):
    """Checkpoint parameters do not match the model built from a config."""


def _shape_text(shape) -> str:
    return ",".join(str(s) for s in shape) if shape else "-"


def _parse_shape(text: str) -> tuple:
    return () if text == "-" else tuple(int(s) for s in text.split(","))


def to_bytes(model, cfg: TrainConfig) -> bytes:
    lines = [f"config {line}" for line in dumps(cfg).splitlines()]
    chunks = []
    offset = 0
    for name, p in model.named_parameters():
        arr = np.asarray(p.data, dtype="<f4", order="C")
        lines.append(f"param {name} float32 {_shape_text(arr.shape)} {offset} {arr.size}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = ("\n".join(lines) + "\n").encode()
    return _HEAD.pack(MAGIC, VERSION, len(manifest)) + manifest + b"".join(chunks)


def save(path, model, cfg: TrainConfig) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(model, cfg))
    return path


def parse(buf: bytes) -> tuple[TrainConfig, dict]:
    """Config and ``{name: float32 array}`` from checkpoint bytes."""
    if len(buf) < _HEAD.size:
        raise FormatError("checkpoint shorter than its header", len(buf))
    magic, version, n = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    start = _HEAD.size
    if len(buf) < start + n:
        raise FormatError("checkpoint manifest truncated", len(buf))
    try:
        manifest = buf[start:start + n].decode()
    except UnicodeDecodeError as exc:
        raise FormatError("checkpoint manifest is not UTF-8", start + exc.start) from exc
    payload = memoryview(buf)[start + n:]
    config_lines, params, expected = [], {}, 0
    for line in manifest.splitlines():
        kind, _, rest = line.partition(" ")
        if kind == "config":
            config_lines.append(rest)
        elif kind == "param":
            fields = rest.split()
            if len(fields) != 5 or fields[1] != "float32":
                raise FormatError(f"bad manifest entry {line!r}", start)
            name, _, shape, off, count = fields
            shape, off, count = _parse_shape(shape), int(off), int(count)
            if off + 4 * count > len(payload):
                raise FormatError(f"payload for {name} truncated", start + n + len(payload))
            arr = np.frombuffer(payload[off:off + 4 * count], dtype="<f4").reshape(shape)
            params[name] = arr.astype(np.float32)
            expected = max(expected, off + 4 * count)
        elif line.strip():
            raise FormatError(f"unknown manifest line {line!r}", start)
    if len(payload) != expected:
        raise FormatError("trailing bytes after checkpoint payload", start + n + expected)
    return loads("\n".join(config_lines)), params


def load_state(model, params: dict) -> None:
    """Copy arrays into ``model``; names and shapes must match exactly."""
    own = dict(model.named_parameters())
    missing = sorted(set(own) - set(params))
    extra = sorted(set(params) - set(own))
    if missing or extra:
        raise CompatibilityError(f"parameter mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, p in own.items():
        if p.data.shape != params[name].shape:
            raise CompatibilityError(f"{name}: checkpoint shape {params[name].shape} != model {p.data.shape}")
        p.data = params[name].astype(p.data.dtype)
        p.grad = None


def load(path, cfg: TrainConfig | None = None):
    """Rebuild a model from a checkpoint. Returns ``(model, cfg)``.

    If ``cfg`` is given the model is built from it instead of the stored config,
    and any parameter mismatch raises ``CompatibilityError``.
    """
    from .train import build_model

    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint: {exc}", 0) from exc
    stored, params = parse(buf)
    cfg = cfg or stored
    model = build_model(cfg)
    load_state(model, params)
    return model, cfg
