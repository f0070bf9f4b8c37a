"""Wrapped-phase inputs: encoding, normalisation, synthetic scenes and IGRAM files."""
from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics.ops import bilinear_matrix

TWO_PI = 2.0 * math.pi

# affine map of each channel's theoretical range onto [0, 255], then mean/std
PIXEL_MEAN = 127.5
PIXEL_STD = 73.9
CHANNEL_RANGES = ((-math.pi, math.pi), (-1.0, 1.0), (-1.0, 1.0))

# float32 values bracketing [-pi, pi); float32(pi) itself lies outside
_F32_HI = np.nextafter(np.float32(math.pi), np.float32(0.0))
_F32_LO = np.nextafter(np.float32(-math.pi), np.float32(0.0))

IGRAM_MAGIC = b"IGRM"
IGRAM_VERSION = 1
IGRAM_HEADER = struct.Struct("<4sIIIQQ")


class FormatError(ValueError):
    """Malformed patch file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def wrap(phase) -> np.ndarray:
    """Fold phase into [-pi, pi); pi itself maps to -pi."""
    phase = np.asarray(phase, dtype=np.float64)
    out = phase - TWO_PI * np.floor((phase + math.pi) / TWO_PI)
    # floor can land exactly on the upper edge after rounding
    out = np.where(out >= math.pi, out - TWO_PI, out)
    return np.where(out < -math.pi, -math.pi, out)


def encode_channels(phase) -> np.ndarray:
    """[phi, sin phi, cos phi] stacked on a leading axis."""
    phase = np.asarray(phase, dtype=np.float64)
    return np.stack([phase, np.sin(phase), np.cos(phase)])


def normalize_for_backbone(triple) -> np.ndarray:
    """Map each channel's range to [0, 255], then standardise with fixed constants."""
    triple = np.asarray(triple, dtype=np.float64)
    out = np.empty_like(triple)
    for c, (lo, hi) in enumerate(CHANNEL_RANGES):
        out[c] = (triple[c] - lo) / (hi - lo) * 255.0
    return (out - PIXEL_MEAN) / PIXEL_STD


def to_pixel_range(triple) -> np.ndarray:
    """The [0, 255] mapping alone, before standardisation."""
    return np.asarray(normalize_for_backbone(triple)) * PIXEL_STD + PIXEL_MEAN


def denormalize(x) -> np.ndarray:
    """Inverse of :func:`normalize_for_backbone`."""
    x = np.asarray(x, dtype=np.float64) * PIXEL_STD + PIXEL_MEAN
    out = np.empty_like(x)
    for c, (lo, hi) in enumerate(CHANNEL_RANGES):
        out[c] = x[c] / 255.0 * (hi - lo) + lo
    return out


def resize_longest_side(img, target: int, pad: bool = True, fill: float = 0.0):
    """Aspect-preserving bilinear resize so the longer side equals ``target``.

    Works on [..., H, W]. With ``pad`` the result is a target x target canvas
    whose unused border holds ``fill`` (zero is the mean after normalisation).
    Returns ``(image, (h, w))`` where (h, w) is the content region.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[-2:]
    scale = target / max(H, W)
    h = max(1, int(round(H * scale)))
    w = max(1, int(round(W * scale)))
    out = bilinear_matrix(H, h) @ img @ bilinear_matrix(W, w).T
    if pad and (h, w) != (target, target):
        canvas = np.full(img.shape[:-2] + (target, target), fill, dtype=np.float64)
        canvas[..., :h, :w] = out
        out = canvas
    return out, (h, w)


def resize_mask(mask, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize for binary masks."""
    mask = np.asarray(mask)
    H, W = mask.shape
    rows = np.minimum((np.arange(size[0]) + 0.5) * H / size[0], H - 1).astype(int)
    cols = np.minimum((np.arange(size[1]) + 0.5) * W / size[1], W - 1).astype(int)
    return mask[rows[:, None], cols[None, :]]


@dataclass
class SceneParams:
    n_bowls: int = 2
    amp_range: tuple[float, float] = (2.0 * math.pi, 5.0 * math.pi)
    sigma_range: tuple[float, float] = (4.0, 9.0)
    ramp_grad_range: tuple[float, float] = (0.0, 0.15)
    noise_sigma_range: tuple[float, float] = (0.1, 0.5)
    mask_threshold: float = math.pi

    def validate(self) -> None:
        if self.n_bowls < 0:
            raise ValueError("n_bowls must be >= 0")
        for name in ("amp_range", "sigma_range", "ramp_grad_range", "noise_sigma_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        if self.sigma_range[0] <= 0 and self.n_bowls > 0:
            raise ValueError("sigma_range must be positive when bowls are present")
        if self.mask_threshold <= 0:
            raise ValueError("mask_threshold must be positive")


@dataclass(eq=False)
class PatchRecord:
    """One patch. ``scene_params`` is generator metadata and is not stored on disk,
    so equality covers phase, mask and seed only."""

    phase: np.ndarray
    mask: np.ndarray
    seed: int = 0
    scene_params: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.phase.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, PatchRecord):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.phase.shape == other.phase.shape
            and self.phase.dtype == other.phase.dtype
            and self.phase.tobytes() == other.phase.tobytes()
            and np.array_equal(self.mask, other.mask)
        )


def _uniform(rng: np.random.Generator, bounds) -> float:
    lo, hi = bounds
    return float(lo) if hi == lo else float(rng.uniform(lo, hi))


def deformation_field(seed: int, p: SceneParams, size: tuple[int, int]):
    """The unwrapped deformation, background ramp and noise that make up a scene."""
    H, W = size
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1)]))
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    d = np.zeros((H, W))
    bowls = []
    for _ in range(p.n_bowls):
        amp = _uniform(rng, p.amp_range) * (1.0 if rng.random() < 0.5 else -1.0)
        sigma = _uniform(rng, p.sigma_range)
        cy = rng.uniform(0.15 * H, 0.85 * H)
        cx = rng.uniform(0.15 * W, 0.85 * W)
        d += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))
        bowls.append((amp, sigma, cy, cx))
    grad = _uniform(rng, p.ramp_grad_range)
    theta = rng.uniform(0.0, TWO_PI)
    offset = rng.uniform(-math.pi, math.pi)
    ramp = grad * (np.cos(theta) * xx + np.sin(theta) * yy) + offset
    noise_sigma = _uniform(rng, p.noise_sigma_range)
    noise = rng.standard_normal((H, W)) * noise_sigma if noise_sigma > 0 else np.zeros((H, W))
    return d, ramp, noise, bowls


def synth_scene(seed: int, p: SceneParams | None = None, size=(64, 64)) -> PatchRecord:
    """Deterministic synthetic wrapped interferogram with its landslide mask.

    Gaussian deformation bowls over a random linear ramp, plus Gaussian phase
    noise, wrapped to [-pi, pi). The mask marks |deformation| > threshold.
    """
    p = p or SceneParams()
    p.validate()
    size = (int(size[0]), int(size[1]))
    d, ramp, noise, _ = deformation_field(seed, p, size)
    phase = np.clip(wrap(ramp + d + noise).astype(np.float32), _F32_LO, _F32_HI)
    mask = (np.abs(d) > p.mask_threshold).astype(np.uint8)
    return PatchRecord(phase=phase, mask=mask, seed=int(seed), scene_params=scene_snapshot(p))


def scene_snapshot(p: SceneParams) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(p).items()}


def write_patch(record: PatchRecord, path) -> None:
    """IGRAM file: 32-byte header, float32 phase, uint8 mask (all little-endian)."""
    phase = np.asarray(record.phase, dtype="<f4")
    mask = np.asarray(record.mask, dtype=np.uint8)
    if phase.shape != mask.shape or phase.ndim != 2:
        raise ValueError("phase and mask must be 2-D arrays of equal shape")
    H, W = phase.shape
    header = IGRAM_HEADER.pack(IGRAM_MAGIC, IGRAM_VERSION, H, W, int(record.seed) & (2**64 - 1), 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(phase.tobytes(order="C"))
        fh.write(mask.tobytes(order="C"))


def read_patch(path) -> PatchRecord:
    """Read an IGRAM file; scene parameters are not stored, so they come back empty."""
    blob = Path(path).read_bytes()
    return parse_patch(blob)


def parse_patch(blob: bytes) -> PatchRecord:
    if len(blob) < IGRAM_HEADER.size:
        raise FormatError(f"truncated header: {len(blob)} of {IGRAM_HEADER.size} bytes", len(blob))
    magic, version, H, W, seed, reserved = IGRAM_HEADER.unpack_from(blob, 0)
    if magic != IGRAM_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != IGRAM_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if reserved != 0:
        raise FormatError("reserved field must be zero", 24)
    n = H * W
    need = IGRAM_HEADER.size + 4 * n + n
    if len(blob) < need:
        raise FormatError(f"truncated payload: expected {need} bytes, got {len(blob)}", len(blob))
    if len(blob) > need:
        raise FormatError(f"{len(blob) - need} trailing bytes", need)
    off = IGRAM_HEADER.size
    phase = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(H, W).astype(np.float32)
    mask = np.frombuffer(blob, dtype=np.uint8, count=n, offset=off + 4 * n).reshape(H, W).copy()
    if mask.max(initial=0) > 1:
        bad = int(np.argmax(mask.reshape(-1) > 1))
        raise FormatError("mask values must be 0 or 1", off + 4 * n + bad)
    return PatchRecord(phase=phase, mask=mask, seed=int(seed), scene_params={})


def prepare_input(phase, image_size: int) -> np.ndarray:
    """Wrapped phase -> normalised 3 x S x S network input."""
    triple = normalize_for_backbone(encode_channels(phase))
    img, _ = resize_longest_side(triple, image_size)
    return img


def prepare_mask(mask, image_size: int) -> np.ndarray:
    """Mask aligned with :func:`prepare_input` (content region, zero-padded)."""
    mask = np.asarray(mask, dtype=np.uint8)
    H, W = mask.shape
    scale = image_size / max(H, W)
    h, w = max(1, int(round(H * scale))), max(1, int(round(W * scale)))
    out = np.zeros((image_size, image_size), dtype=np.uint8)
    out[:h, :w] = resize_mask(mask, (h, w))
    return out
