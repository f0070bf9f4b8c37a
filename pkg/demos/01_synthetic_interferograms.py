"""
Synthetic wrapped interferograms
================================

Deformation bowls over a gentle phase ramp, plus noise, wrapped to [-pi, pi).
The landslide mask marks where the (unwrapped) deformation exceeds pi.
"""
import math
import tempfile
from pathlib import Path

import numpy as np

from wildsam.phase_io import (SceneParams, deformation_field, encode_channels, normalize_for_backbone,
                              read_patch, synth_scene, write_patch)

# %% One scene and its ingredients
p = SceneParams()
rec = synth_scene(seed=7, p=p, size=(64, 64))
d, ramp, noise, bowls = deformation_field(7, p, (64, 64))
print("phase range  :", rec.phase.min(), rec.phase.max())
print("mask fraction:", rec.mask.mean())
for amp, sigma, cy, cx in bowls:
    print(f"bowl at ({cy:5.1f}, {cx:5.1f})  amplitude {amp / math.pi:+.2f} pi  sigma {sigma:.1f}px")

# %% A coarse text rendering: '#' inside the mask, fringes elsewhere
shade = " .:-=+*%"
for row in range(0, 64, 4):
    line = ""
    for col in range(0, 64, 2):
        if rec.mask[row, col]:
            line += "#"
        else:
            line += shade[int((rec.phase[row, col] + math.pi) / (2 * math.pi) * len(shade)) % len(shade)]
    print(line)

# %% The three-channel encoding the encoder sees
triple = encode_channels(rec.phase)
x = normalize_for_backbone(triple)
print("sin^2 + cos^2 deviation:", np.abs(triple[1] ** 2 + triple[2] ** 2 - 1).max())
print("normalised channel means:", x.mean(axis=(1, 2)).round(3))

# %% Patches persist as small binary files and come back bit-exact
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "scene.igram"
    write_patch(rec, path)
    print(path.stat().st_size, "bytes on disk; equal after reload:", read_patch(path) == rec)
