"""
A short training run, a checkpoint and a feature dump
=====================================================

Pass an epoch count to train longer (the reference toy run uses 30).
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from wildsam.harness import checkpoint
from wildsam.harness.config import toy_config
from wildsam.harness.features import extract_features
from wildsam.harness.train import evaluate, train
from wildsam.phase_io import prepare_input, synth_scene

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 3
cfg = toy_config(epochs=epochs, n_train=128, n_val=32)

# %% Train
report, model = train(cfg, progress=lambda e, r: print(
    f"epoch {e}: loss {r.train_loss[-1]:.3f}  val dice {r.val_metrics[-1]['dice']:.3f}"))
print("alphas after training:", {k: round(float(v.data), 4) for k, v in model.backbone.alphas.items()})

# %% Save, reload, evaluate on patches the model never saw
with tempfile.TemporaryDirectory() as tmp:
    path = checkpoint.save(Path(tmp) / "model.wsck", model, cfg)
    reloaded, cfg2 = checkpoint.load(path)
held_out = evaluate(reloaded, cfg2, seed=1234, count=32)
print(held_out.split, {k: round(v, 3) for k, v in held_out.final.items() if isinstance(v, float)})

# %% What the prompt generator looks at
img = prepare_input(synth_scene(99).phase, cfg.image_size).astype(np.float32)
for name, arr in extract_features(model, img).items():
    print(f"{name:<10} shape {arr.shape}  energy {float((arr ** 2).mean()):.3g}")
