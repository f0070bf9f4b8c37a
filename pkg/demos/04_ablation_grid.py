"""
Expert and prompt ablations
===========================

Trains a handful of configurations with shared seeds and prints a table.
Defaults are small so this finishes in a few minutes; ``python
04_ablation_grid.py 30 0,1,2`` reproduces the full desk-scale comparison.
"""
import sys

from wildsam.harness.ablate import ablate, format_summary
from wildsam.harness.config import toy_config

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 4
seeds = [int(s) for s in sys.argv[2].split(",")] if len(sys.argv) > 2 else [0]

cells = [
    ("frozen", {"adapter_layers": "none", "wgse_enabled": False}),
    ("E1+E2", {"expert_mask": "1100", "wgse_enabled": False}),
    ("sam-moe", {"wgse_enabled": False}),
    ("full", {}),
]
result = ablate(toy_config(epochs=epochs), cells, seeds,
                progress=lambda r: print(f"  {r['cell']:<8} seed {r['seed']}  dice {r['dice']:.3f}"))
print(format_summary(result))
