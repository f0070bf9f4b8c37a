"""Grids of training runs with shared seeds, summarised as JSON and CSV tables."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig, apply_overrides, load_grid
from .train import train

logger = logging.getLogger(__name__)

METRICS = ("precision", "recall", "iou", "dice", "hd")

# Expert subsets of the PA-MoE ablation table, as E1..E4 bit strings
EXPERT_ROWS = {
    "E1+E2": "1100",
    "E3+E4": "0011",
    "E1+E4": "1001",
    "E2+E3": "0110",
    "E1+E2+E3": "1110",
    "E2+E3+E4": "0111",
    "E1+E2+E3+E4": "1111",
}

PRESETS = {
    "experts": [(name, {"expert_mask": mask}) for name, mask in EXPERT_ROWS.items()],
    "wgse": [
        ("frozen", {"adapter_layers": "none", "wgse_enabled": False}),
        ("sam-moe", {"wgse_enabled": False}),
        ("full", {}),
    ],
    "depth": [(name, {"adapter_layers": name}) for name in ("S", "B", "L")],
}


def resolve_grid(spec) -> tuple[list[tuple[str, dict]], list[int] | None]:
    """A preset name (``experts``, ``wgse``, ``depth``) or a grid file path."""
    if isinstance(spec, str) and spec in PRESETS:
        return [(n, dict(o)) for n, o in PRESETS[spec]], None
    return load_grid(spec)


def ablate(base: TrainConfig, cells, seeds=(0,), progress=None) -> dict:
    """Train every cell once per seed. Returns per-run rows and per-cell means."""
    if not cells:
        raise ConfigError("ablation grid has no cells")
    configs = []
    for name, overrides in cells:
        cfg = apply_overrides(base, overrides)
        cfg.validate()
        configs.append((name, cfg))
    runs, summary = [], []
    for name, cfg in configs:
        finals = []
        for seed in seeds:
            report, _ = train(cfg.replace(seed=int(seed)))
            final = report.final
            row = {"cell": name, "seed": int(seed), **{k: final[k] for k in METRICS},
                   "hd_undefined": final["hd_undefined"], "initial_dice": report.val_metrics[0]["dice"],
                   "trainable": report.param_counts["trainable"], "total": report.param_counts["total"],
                   "wall_clock": round(report.wall_clock, 2)}
            runs.append(row)
            finals.append(row)
            logger.info("%s seed %s: dice %.4f", name, seed, row["dice"])
            if progress is not None:
                progress(row)
        summary.append({
            "cell": name,
            "seeds": len(finals),
            **{k: float(np.nanmean([r[k] for r in finals])) for k in METRICS},
            "dice_std": float(np.std([r["dice"] for r in finals])),
            "trainable": finals[0]["trainable"],
            "total": finals[0]["total"],
        })
    return {"runs": runs, "summary": summary, "seeds": [int(s) for s in seeds]}


def write_tables(result: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "ablation.json", out / "ablation_runs.csv", out / "ablation_summary.csv"]
    paths[0].write_text(json.dumps(result, indent=2))
    for path, rows in ((paths[1], result["runs"]), (paths[2], result["summary"])):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return paths


def format_summary(result: dict) -> str:
    lines = [f"{'cell':<14}{'trainable':>10}{'dice':>8}{'iou':>8}{'hd':>8}"]
    for r in result["summary"]:
        lines.append(f"{r['cell']:<14}{r['trainable']:>10}{r['dice']:>8.4f}{r['iou']:>8.4f}{r['hd']:>8.2f}")
    return "\n".join(lines)
