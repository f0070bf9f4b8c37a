"""Finite-difference check of every trainable module through the full loss."""
from __future__ import annotations

import numpy as np

from ..decoder import total_loss
from ..model import MODULE_OF_PREFIX, module_of
from ..numerics import Tape, Tensor, relative_error
from .config import TrainConfig
from .train import build_model, generate_patches, to_arrays

MODULES = tuple(dict.fromkeys(MODULE_OF_PREFIX.values()))
TOLERANCE = 1e-4


def _allocate(n_probes: int, sizes: dict) -> dict:
    """Split ``n_probes`` over modules, capped by how many scalars each owns."""
    alloc = {m: 0 for m in sizes}
    remaining = n_probes
    open_mods = [m for m in sizes if sizes[m] > 0]
    while remaining > 0 and open_mods:
        share = max(1, remaining // len(open_mods))
        for m in list(open_mods):
            take = min(share, sizes[m] - alloc[m], remaining)
            alloc[m] += take
            remaining -= take
            if alloc[m] == sizes[m]:
                open_mods.remove(m)
            if remaining == 0:
                break
    return alloc


def gradcheck(cfg: TrainConfig, n_probes: int = 200, seed: int = 0, batch: int = 2,
              eps: float = 1e-5, tol: float = TOLERANCE, model=None) -> dict:
    """Compare tape gradients with central differences on random parameter entries.

    Runs in float64. All trainable parameters get a random offset first so that
    zero-initialised pieces (block alphas, the SCB output layer) are exercised.
    """
    cfg = cfg.replace(dtype="float64")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4242]))
    if model is None:
        model = build_model(cfg)
    model.astype(np.float64)
    for _, p in model.trainable_parameters():
        p.data = np.asarray(p.data + 0.1 * rng.standard_normal(p.data.shape))

    x, y = to_arrays(generate_patches(cfg, "train", batch, seed=seed), cfg.image_size, np.float64)
    y = y.astype(np.float64)
    lam = cfg.lambda_dice

    def loss_value() -> float:
        return float(total_loss(model(Tensor(x)), y, lam).data)

    model.zero_grad()
    with Tape() as tape:
        loss = total_loss(model(Tensor(x)), y, lam)
    tape.backward(loss)

    params = model.trainable_parameters()
    by_module = {m: [(n, p) for n, p in params if module_of(n) == m] for m in MODULES}
    sizes = {m: sum(p.size for _, p in ps) for m, ps in by_module.items()}
    alloc = _allocate(n_probes, sizes)

    report = {"modules": {}, "n_probes": 0, "tolerance": tol, "eps": eps, "loss": float(loss.data)}
    for m in MODULES:
        entries = [(n, p, i) for n, p in by_module[m] for i in range(p.size)]
        picks = rng.choice(len(entries), size=alloc[m], replace=False) if alloc[m] else []
        g_ad, g_fd, names = [], [], set()
        for k in sorted(int(k) for k in picks):
            name, p, i = entries[k]
            flat = p.data.reshape(-1)
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_value()
            flat[i] = orig - eps
            down = loss_value()
            flat[i] = orig
            g_fd.append((up - down) / (2 * eps))
            g_ad.append(0.0 if p.grad is None else float(p.grad.reshape(-1)[i]))
            names.add(name)
        err = relative_error(g_ad, g_fd) if g_ad else 0.0
        report["modules"][m] = {
            "max_rel_error": err,
            "probes": len(g_ad),
            "tensors": len(names),
            "status": "skipped" if not g_ad else ("pass" if err <= tol else "fail"),
        }
        report["n_probes"] += len(g_ad)
    report["passed"] = all(r["status"] != "fail" for r in report["modules"].values())
    return report


def format_report(report: dict) -> str:
    lines = [f"{'module':<14}{'probes':>8}{'max rel err':>14}  status"]
    for m, r in report["modules"].items():
        lines.append(f"{m:<14}{r['probes']:>8}{r['max_rel_error']:>14.3e}  {r['status']}")
    lines.append(f"overall: {'PASS' if report['passed'] else 'FAIL'} ({report['n_probes']} probes, tol {report['tolerance']:g})")
    return "\n".join(lines)
