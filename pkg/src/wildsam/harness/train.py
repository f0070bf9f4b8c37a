"""Training, evaluation and ablation runs on synthetic interferograms."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..decoder import total_loss
from ..metrics import aggregate, compute_metrics, threshold_logits
from ..model import WildSAM
from ..numerics import Tape, Tensor
from ..phase_io import PatchRecord, prepare_input, prepare_mask, synth_scene
from .config import ConfigError, TrainConfig, to_flat
from .optim import AdamW

logger = logging.getLogger(__name__)

SPLIT_CODES = {"train": 1, "val": 2, "test": 3}


@dataclass
class RunReport:
    train_loss: list = field(default_factory=list)
    val_metrics: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    param_counts: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    split: str = ""

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def final(self) -> dict:
        return self.val_metrics[-1] if self.val_metrics else {}


def patch_seed(seed: int, split: str, index: int) -> int:
    """64-bit scene seed for patch ``index`` of a split."""
    ss = np.random.SeedSequence([int(seed), SPLIT_CODES.get(split, 9), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_patches(cfg: TrainConfig, split: str, count: int, seed: int | None = None) -> list[PatchRecord]:
    base = cfg.seed if seed is None else seed
    size = (cfg.image_size, cfg.image_size)
    return [synth_scene(patch_seed(base, split, i), cfg.scene, size) for i in range(count)]


def to_arrays(records, image_size: int, dtype=np.float32):
    if not records:
        return (np.zeros((0, 3, image_size, image_size), dtype=dtype),
                np.zeros((0, image_size, image_size), dtype=np.uint8))
    x = np.stack([prepare_input(r.phase, image_size) for r in records]).astype(dtype)
    y = np.stack([prepare_mask(r.mask, image_size) for r in records])
    return x, y


def build_model(cfg: TrainConfig) -> WildSAM:
    model = WildSAM(
        cfg.vit,
        adapter_layers=cfg.adapter_layers,
        expert_mask=cfg.expert_mask,
        wgse_enabled=cfg.wgse_enabled,
        seed=cfg.seed,
        backbone_seed=cfg.backbone_seed,
        tap_layer=cfg.tap_layer,
    )
    return model.astype(np.dtype(cfg.dtype))


def param_counts(model) -> dict:
    total, trainable = model.count_parameters()
    return {"total": total, "trainable": trainable}


def predict_logits(model, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Forward-only logits for a stack of prepared inputs."""
    out = []
    for start in range(0, len(x), batch_size):
        out.append(model(Tensor(x[start:start + batch_size])).data)
    if not out:
        return np.zeros((0,) + x.shape[2:])
    return np.concatenate(out)


def evaluate_arrays(model, x, y, ids=None, batch_size: int = 32) -> tuple[dict, list]:
    logits = predict_logits(model, x, batch_size)
    preds = threshold_logits(logits)
    records = []
    for i in range(len(preds)):
        m = compute_metrics(preds[i], y[i]).as_dict()
        m["patch_id"] = ids[i] if ids is not None else i
        records.append(m)
    return aggregate(records), records


def train(cfg: TrainConfig, progress=None) -> tuple[RunReport, WildSAM]:
    """Train a model from scratch. Deterministic given ``cfg`` on one thread."""
    cfg.validate()
    start = time.perf_counter()
    dtype = np.dtype(cfg.dtype)
    xtr, ytr = to_arrays(generate_patches(cfg, "train", cfg.n_train), cfg.image_size, dtype)
    val_records = generate_patches(cfg, "val", cfg.n_val)
    xva, yva = to_arrays(val_records, cfg.image_size, dtype)
    val_ids = [f"val/{r.seed}" for r in val_records]

    model = build_model(cfg)
    opt = AdamW.from_config(model.trainable_parameters(), cfg)
    report = RunReport(config=to_flat(cfg), param_counts=param_counts(model), split="val")
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 77]))

    summary, records = evaluate_arrays(model, xva, yva, val_ids)
    report.val_metrics.append(summary)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(xtr))
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            losses.append(train_step(model, opt, xtr[idx], ytr[idx], cfg.lambda_dice))
        report.train_loss.append(float(np.mean(losses)))
        summary, records = evaluate_arrays(model, xva, yva, val_ids)
        report.val_metrics.append(summary)
        logger.info("epoch %d loss %.4f val dice %.4f", epoch + 1, report.train_loss[-1], summary["dice"])
        if progress is not None:
            progress(epoch + 1, report)
    report.records = records
    report.wall_clock = time.perf_counter() - start
    return report, model


def train_step(model, opt: AdamW, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    opt.zero_grad()
    with Tape() as tape:
        loss = total_loss(model(Tensor(x)), y, lam)
    tape.backward(loss)
    opt.step()
    return float(loss.data)


def evaluate(model, cfg: TrainConfig, records=None, seed: int | None = None, count: int | None = None,
             split: str | None = None) -> RunReport:
    """Forward-only evaluation on given patches, or on freshly generated ones."""
    start = time.perf_counter()
    if records is None:
        if seed is None:
            raise ConfigError("evaluate needs patch records or a seed")
        split = split or "test"
        records = generate_patches(cfg, split, count if count is not None else cfg.n_val, seed=seed)
        label = f"{split}:seed={seed}"
    else:
        label = split or "external"
    dtype = np.dtype(cfg.dtype)
    x, y = to_arrays(records, cfg.image_size, dtype)
    ids = [f"{label}/{i}:{r.seed}" for i, r in enumerate(records)]
    summary, per_patch = evaluate_arrays(model, x, y, ids)
    return RunReport(val_metrics=[summary], config=to_flat(cfg), param_counts=param_counts(model),
                     records=per_patch, split=label, wall_clock=time.perf_counter() - start)
