"""Command-line entry point: ``python -m wildsam <command>``.

Exit codes: 0 success, 1 usage or config error, 2 data or format error,
3 gradient check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..phase_io import FormatError, prepare_input, read_patch, write_patch
from . import checkpoint
from .ablate import ablate, format_summary, resolve_grid, write_tables
from .config import ConfigError, TrainConfig, apply_overrides, dumps, load, toy_config
from .features import extract_features, write_feature
from .gradcheck import format_report, gradcheck
from .train import evaluate, generate_patches, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GRADCHECK = 0, 1, 2, 3

log = logging.getLogger("wildsam")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which we reserve for data errors
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args) -> TrainConfig:
    base = load(args.config, toy_config()) if getattr(args, "config", None) else toy_config()
    cfg = apply_overrides(base, _overrides(getattr(args, "set", None)))
    cfg.validate()
    return cfg


def _dump_json(obj, path: Path | None) -> None:
    text = json.dumps(obj, indent=2, default=float)
    if path is None:
        print(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def cmd_gen(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, rec in enumerate(generate_patches(cfg, args.split, args.count, seed=args.seed)):
        write_patch(rec, out / f"patch_{i:05d}.igram")
    print(f"wrote {args.count} patches to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(epoch, report):
        m = report.val_metrics[-1]
        print(f"epoch {epoch:3d}  loss {report.train_loss[-1]:.4f}  val dice {m['dice']:.4f}  iou {m['iou']:.4f}",
              flush=True)

    report, model = train(cfg, progress=progress)
    checkpoint.save(out / "model.wsck", model, cfg)
    _dump_json(report.as_dict(), out / "report.json")
    (out / "config.cfg").write_text(dumps(cfg))
    f = report.final
    print(f"final val dice {f['dice']:.4f}  trainable {report.param_counts['trainable']}  "
          f"({report.wall_clock:.0f}s); wrote {out}")
    return EXIT_OK


def _read_dir(path: Path):
    if not path.is_dir():
        raise FileNotFoundError(f"data directory {path} not found")
    files = sorted(path.glob("*.igram"))
    if not files:
        raise FileNotFoundError(f"no .igram files in {path}")
    return [read_patch(f) for f in files]


def cmd_eval(args) -> int:
    model, cfg = checkpoint.load(args.checkpoint)
    if args.data:
        report = evaluate(model, cfg, records=_read_dir(Path(args.data)), split=f"dir:{args.data}")
    else:
        report = evaluate(model, cfg, seed=args.seed, count=args.count, split=args.split)
    _dump_json(report.as_dict(), Path(args.out) if args.out else None)
    f = report.final
    print(f"{report.split}: n={f['n']} dice {f['dice']:.4f} iou {f['iou']:.4f} "
          f"precision {f['precision']:.4f} recall {f['recall']:.4f} hd {f['hd']:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    cells, seeds = resolve_grid(args.grid)
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    seeds = seeds or [cfg.seed]
    result = ablate(cfg, cells, seeds, progress=lambda r: print(
        f"{r['cell']:<14} seed {r['seed']}: dice {r['dice']:.4f}", flush=True))
    paths = write_tables(result, args.out)
    print(format_summary(result))
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    report = gradcheck(cfg, n_probes=args.probes, seed=args.seed)
    print(format_report(report))
    if args.out:
        _dump_json(report, Path(args.out))
    return EXIT_OK if report["passed"] else EXIT_GRADCHECK


def cmd_dump_features(args) -> int:
    model, cfg = checkpoint.load(args.checkpoint)
    rec = read_patch(args.patch)
    img = prepare_input(rec.phase, cfg.image_size).astype(np.dtype(cfg.dtype))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, arr in extract_features(model, img).items():
        write_feature(out / f"{name}.feat", arr)
        print(f"{name:<12} {tuple(arr.shape)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wildsam", description="Synthetic-interferogram landslide segmentation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp, required=False):
        sp.add_argument("--config", required=required, help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    sp = sub.add_parser("gen", help="write synthetic IGRAM patches")
    with_config(sp)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train a model and write a checkpoint and report")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="directory of .igram patches")
    src.add_argument("--seed", type=int)
    sp.add_argument("--count", type=int, default=None)
    sp.add_argument("--split", default="test")
    sp.add_argument("--out", help="JSON report path (default: stdout)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train a grid of configurations")
    with_config(sp)
    sp.add_argument("--grid", required=True, help="grid file, or a preset: experts, wgse, depth")
    sp.add_argument("--seeds", help="comma separated seeds (overrides the grid file)")
    sp.add_argument("--out", default="ablation")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference check of all trainable modules")
    with_config(sp)
    sp.add_argument("--probes", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("dump-features", help="write embedding, tap, subband and prompt maps")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--patch", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_dump_features)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, checkpoint.CompatibilityError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
