"""Training configuration and the flat ``key = value`` config file format."""
from __future__ import annotations

import ast
import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..backbone import ViTConfig, adapter_layer_preset
from ..phase_io import SceneParams


class ConfigError(ValueError):
    """Invalid configuration, detected before any compute."""


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_dice: float = 1.0
    seed: int = 0
    backbone_seed: int = 0
    image_size: int = 64
    vit: ViTConfig = field(default_factory=ViTConfig)
    adapter_layers: list = field(default_factory=lambda: [0, 1, 2, 3])
    expert_mask: list = field(default_factory=lambda: [True, True, True, True])
    wgse_enabled: bool = True
    tap_layer: int = -1
    scene: SceneParams = field(default_factory=SceneParams)
    n_train: int = 512
    n_val: int = 128
    dtype: str = "float32"

    def validate(self) -> None:
        for name in ("lr", "weight_decay", "eps", "lambda_dice"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.n_train < 0 or self.n_val < 0:
            raise ConfigError("n_train and n_val must be >= 0")
        if self.epochs > 0 and self.n_train == 0:
            raise ConfigError("training needs n_train > 0")
        if len(self.expert_mask) != 4:
            raise ConfigError("expert_mask needs exactly four entries")
        if self.adapter_layers and not any(self.expert_mask):
            raise ConfigError("expert_mask must enable at least one expert when adapters are on")
        if self.vit.image_size != self.image_size:
            raise ConfigError("vit.image_size must equal image_size")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        try:
            self.vit.validate()
            self.scene.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        grid = self.vit.grid
        if grid[0] % 2 and self.wgse_enabled:
            raise ConfigError("WGSE needs an even token grid")
        for i in self.adapter_layers:
            if not 0 <= int(i) < self.vit.depth:
                raise ConfigError(f"adapter layer {i} outside 0..{self.vit.depth - 1}")

    def replace(self, **changes) -> "TrainConfig":
        return apply_overrides(self, changes)


def toy_config(**overrides) -> TrainConfig:
    """The reference desk-scale configuration (toy learning rate 1e-3)."""
    cfg = TrainConfig(lr=1e-3)
    return apply_overrides(cfg, overrides) if overrides else cfg


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", "[]", ""):
        return [] if low == "[]" else None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(current, value, key: str):
    if isinstance(current, bool):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return bool(value)
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects a boolean, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, str):
            value = _parse_math(value, key)
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    if isinstance(current, tuple):
        if isinstance(value, str):
            value = [_parse_math(v, key) for v in value.split(",")]
        if not isinstance(value, (list, tuple)) or len(value) != len(current):
            raise ConfigError(f"{key} expects {len(current)} values, got {value!r}")
        return tuple(float(v) if not isinstance(v, str) else _parse_math(v, key) for v in value)
    return value


def _parse_math(text: str, key: str) -> float:
    """Numbers may be written with ``pi`` (e.g. ``2*pi``)."""
    try:
        return float(eval(text, {"__builtins__": {}}, {"pi": math.pi}))  # noqa: S307
    except Exception as exc:  # noqa: BLE001
        raise ConfigError(f"{key}: cannot parse {text!r} as a number") from exc


def _adapter_layers(value, depth: int) -> list:
    if value is None:
        return []
    if isinstance(value, str):
        return adapter_layer_preset(value, depth)
    if isinstance(value, int):
        return [value]
    return sorted(int(v) for v in value)


def _expert_mask(value) -> list:
    if isinstance(value, str):
        value = [c == "1" for c in value.strip() if c in "01"]
    return [bool(v) for v in value]


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    """Copy of ``cfg`` with dotted-key overrides applied."""
    cfg = dataclasses.replace(
        cfg,
        vit=dataclasses.replace(cfg.vit),
        scene=dataclasses.replace(cfg.scene),
        adapter_layers=list(cfg.adapter_layers),
        expert_mask=list(cfg.expert_mask),
    )
    deferred_layers = None
    for key, value in overrides.items():
        if isinstance(value, str):
            value = _parse_value(value) if key not in ("adapter_layers", "expert_mask") else value
        parts = key.split(".")
        if key == "adapter_layers":
            deferred_layers = value
            continue
        if key == "expert_mask":
            cfg.expert_mask = _expert_mask(value)
            continue
        target = cfg
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise ConfigError(f"unknown config key {key!r}")
            target = getattr(target, part)
        leaf = parts[-1]
        if not dataclasses.is_dataclass(target) or leaf not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(target, leaf, _coerce(getattr(target, leaf), value, key))
    if "image_size" in overrides and "vit.image_size" not in overrides:
        cfg.vit.image_size = cfg.image_size
    if "vit.image_size" in overrides and "image_size" not in overrides:
        cfg.image_size = cfg.vit.image_size
    if deferred_layers is not None:
        if isinstance(deferred_layers, str) and deferred_layers.strip().startswith("["):
            deferred_layers = _parse_value(deferred_layers)
        try:
            cfg.adapter_layers = _adapter_layers(deferred_layers, cfg.vit.depth)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def to_flat(cfg: TrainConfig) -> dict:
    """Dotted-key dictionary of every setting."""
    flat = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sub in dataclasses.fields(value):
                v = getattr(value, sub.name)
                flat[f"{f.name}.{sub.name}"] = list(v) if isinstance(v, tuple) else v
        else:
            flat[f.name] = list(value) if isinstance(value, tuple) else value
    return flat


def _format(key: str, value) -> str:
    if key == "expert_mask":
        return "".join("1" if v else "0" for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {_format(k, v)}\n" for k, v in to_flat(cfg).items())


def loads(text: str, base: TrainConfig | None = None) -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    overrides = dict(parser["config"])
    cfg = apply_overrides(base or TrainConfig(), overrides)
    return cfg


def load(path, base: TrainConfig | None = None) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, base)


def load_grid(path) -> tuple[list[tuple[str, dict]], list[int] | None]:
    """Ablation grid: one ``[cell name]`` section of overrides per cell.

    An optional ``[grid]`` section may set ``seeds = [0, 1, 2]``.
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read grid {path}: {exc}") from exc
    seeds = None
    cells = []
    for name in parser.sections():
        if name == "grid":
            raw = parser[name].get("seeds")
            if raw is not None:
                value = _parse_value(raw)
                seeds = [int(value)] if isinstance(value, int) else [int(v) for v in value]
            continue
        cells.append((name, dict(parser[name])))
    return cells, seeds
