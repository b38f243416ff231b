"""Model and training configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import InvalidInputError

TRAIN_MODES = ("joint", "separated", "phoc_head", "no_pp_qq", "no_was", "no_ctc", "baseline")


@dataclass
class ModelConfig:
    channels: int = 128  # C; sequence features are (T, C)
    steps: int = 15  # T
    roi_height: int = 8
    backbone_width: int = 32
    charset_size: int = 36
    max_word_len: int = 32
    nms_iou: float = 0.5
    score_thresh: float = 0.1
    max_proposals: int = 100
    pyramid_levels: int = 2
    with_phoc_head: bool = False
    phoc_pyramid: tuple[int, ...] = (2, 3, 4, 5)

    def __post_init__(self):
        if self.channels % 2 != 0:
            raise InvalidInputError("channels must be even (bidirectional halves)")
        if self.steps < 2:
            raise InvalidInputError("steps must be >= 2")
        if self.roi_height % 4 != 0:
            raise InvalidInputError("roi_height must be divisible by 4")
        if self.pyramid_levels not in (2, 3):
            raise InvalidInputError("pyramid_levels must be 2 or 3")
        if not 0.0 <= self.score_thresh <= 1.0:
            raise InvalidInputError("score_thresh must be in [0, 1]")
        for name in ("charset_size", "max_word_len", "max_proposals", "backbone_width"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")

    @property
    def flattened_dim(self) -> int:
        return self.steps * self.channels


@dataclass
class TrainConfig:
    lr: float = 0.01
    decay_steps: tuple[int, ...] = (3000, 4250)  # 60% / 85% of the default run
    decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 2
    iterations: int = 5000
    ratios: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 5.0)
    seed: int = 0
    mode: str = "joint"
    row_reduce: str = "max"  # per-row reduction inside the similarity loss
    center_sampling_radius: float = 1.5  # detection positives near box centers
    grad_clip: float = 10.0  # max gradient norm, 0 disables
    warmup_iterations: int = 100  # linear lr ramp before the step schedule
    train_proposals: int = 8  # decoded proposals kept per image on top of GT boxes
    checkpoint_interval: int = 1000
    log_interval: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidInputError("lr must be positive")
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.mode not in TRAIN_MODES:
            raise InvalidInputError(f"mode must be one of {TRAIN_MODES}")
        if self.row_reduce not in ("max", "mean"):
            raise InvalidInputError("row_reduce must be 'max' or 'mean'")

    @property
    def use_was(self) -> bool:
        return self.mode not in ("no_was", "baseline", "phoc_head")

    @property
    def use_ctc(self) -> bool:
        return self.mode not in ("no_ctc", "baseline", "phoc_head")

    @property
    def use_pp_qq(self) -> bool:
        return self.mode != "no_pp_qq"


def _parse_value(raw: str, annotation: Any) -> Any:
    raw = raw.strip()
    origin = getattr(annotation, "__origin__", None)
    if origin is tuple:
        args = getattr(annotation, "__args__", (float, Ellipsis))
        elem = args[0]
        if raw == "":
            return ()
        return tuple(elem(part.strip()) for part in raw.split(","))
    if annotation is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise InvalidInputError(f"cannot parse boolean from {raw!r}")
    if annotation is int:
        return int(raw)
    if annotation is float:
        return float(raw)
    return raw


def _field_types(cls) -> dict[str, Any]:
    import typing

    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def train_config_from_items(items: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    """Build a TrainConfig from flat key/value strings.

    Keys address TrainConfig fields directly and ModelConfig fields by their
    own names (the namespaces do not collide).
    """
    base = base or TrainConfig()
    train_types = _field_types(TrainConfig)
    model_types = _field_types(ModelConfig)
    train_kwargs = {f.name: getattr(base, f.name) for f in dataclasses.fields(TrainConfig)}
    model_kwargs = dataclasses.asdict(base.model)
    model_kwargs["phoc_pyramid"] = base.model.phoc_pyramid
    for key, raw in items.items():
        if key in train_types and key != "model":
            train_kwargs[key] = _parse_value(raw, train_types[key])
        elif key in model_types:
            model_kwargs[key] = _parse_value(raw, model_types[key])
        else:
            raise InvalidInputError(f"unknown config key {key!r}")
    train_kwargs["model"] = ModelConfig(**model_kwargs)
    return TrainConfig(**train_kwargs)


def load_train_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    """Parse a flat ``key = value`` config file (``#`` starts a comment)."""
    items: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        items[key.strip()] = raw
    return train_config_from_items(items, base=base)


def train_config_to_items(config: TrainConfig) -> dict[str, str]:
    """Flat key/value view of a TrainConfig, inverse of train_config_from_items."""
    items: dict[str, str] = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name == "model":
            continue
        value = getattr(config, f.name)
        items[f.name] = ",".join(str(v) for v in value) if isinstance(value, tuple) else str(value)
    for f in dataclasses.fields(ModelConfig):
        value = getattr(config.model, f.name)
        items[f.name] = ",".join(str(v) for v in value) if isinstance(value, tuple) else str(value)
    return items
