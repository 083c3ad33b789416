"""Run configuration: nested dataclasses loaded from a YAML/JSON file with ``key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml

from .errors import ValidationError
from .losses import LossConfig
from .model import ReconModelConfig, UNetConfig

COMMANDS = ("gen-data", "train", "eval", "reconstruct")


@dataclass
class DataConfig:
    n_slices: int = 24
    frames: int = 8
    height: int = 32
    width: int = 32
    n_ellipses: int = 4
    contraction_amplitude: float = 0.2
    noise_std: float = 0.0
    split: List[float] = field(default_factory=lambda: [90.0, 20.0, 10.0])
    center_lines: Optional[int] = None
    # optional list of [H, W] original sizes drawn per slice
    size_choices: Optional[List[List[int]]] = None
    # image canvas the networks run on; None keeps each slice's own size
    canvas: Optional[List[int]] = None


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 3e-4
    epochs: int = 10
    batch_size: int = 1
    grad_clip: float = 1.0
    patience: int = 10
    steps_per_epoch: Optional[int] = None

    def __post_init__(self):
        if self.kind.lower() != "adam":
            raise ValidationError(f"only the Adam optimiser is supported, got {self.kind!r}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("lr, epochs and batch_size must be positive")


@dataclass
class TrainConfig:
    model_kind: str = "crnn"  # "crnn" or "unet"
    loss_preset: Optional[str] = "perp_l1"
    refine_loss_preset: str = "l1_ssim"
    crnn_checkpoint: Optional[str] = None  # stage-1 weights for sequential refinement
    resume: bool = False
    finetune_acceleration: Optional[int] = None
    init_checkpoint: Optional[str] = None


@dataclass
class PathsConfig:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass
class RunConfig:
    command: str = "train"
    run_id: str = "run"
    seed: int = 0
    accelerations: List[int] = field(default_factory=lambda: [4, 8, 10])
    model: ReconModelConfig = field(default_factory=ReconModelConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"command must be one of {COMMANDS}, got {self.command!r}")
        bad = [a for a in self.accelerations if a not in (4, 8, 10)]
        if bad or not self.accelerations:
            raise ValidationError(f"accelerations must be a non-empty subset of {{4, 8, 10}}, got {self.accelerations}")
        if self.train.model_kind not in ("crnn", "unet"):
            raise ValidationError(f"train.model_kind must be 'crnn' or 'unet', got {self.train.model_kind!r}")

    def training_loss(self) -> LossConfig:
        """The CRNN-stage loss: the named preset if set, else the explicit ``loss`` section."""
        if self.train.loss_preset:
            return LossConfig.preset(
                self.train.loss_preset,
                highpass_cutoff=self.loss.highpass_cutoff,
                highpass_weight_ratio=self.loss.highpass_weight_ratio,
                ssim_window=self.loss.ssim_window,
            )
        return self.loss

    def refinement_loss(self) -> LossConfig:
        return LossConfig.preset(self.train.refine_loss_preset, ssim_window=self.loss.ssim_window)

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))


_SECTIONS = {
    "model": ReconModelConfig,
    "unet": UNetConfig,
    "loss": LossConfig,
    "optimizer": OptimizerConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "paths": PathsConfig,
}


def _parse_value(text: str) -> Any:
    if text.strip().lower() in ("log(0.1)", "log(1e-1)"):
        return math.log(0.1)
    try:
        return float(text) if any(c in text for c in ".eE") else int(text)
    except ValueError:
        return yaml.safe_load(text)


def _coerce(cls, values: Dict[str, Any]) -> Dict[str, Any]:
    # YAML 1.1 reads "3e-4" as a string
    out = dict(values)
    for f in dataclasses.fields(cls):
        if isinstance(out.get(f.name), str) and isinstance(f.default, float):
            try:
                out[f.name] = float(out[f.name])
            except ValueError as exc:
                raise ValidationError(f"{cls.__name__}.{f.name} must be a number") from exc
    return out


def _set_dotted(d: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValidationError(f"cannot set {key}: {p} is not a section")
    node[parts[-1]] = value


def from_dict(raw: Dict[str, Any]) -> RunConfig:
    raw = dict(raw or {})
    kwargs: Dict[str, Any] = {}
    top = {f.name for f in dataclasses.fields(RunConfig)}
    for key, value in raw.items():
        if key not in top:
            raise ValidationError(f"unknown config key {key!r}")
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            names = {f.name for f in dataclasses.fields(cls)}
            unknown = set(value or {}) - names
            if unknown:
                raise ValidationError(f"unknown keys in [{key}]: {sorted(unknown)}")
            try:
                kwargs[key] = cls(**_coerce(cls, value or {}))
            except TypeError as exc:
                raise ValidationError(f"bad [{key}] section: {exc}") from exc
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def load_config(path: Optional[str] = None, overrides: Sequence[str] = (), command: Optional[str] = None) -> RunConfig:
    raw: Dict[str, Any] = {}
    if path:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValidationError(f"config {path} must be a mapping")
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        _set_dotted(raw, key.strip(), _parse_value(value))
    if command is not None:
        raw["command"] = command
    return from_dict(raw)


def dump_config(cfg: RunConfig, path: Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
