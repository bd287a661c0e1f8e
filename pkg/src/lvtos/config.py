"""Strict JSON pipeline configuration.

Unknown keys anywhere in the document are rejected. ``LVTOS_OUTPUT_DIR``
overrides ``paths.output_dir``; no other environment variables are read.
"""
from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class Paths:
    data_dir: str = "run/data"
    checkpoint_dir: str = "run/checkpoints"
    output_dir: str = "run/report"


@dataclass
class PhantomSection:
    n_cases: int = 125
    train_fraction: float = 0.8
    radius_jitter: float = 0.1
    shape: tuple[int, int] = (64, 64)
    endo_radius: float = 11.0
    epi_radius: float = 19.0
    frames: int = 25
    eps_max: float = 0.15
    noise_sigma: float = 0.05
    rv_angle_deg: float = 110.0
    onset_frames: float = 3.0
    blend_deg: float = 10.0
    displacement_noise: float = 0.0
    frame_interval_ms: float = 17.0
    pixel_size_mm: float = 2.65


@dataclass
class SegnetSection:
    base_width: int = 8
    levels: int = 4
    dilation: int = 2
    lr: float = 1e-3
    batch_size: int = 8
    steps: int = 300
    n_train_images: int = 50
    n_val_images: int = 40
    augment: bool = True
    log_every: int = 50


@dataclass
class TosnetSection:
    conv_channels: tuple[int, ...] = (16, 16, 16)
    dense_units: tuple[int, ...] = (64,)
    dense_batchnorm: bool = True
    input_scale: float = 10.0
    lr: float = 3e-3
    batch_size: int = 32
    steps: int = 500
    shifts: int = 18


@dataclass
class VolumeSection:
    slice_thickness_mm: float = 8.0
    radial_resolution: int = 4
    angular_resolution: int = 72


@dataclass
class Checks:
    min_dice: float = 0.9
    max_tta_dice_drop: float = 0.02
    max_tos_rmse_frames: float = 1.5
    max_baseline_err_frames: float = 1.0


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    seed: int = 0
    threads: int = 1
    t0: float = 0.0
    alpha: float = 0.01
    baseline_threshold: float = -0.02
    phantom: PhantomSection = field(default_factory=PhantomSection)
    segnet: SegnetSection = field(default_factory=SegnetSection)
    tosnet: TosnetSection = field(default_factory=TosnetSection)
    volume: VolumeSection = field(default_factory=VolumeSection)
    checks: Checks = field(default_factory=Checks)

    def validate(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.t0 < 0:
            raise ValueError("t0 must be >= 0")
        if self.baseline_threshold >= 0:
            raise ValueError("baseline_threshold must be negative")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.phantom.n_cases < 1:
            raise ValueError("phantom.n_cases must be >= 1")

    def to_dict(self) -> dict:
        return _to_plain(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(x) for x in obj]
    return obj


class ConfigError(ValueError):
    pass


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, value, path)
        elif typing.get_origin(tp) is tuple:
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            kwargs[name] = tuple(value)
        elif tp is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{path}: expected true/false")
            kwargs[name] = value
        elif tp is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{path}: expected an integer")
            kwargs[name] = value
        elif tp is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}: expected a number")
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict) -> PipelineConfig:
    cfg = _build(PipelineConfig, data, "")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None) -> PipelineConfig:
    cfg = PipelineConfig() if path is None else from_dict(json.loads(Path(path).read_text()))
    override = os.environ.get("LVTOS_OUTPUT_DIR")
    if override:
        cfg.paths.output_dir = override
    cfg.validate()
    return cfg
