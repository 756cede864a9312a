"""Pipeline configuration: one YAML file, every field defaulted, unknown keys rejected."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

import yaml

from ..remesh import RemeshConfig
from ..splatcore import SplatError, ValidationError


class ConfigError(SplatError):
    pass


@dataclass
class PathsConfig:
    mesh: Optional[str] = None  # body mesh for the geometry encoder
    splat: Optional[str] = None  # Gaussian avatar to remesh
    image: Optional[str] = None  # front RGB image; rendered from the splat when absent
    weights: Optional[str] = None  # NSW1 manifest; seeded init when absent
    gt: Optional[str] = None  # ground-truth mesh for geometry metrics
    out: str = "out"


@dataclass
class FourierConfig:
    q: int = 4
    m: int = 65536
    size: int = 64
    seed: Optional[int] = None  # falls back to the global seed
    centroid_only: bool = False


@dataclass
class CameraConfig:
    rig: str = "ring8"
    size: int = 64
    views: Optional[list] = None  # explicit OrthoCamera dicts; overrides rig


@dataclass
class NetshellConfig:
    geo_channels: int = 8
    tex_channels: int = 8
    base: int = 32
    attn_width: int = 64


@dataclass
class RemeshSection:
    iterations: int = 200
    step_size: float = 0.3
    lambda_normal: float = 1.0
    lambda_mask: float = 1.0
    lambda_lap: float = 1.0
    grid_res: int = 24
    iso_level: Optional[float] = None
    iso_fraction: float = 0.3
    stop_tol: float = 1e-5

    def build(self, render_size: int, views=None, threads: int = 1) -> RemeshConfig:
        return RemeshConfig(views=views, render_size=render_size, threads=threads, **dataclasses.asdict(self))


@dataclass
class MetricsConfig:
    tau: float = 1.0
    samples: int = 100_000


@dataclass
class PipelineConfig:
    fixture: Optional[str] = None  # "sphere" writes synthetic inputs into <out>/inputs
    seed: int = 0
    threads: int = 1
    log_level: str = "INFO"
    paths: PathsConfig = field(default_factory=PathsConfig)
    fourier: FourierConfig = field(default_factory=FourierConfig)
    cameras: CameraConfig = field(default_factory=CameraConfig)
    netshell: NetshellConfig = field(default_factory=NetshellConfig)
    remesh: RemeshSection = field(default_factory=RemeshSection)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def validate(self) -> "PipelineConfig":
        if self.fixture not in (None, "sphere"):
            raise ConfigError(f"fixture: unknown fixture {self.fixture!r} (known: sphere)")
        if self.fourier.size % 32:
            raise ConfigError("fourier.size must be a multiple of 32 for the U-Net")
        if self.cameras.rig not in ("ring8", "front3"):
            raise ConfigError(f"cameras.rig: unknown rig {self.cameras.rig!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.metrics.tau > 0 or self.metrics.samples < 1:
            raise ConfigError("metrics.tau must be positive and metrics.samples >= 1")
        try:
            self.remesh.build(self.cameras.size)
        except ValidationError as e:
            raise ConfigError(f"remesh: {e}") from None
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: Any, tp: Any, key: str) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], key)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, key)
    if tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if tp in (int, str, bool) and not (isinstance(value, tp) and not (tp is int and isinstance(value, bool))):
        raise ConfigError(f"{key}: expected {tp.__name__}, got {value!r}")
    if (tp is list or origin is list) and not isinstance(value, list):
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    return value


def _build(cls, data: Any, prefix: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            full = f"{prefix}.{k}" if prefix else str(k)
            raise ConfigError(f"unknown config key {full!r}")
    kwargs = {k: _coerce(v, hints[k], f"{prefix}.{k}" if prefix else k) for k, v in data.items()}
    return cls(**kwargs)


def parse_config(data: Optional[dict]) -> PipelineConfig:
    return _build(PipelineConfig, data).validate()


def load_config(path: Optional[Union[str, Path]]) -> PipelineConfig:
    if path is None:
        return parse_config({})
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    return parse_config(data)
