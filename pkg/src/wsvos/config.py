"""Run configuration: nested dataclasses loaded from YAML with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .dataio import SyntheticConfig
from .distill import DistillConfig
from .pooling import PoolingConfig

BACKBONE_MODES = ("frozen", "refine_by_teacher", "refine_by_student")
STRUCTURES = ("full", "teacher_only", "student_only")


class ConfigError(ValueError):
    """Carries every problem found in a configuration, not only the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class EncoderConfig:
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    seed: int = 0

    def validate(self):
        problems = []
        if self.patch_size < 1:
            problems.append("patch_size must be >= 1")
        if self.embed_dim < 1:
            problems.append("embed_dim must be >= 1")
        if self.depth < 0:
            problems.append("depth must be >= 0")
        return problems


@dataclass
class TeacherConfig:
    hidden_width: int = 256
    out_channels: int = 256
    dropout: float = 0.5
    downsample_prob: float = 0.5

    def validate(self):
        problems = []
        if self.hidden_width < 1 or self.out_channels < 1:
            problems.append("hidden_width and out_channels must be >= 1")
        for name in ("dropout", "downsample_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        return problems


@dataclass
class StudentConfig:
    hidden_width: int = 256
    out_channels: int = 256
    temporal_kernel: int = 3
    spatial_kernel: int = 3
    padding_mode: str = "replicate"
    dropout: float = 0.5

    def validate(self):
        problems = []
        if self.hidden_width < 1 or self.out_channels < 1:
            problems.append("hidden_width and out_channels must be >= 1")
        if self.temporal_kernel < 3 or self.temporal_kernel % 2 == 0:
            problems.append("temporal_kernel must be odd and >= 3")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            problems.append("spatial_kernel must be odd and >= 1")
        if self.padding_mode not in ("zeros", "replicate", "reflect", "circular"):
            problems.append(f"padding_mode must be zeros, replicate, reflect or circular, got {self.padding_mode!r}")
        if not 0.0 <= self.dropout <= 1.0:
            problems.append("dropout must lie in [0, 1]")
        return problems


@dataclass
class TrainerConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    teacher_only_epochs: int = 9
    joint_epochs: int = 30
    batch_size: int = 8
    backbone_mode: str = "refine_by_teacher"
    structure: str = "full"
    seed: int = 0

    def validate(self):
        problems = []
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if self.teacher_only_epochs < 0 or self.joint_epochs < 0:
            problems.append("epoch counts must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.backbone_mode not in BACKBONE_MODES:
            problems.append(f"backbone_mode must be one of {BACKBONE_MODES}, got {self.backbone_mode!r}")
        if self.structure not in STRUCTURES:
            problems.append(f"structure must be one of {STRUCTURES}, got {self.structure!r}")
        return problems

    @property
    def total_epochs(self) -> int:
        return self.teacher_only_epochs + self.joint_epochs


@dataclass
class PostConfig:
    threshold: float = 0.5
    min_area: int = 1  # in patch cells

    def validate(self):
        problems = []
        if not 0.0 < self.threshold < 1.0:
            problems.append("threshold must lie in (0, 1)")
        if self.min_area < 0:
            problems.append("min_area must be >= 0")
        return problems


@dataclass
class MetricsConfig:
    frame_threshold: float = 0.5
    hd_percentile: float = 100.0

    def validate(self):
        problems = []
        if not 0.0 <= self.frame_threshold <= 1.0:
            problems.append("frame_threshold must lie in [0, 1]")
        if not 0.0 < self.hd_percentile <= 100.0:
            problems.append("hd_percentile must lie in (0, 100]")
        return problems


@dataclass
class DataConfig:
    train: Optional[str] = None  # dataset directory; None renders synthetic clips from ``synth``
    test: Optional[str] = None
    synth_count: int = 300

    def validate(self):
        return [] if self.synth_count >= 1 else ["synth_count must be >= 1"]


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    student: StudentConfig = field(default_factory=StudentConfig)
    pooling: PoolingConfig = field(default_factory=PoolingConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    post: PostConfig = field(default_factory=PostConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SyntheticConfig = field(default_factory=SyntheticConfig)

    def validate(self) -> list[str]:
        problems = []
        for f in dataclasses.fields(self):
            problems += [f"{f.name}: {p}" for p in getattr(self, f.name).validate()]
        if self.teacher.out_channels != self.student.out_channels:
            problems.append("teacher.out_channels must equal student.out_channels")
        return problems


def _build(cls, data, path, problems):
    if not isinstance(data, dict):
        problems.append(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else key
        if key not in fields:
            problems.append(f"{key_path}: unknown key")
            continue
        default = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING \
            else fields[key].default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, key_path, problems)
        else:
            kwargs[key] = _coerce(value, default, key_path, problems)
    return cls(**kwargs)


def _coerce(value, default, path, problems):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            problems.append(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{path}: expected a number, got {value!r}")
            return value
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            problems.append(f"{path}: expected a list of {len(default)} values, got {value!r}")
            return value
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        problems.append(f"{path}: expected a string, got {value!r}")
    return value


def config_from_dict(data: Optional[dict]) -> RunConfig:
    """Build and validate a RunConfig; raises ConfigError listing every violation."""
    problems: list[str] = []
    cfg = _build(RunConfig, data or {}, "", problems)
    if not problems:
        problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    def plain(obj):
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        return obj

    return plain(dataclasses.asdict(cfg))


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from exc
    return config_from_dict(data)


def dump_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
    return path
