"""Experiment configuration: defaults, JSON files, flag overrides, presets,
and the factor grid.

Precedence is defaults < config file < command-line flags.  The fully
resolved config and its hash are echoed into every results document so a run
can be reproduced from its output alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from itertools import product
from pathlib import Path

from lungsound.architectures import ARCHITECTURES
from lungsound.frontends import FRONTENDS
from lungsound.patches import PATCH_WIDTHS, MixupConfig

DATA_ROOT_ENV = "LUNGSOUND_DATA_ROOT"
SPLIT_SCHEMES = ("kfold5", "official", "ratio")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: int = 1
    frontend: str = "gamma"
    patch_width: int = 64
    overlap: float = 0.0
    mixup: bool = True
    mixup_distribution: str = "uniform"
    model: str = "cnn_moe"
    experts: int = 10
    lr: float = 1e-4
    epochs: int = 100
    batch: int = 100
    seed: int = 1
    split: str = "kfold5"
    train_frac: float = 0.6
    fold: int | None = None
    loss: str = "auto"
    gamma: float = 0.5
    data_root: str = ""
    cache_dir: str = ""
    out_dir: str = "runs"

    def __post_init__(self):
        if self.task not in (1, 2):
            raise ConfigError(f"task must be 1 or 2, got {self.task}")
        if self.frontend not in FRONTENDS:
            raise ConfigError(f"frontend must be one of {FRONTENDS}, got {self.frontend!r}")
        if self.patch_width not in PATCH_WIDTHS:
            raise ConfigError(
                f"patch width must be one of {PATCH_WIDTHS}, got {self.patch_width}"
            )
        if self.overlap not in (0.0, 0.5):
            raise ConfigError(f"overlap must be 0 or 0.5, got {self.overlap}")
        if self.model not in ARCHITECTURES:
            raise ConfigError(f"model must be one of {ARCHITECTURES}, got {self.model!r}")
        if self.split not in SPLIT_SCHEMES:
            raise ConfigError(f"split must be one of {SPLIT_SCHEMES}, got {self.split!r}")
        if self.experts < 1:
            raise ConfigError(f"experts must be positive, got {self.experts}")
        if not self.data_root:
            self.data_root = os.environ.get(DATA_ROOT_ENV, "")

    @property
    def n_classes(self) -> int:
        return 4 if self.task == 1 else 3

    @property
    def mixup_pairing(self) -> str:
        # anomaly cycles are mixed with normal ones; recordings mix freely
        return "normal_vs_anomaly" if self.task == 1 else "random"

    def mixup_config(self) -> MixupConfig | None:
        if not self.mixup:
            return None
        return MixupConfig(
            enabled=True,
            distribution=self.mixup_distribution,
            task_pairing=self.mixup_pairing,
        )

    def resolved(self) -> dict:
        return {k: v for k, v in sorted(dataclasses.asdict(self).items())}

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def replace(self, **kwargs) -> "ExperimentConfig":
        return dataclasses.replace(self, **kwargs)


PRESETS: dict[str, dict] = {
    # final anomaly-cycle system: gammatone, square patches, no overlap, mixup
    "task1-final": {
        "task": 1,
        "frontend": "gamma",
        "patch_width": 64,
        "overlap": 0.0,
        "mixup": True,
        "model": "cnn_moe",
        "experts": 10,
    },
    # final disease-group system: log-mel, wide patches, 50% overlap, mixup
    "task2-final": {
        "task": 2,
        "frontend": "logmel",
        "patch_width": 128,
        "overlap": 0.5,
        "mixup": True,
        "model": "cnn_moe",
        "experts": 10,
    },
}


def _known_fields() -> dict[str, type]:
    return {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def build_config(
    file_path=None, preset: str | None = None, overrides: dict | None = None
) -> ExperimentConfig:
    """Merge defaults, an optional JSON file, an optional preset, and explicit
    overrides (highest precedence) into a validated config."""
    values: dict = {}
    if file_path is not None:
        try:
            loaded = json.loads(Path(file_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {file_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {file_path} must hold a JSON object")
        values.update(loaded)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}, choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    known = _known_fields()
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


GRID_AXES: dict[str, tuple] = {
    "frontend": FRONTENDS,
    "overlap": (0.0, 0.5),
    "patch_width": PATCH_WIDTHS,
    "mixup": (False, True),
}


@dataclass(frozen=True)
class GridSpec:
    """Cartesian factor grid over a subset of the studied axes."""

    axes: tuple[str, ...]
    all_folds: bool = False

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("grid needs at least one axis")
        bad = sorted(set(self.axes) - set(GRID_AXES))
        if bad:
            raise ConfigError(f"unknown grid axes: {bad}")
        if len(set(self.axes)) != len(self.axes):
            raise ConfigError("grid axes repeat")

    def points(self, base: ExperimentConfig) -> list[ExperimentConfig]:
        configs = []
        for combo in product(*(GRID_AXES[a] for a in self.axes)):
            configs.append(base.replace(**dict(zip(self.axes, combo))))
        return configs
