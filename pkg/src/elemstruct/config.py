"""Model and training configuration, and the INI-style config file.

A config file has a ``[model]`` and a ``[train]`` section whose keys are
exactly the dataclass field names below::

    [model]
    K = 10
    d_e = 2
    structure_kind = translation

    [train]
    epochs = 40
    learning_rate = 0.001
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

STRUCTURE_KINDS = ("translation", "deformation", "identity")
ADJUSTMENT_KINDS = ("linear", "mlp")
INITIAL_KINDS = ("unit-square", "template", "random-cube")


@dataclass
class ModelConfig:
    K: int = 10
    d_e: int = 2
    structure_kind: str = "translation"
    adjustment_kind: str = "mlp"
    points_per_structure: int = 250
    feature_size: int = 1024
    supervised: bool = False
    initial_structure: str = "unit-square"
    # path to an OBJ/PLY/XYZ template; "dataset" means the dataset's own template
    template: str = ""
    encoder_widths: tuple[int, ...] = (64, 128, 1024)
    deformation_widths: tuple[int, ...] = (128, 128)
    linear_widths: tuple[int, ...] = (512, 512)
    mlp_widths: tuple[int, ...] = (1024, 512, 256, 128)

    def validate(self) -> "ModelConfig":
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.d_e < 1:
            raise ConfigError("d_e must be >= 1")
        if self.points_per_structure < 1 or self.feature_size < 1:
            raise ConfigError("points_per_structure and feature_size must be positive")
        if self.structure_kind not in STRUCTURE_KINDS:
            raise ConfigError(f"structure_kind must be one of {STRUCTURE_KINDS}, got {self.structure_kind!r}")
        if self.adjustment_kind not in ADJUSTMENT_KINDS:
            raise ConfigError(f"adjustment_kind must be one of {ADJUSTMENT_KINDS}, got {self.adjustment_kind!r}")
        if self.initial_structure not in INITIAL_KINDS:
            raise ConfigError(f"initial_structure must be one of {INITIAL_KINDS}, got {self.initial_structure!r}")
        if self.supervised and self.K != 1:
            raise ConfigError("supervised training uses a single structure (K = 1)")
        if self.initial_structure == "template" and not self.template:
            raise ConfigError("initial_structure = template needs a template path (or 'dataset')")
        return self


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 16
    epochs: int = 10
    lr_milestones: tuple[float, ...] = (0.8, 0.9)
    lr_decay: float = 0.1
    input_points: int = 2500
    seed: int = 0
    checkpoint_interval: int = 0
    resample: bool = True

    def validate(self) -> "TrainConfig":
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1 or self.input_points < 1:
            raise ConfigError("batch_size, epochs and input_points must be positive")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be >= 0")
        ms = list(self.lr_milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError("lr_milestones must be strictly increasing")
        if any(m <= 0 for m in ms):
            raise ConfigError("lr_milestones must be positive")
        return self


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {"model": dataclasses.asdict(self.model), "train": dataclasses.asdict(self.train)}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        model = ModelConfig(**_coerce_all(ModelConfig, data.get("model", {})))
        train = TrainConfig(**_coerce_all(TrainConfig, data.get("train", {})))
        return cls(model.validate(), train.validate())


def _coerce(ftype, raw):
    text = str(ftype)
    if isinstance(raw, str):
        raw = raw.strip()
    if text in ("int", "<class 'int'>"):
        return int(raw)
    if text in ("float", "<class 'float'>"):
        return float(raw)
    if text in ("bool", "<class 'bool'>"):
        if isinstance(raw, bool):
            return raw
        low = str(raw).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if text.startswith("tuple"):
        inner = float if "float" in text else int
        if isinstance(raw, (list, tuple)):
            return tuple(inner(v) for v in raw)
        return tuple(inner(v) for v in str(raw).replace(",", " ").split())
    return str(raw)


def _coerce_all(cls, values: dict) -> dict:
    known = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(sorted(known))}")
        try:
            out[key] = _coerce(known[key], raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return out


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``section.key=value`` (or bare ``key=value``) overrides."""
    data = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if "." in key:
            section, key = key.split(".", 1)
        else:
            matches = [s for s in data if key in data[s]]
            if not matches:
                valid = sorted(k for s in data for k in data[s])
                raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(valid)}")
            section = matches[0]
        if section not in data:
            raise ConfigError(f"unknown section {section!r}")
        if key not in data[section]:
            raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(sorted(data[section]))}")
        data[section][key] = value
    return ExperimentConfig.from_dict(data)


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (K, d_e)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    unknown = [s for s in parser.sections() if s not in ("model", "train")]
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}; valid sections: model, train")
    data = {s: dict(parser.items(s)) for s in parser.sections()}
    return ExperimentConfig.from_dict(data)


def _fmt(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    return str(value)


def dump_config(config: ExperimentConfig, path) -> None:
    lines = []
    for section, values in config.to_dict().items():
        lines.append(f"[{section}]")
        lines += [f"{k} = {_fmt(v)}" for k, v in values.items()]
        lines.append("")
    Path(path).write_text("\n".join(lines))


def recipe_path(name: str) -> Path:
    path = Path(__file__).parent / "recipes" / f"{name}.ini"
    if not path.exists():
        available = sorted(p.stem for p in path.parent.glob("*.ini"))
        raise ConfigError(f"unknown recipe {name!r}; available: {', '.join(available)}")
    return path
