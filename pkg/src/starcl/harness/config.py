"""Run configuration and its plain-text ``section.key = value`` format.

Example::

    seed = 3
    data.kind = synthetic
    model.hidden = 100, 100
    method.name = er
    star.gamma = 0.01
    star.lambda = 0.1
    train.lr = 0.1

Blank lines and ``#`` comments are ignored. Any ``star.*`` key enables the
regularizer unless ``star.enabled = false``; with no ``star.*`` keys the run is
a pure baseline.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..methods import MethodConfig
from ..star import StarConfig


class ConfigFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"  # synthetic | idx
    num_classes: int = 10
    tasks: int = 5
    dims: int = 20
    samples_per_class: int = 500
    test_per_class: int = 200
    separation: float = 6.0
    seed: Optional[int] = None  # defaults to the run seed
    image_file: str = ""
    label_file: str = ""
    test_image_file: str = ""
    test_label_file: str = ""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    buffer_capacity: int = 100
    epochs_per_task: int = 5
    batch_size: int = 32

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigFormatError("train.lr must be positive")
        if self.buffer_capacity < 0 or self.epochs_per_task < 1 or self.batch_size < 1:
            raise ConfigFormatError("train sizes must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    hidden: tuple[int, ...] = (100, 100)
    method: MethodConfig = field(default_factory=MethodConfig)
    star: Optional[StarConfig] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = ""

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def with_star(self, **kw) -> "RunConfig":
        return self.replace(star=dataclasses.replace(self.star or StarConfig(), **kw))

    @property
    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed


# dotted key -> (section, field); section None means a top-level RunConfig field
_KEYS = {
    "seed": (None, "seed"),
    "model.hidden": (None, "hidden"),
    "output.dir": (None, "output_dir"),
    "method.name": ("method", "method"),
    "method.alpha": ("method", "alpha"),
    "method.beta": ("method", "beta"),
    "method.replay_weight": ("method", "replay_weight"),
    "star.gamma": ("star", "gamma"),
    "star.lambda": ("star", "lam"),
    "star.epsilon": ("star", "epsilon"),
    "star.ascent_steps": ("star", "ascent_steps"),
    "star.selector": ("star", "selector"),
    "star.perturb_mode": ("star", "perturb_mode"),
    "star.data_source": ("star", "data_source"),
}
for _f in dataclasses.fields(DataConfig):
    _KEYS[f"data.{_f.name}"] = ("data", _f.name)
for _f in dataclasses.fields(TrainConfig):
    _KEYS[f"train.{_f.name}"] = ("train", _f.name)

_SECTION_TYPES = {"data": DataConfig, "method": MethodConfig, "star": StarConfig,
                  "train": TrainConfig}


def _coerce(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false"):
            raise ConfigFormatError(f"expected true/false, got {raw!r}")
        return raw.lower() == "true"
    if isinstance(default, tuple):
        return tuple(int(p) for p in raw.split(",") if p.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        return None if raw.lower() in ("", "none") else int(raw)
    return raw


def parse_config(text: str) -> RunConfig:
    top: dict = {}
    sections: dict[str, dict] = {name: {} for name in _SECTION_TYPES}
    star_enabled: Optional[bool] = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFormatError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key == "star.enabled":
            star_enabled = _coerce(value, False)
            continue
        if key not in _KEYS:
            raise ConfigFormatError(f"line {lineno}: unknown key {key!r}")
        section, name = _KEYS[key]
        owner = RunConfig if section is None else _SECTION_TYPES[section]
        default = {f.name: f for f in dataclasses.fields(owner)}[name].default
        if default is dataclasses.MISSING:
            default = owner().__getattribute__(name)
        try:
            coerced = _coerce(value, default)
        except ValueError as exc:
            raise ConfigFormatError(f"line {lineno}: bad value for {key}: {exc}") from None
        (top if section is None else sections[section])[name] = coerced
    try:
        star = None
        if star_enabled or (star_enabled is None and sections["star"]):
            star = StarConfig(**sections["star"])
        return RunConfig(
            data=DataConfig(**sections["data"]),
            method=MethodConfig(**sections["method"]),
            train=TrainConfig(**sections["train"]),
            star=star,
            **top,
        )
    except ValueError as exc:
        raise ConfigFormatError(str(exc)) from None


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "none" if value is None else str(value)


def dump_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(dump_config(c)) == c``."""
    lines = []
    for key, (section, name) in _KEYS.items():
        if section == "star" and cfg.star is None:
            continue
        owner = cfg if section is None else getattr(cfg, section)
        lines.append(f"{key} = {_fmt(getattr(owner, name))}")
    lines.append(f"star.enabled = {_fmt(cfg.star is not None)}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
