"""Run configuration: an INI-style file with [model], [train] and [data] sections.

Every key maps onto a field of :class:`ModelConfig`, :class:`TrainConfig`
or :class:`DataConfig` and is converted to that field's type. Command-line
overrides use ``section.key=value``.
"""

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .geometry import Aabb
from .model import HybridModel, ModelConfig
from .train import TrainConfig

AABB_MODES = ("camera", "fixed", "percentile")


@dataclass(frozen=True)
class DataConfig:
    format: str = "auto"
    aabb_mode: str = "camera"
    aabb: tuple = ()                 # min xyz, max xyz when aabb_mode = fixed
    white_background: bool = False
    test_every: int = 8              # COLMAP: every n-th image (sorted by name) is a test view
    n_fallback_points: int = 10000
    init_opacity: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.aabb_mode not in AABB_MODES:
            raise ConfigurationError(f"aabb_mode must be one of {AABB_MODES}, got {self.aabb_mode!r}")
        if self.aabb_mode == "fixed" and len(self.aabb) != 6:
            raise ConfigurationError("aabb_mode = fixed needs aabb = xmin, ymin, zmin, xmax, ymax, zmax")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()

    def to_text(self):
        parser = configparser.ConfigParser()
        for section in ("model", "train", "data"):
            obj = getattr(self, section)
            parser[section] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj)}
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in parser[section].items()]
            lines.append("")
        return "\n".join(lines)


def _format(value):
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(cls, key, raw):
    known = {f.name: f for f in fields(cls)}
    if key not in known:
        raise ConfigurationError(f"unknown key {key!r}; valid keys: {', '.join(sorted(known))}")
    default = known[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigurationError(f"{key} = {raw!r} is not a valid {type(default).__name__}") from None


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig}


def _section_class(section):
    if section not in _SECTIONS:
        raise ConfigurationError(f"unknown section [{section}]; expected one of {sorted(_SECTIONS)}")
    return _SECTIONS[section]


def apply(run: RunConfig, updates) -> RunConfig:
    """``updates`` maps section -> {key: raw string}; each section is rebuilt once."""
    for section, items in updates.items():
        cls = _section_class(section)
        values = {key: _convert(cls, key, raw) for key, raw in items.items()}
        try:
            run = replace(run, **{section: replace(getattr(run, section), **values)})
        except InvalidInputError as exc:
            raise ConfigurationError(f"[{section}]: {exc}") from None
    return run


def parse_config_text(text, source="<config>") -> dict:
    """Raw ``{section: {key: value}}`` from config text."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    return {section: dict(parser[section]) for section in parser.sections()}


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file at ``path``, then ``section.key=value`` overrides."""
    updates = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} not found")
        updates = parse_config_text(path.read_text(), str(path))
    for item in overrides:
        lhs, sep, raw = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        _section_class(section)
        updates.setdefault(section, {})[key.strip()] = raw
    return apply(RunConfig(), updates)


def scene_aabb(dataset, data_cfg: DataConfig) -> Aabb:
    if data_cfg.aabb_mode == "fixed":
        return Aabb(data_cfg.aabb[:3], data_cfg.aabb[3:])
    if data_cfg.aabb_mode == "camera":
        try:
            return dataset.camera_aabb()
        except InvalidInputError as exc:
            raise ConfigurationError(f"camera AABB: {exc}") from None
    try:
        return Aabb.from_percentiles(dataset.points)
    except InvalidInputError as exc:
        raise ConfigurationError(f"percentile AABB of the initial points: {exc}") from None


def build_model(dataset, run: RunConfig, dtype=np.float32) -> HybridModel:
    return HybridModel.initialize(dataset.points, dataset.point_colors, scene_aabb(dataset, run.data),
                                  run.model, seed=run.train.seed, dtype=dtype,
                                  init_opacity=run.data.init_opacity)
