"""Run configuration: one TOML file with a section per module.

Example::

    seed = 0

    [data]
    root = "data"
    n_source = 100
    n_target = 100

    [data.target]
    background = "noise-texture"

    [model]
    stride = 8

    [loss]
    lambda_ent = 0.1

    [train]
    steps = 2000
    enabled_losses = ["ent_src", "ent_tgt", "adv"]

    [eval]
    threshold = 0.5

Unknown keys are rejected and every problem is reported at once. Command
line overrides use dotted paths (``train.steps=50``) with TOML value
syntax. ``POINTDA_SEED`` overrides ``seed``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, get_args, get_origin, get_type_hints

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .data import DEFAULT_SOURCE, DEFAULT_TARGET, AugConfig, DomainPairSpec, SceneParams
from .errors import ConfigError
from .losses import LossWeights
from .network import BackboneConfig

LOSS_FLAGS = ("ent_src", "ent_tgt", "adv")
SEED_ENV = "POINTDA_SEED"


@dataclass
class SceneSection:
    image_size: int = 128
    count_range: list[int] = field(default_factory=lambda: [5, 15])
    dot_radius_range: list[float] = field(default_factory=lambda: [2.0, 3.0])
    background: str = "flat"
    illumination: float = 1.0
    blob_profile: str = "gaussian"
    seed: int = 1

    def params(self) -> SceneParams:
        return SceneParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in asdict(self).items()})


def _scene_section(p: SceneParams) -> SceneSection:
    return SceneSection(**{k: list(v) if isinstance(v, tuple) else v for k, v in asdict(p).items()})


@dataclass
class DataSection:
    root: str = "data"
    n_source: int = 100
    n_target: int = 100
    source: SceneSection = field(default_factory=lambda: _scene_section(DEFAULT_SOURCE))
    target: SceneSection = field(default_factory=lambda: _scene_section(DEFAULT_TARGET))

    def pair_spec(self) -> DomainPairSpec:
        return DomainPairSpec(self.source.params(), self.target.params())


@dataclass
class ModelSection:
    variant: str = "tiny"
    stride: int = 8
    slots_per_cell: int = 4
    channels: int = 64
    disc_channels: int = 32

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(**asdict(self))


@dataclass
class LossSection:
    lambda_loc: float = 1.0
    lambda_cls: float = 1.0
    lambda_ent: float = 0.1
    lambda_adv: float = 0.001
    match_dist_weight: float = 0.05
    match_reachable_only: bool = True
    normalize_dis_loss: bool = True
    loc_units: str = "stride"  # "stride" | "pixel"

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_loc, self.lambda_cls, self.lambda_ent, self.lambda_adv)


@dataclass
class TrainSection:
    steps: int = 2000
    batch_source: int = 4
    batch_target: int = 4
    lr_main: float = 1e-3
    lr_dis: float = 1e-4
    enabled_losses: list[str] = field(default_factory=lambda: list(LOSS_FLAGS))
    eval_interval: int = 500
    checkpoint_interval: int = 500
    crop_size: int = 128
    flip_prob: float = 0.5

    def aug(self) -> AugConfig:
        return AugConfig(self.crop_size, self.flip_prob)


@dataclass
class EvalSection:
    threshold: float = 0.5
    sweep: list[float] = field(default_factory=list)


@dataclass
class Config:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **sections) -> "Config":
        return dataclasses.replace(self, **sections)


def _check_scalar(value, typ, path, problems):
    origin = get_origin(typ)
    if origin is list:
        (inner,) = get_args(typ)
        if not isinstance(value, list):
            problems.append(f"{path}: expected a list, got {value!r}")
            return value
        return [_check_scalar(v, inner, f"{path}[{n}]", problems) for n, v in enumerate(value)]
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        problems.append(f"{path}: expected {typ.__name__}, got {value!r}")
    return value


def _build(cls, data: dict, prefix: str, problems: list[str], base=None):
    """Build ``cls`` from ``data`` on top of ``base`` (default: ``cls()``), so
    partially specified sections keep their own defaults."""
    base = cls() if base is None else base
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            problems.append(f"{prefix}{key}: unknown key")
    kwargs = {}
    for name in known:
        if name not in data:
            continue
        typ = hints[name]
        path = f"{prefix}{name}"
        if dataclasses.is_dataclass(typ):
            if not isinstance(data[name], dict):
                problems.append(f"{path}: expected a table")
                continue
            kwargs[name] = _build(typ, data[name], path + ".", problems, getattr(base, name))
        else:
            kwargs[name] = _check_scalar(data[name], typ, path, problems)
    return dataclasses.replace(base, **kwargs)


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str], problems: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            problems.append(f"override {item!r}: expected key=value")
            continue
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                problems.append(f"override {key}: {part} is not a table")
                break
        else:
            node[parts[-1]] = _parse_value(text.strip())
    return data


def validate(cfg: Config, problems: list[str]) -> None:
    t = cfg.train
    if t.steps <= 0:
        problems.append(f"train.steps: must be > 0, got {t.steps}")
    for name in ("lr_main", "lr_dis"):
        if getattr(t, name) <= 0:
            problems.append(f"train.{name}: must be > 0")
    for name in ("batch_source", "batch_target", "eval_interval", "checkpoint_interval", "crop_size"):
        if getattr(t, name) < 1:
            problems.append(f"train.{name}: must be >= 1")
    if not 0 <= t.flip_prob <= 1:
        problems.append("train.flip_prob: must lie in [0, 1]")
    for flag in t.enabled_losses:
        if flag not in LOSS_FLAGS:
            problems.append(f"train.enabled_losses: unknown loss {flag!r} (choose from {', '.join(LOSS_FLAGS)})")
    if cfg.loss.loc_units not in ("stride", "pixel"):
        problems.append("loss.loc_units: must be 'stride' or 'pixel'")
    if not 0 < cfg.eval.threshold < 1:
        problems.append("eval.threshold: must lie in (0, 1)")
    for label, builder in (
        ("loss", cfg.loss.weights),
        ("model", cfg.model.backbone),
        ("data.source", cfg.data.source.params),
        ("data.target", cfg.data.target.params),
    ):
        try:
            builder()
        except ValueError as exc:
            problems.append(f"{label}: {exc}")


def _merge(into: dict, new: dict) -> dict:
    for key, value in new.items():
        if isinstance(value, dict) and isinstance(into.get(key), dict):
            _merge(into[key], value)
        else:
            into[key] = value
    return into


def load_config(path=None, overrides: list[str] = (), env: dict | None = None, base: dict | None = None) -> Config:
    """Resolve a config from ``base`` (a config dict, e.g. from a checkpoint),
    then the TOML file at ``path``, then ``overrides``, then the environment."""
    env = os.environ if env is None else env
    problems: list[str] = []
    data: dict = json.loads(json.dumps(base)) if base else {}
    if path is not None:
        try:
            _merge(data, tomllib.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    data = apply_overrides(data, list(overrides), problems)
    if env.get(SEED_ENV):
        try:
            data["seed"] = int(env[SEED_ENV])
        except ValueError:
            problems.append(f"{SEED_ENV}: not an integer: {env[SEED_ENV]!r}")
    cfg = _build(Config, data, "", problems)
    try:
        validate(cfg, problems)
    except TypeError:
        pass  # mistyped values are already listed

    if problems:
        raise ConfigError(problems)
    return cfg


def write_resolved(cfg: Config, path) -> Path:
    path = Path(path)
    path.write_text(cfg.to_toml())
    return path
