"""Pipeline configuration: an INI file whose sections prefix the keys.

Example::

    [run]
    seed = 7

    [backbone]
    variant = tiny

    [train.finetune]
    epochs = 50
    batch_size = 8

Unknown sections or keys are rejected so typos do not silently fall back
to defaults.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentConfig
from .model import BackboneConfig, Preprocess
from .train import TrainConfig

ENV_VAR = "SEGDENSE_CONFIG"


@dataclass
class Thresholds:
    binarize: float = 0.5
    band_low: float = 0.5
    band_high: float = 0.9
    max_hole_fraction: float = 0.001

    def __post_init__(self):
        if not 0.0 < self.binarize < 1.0:
            raise ValueError(f"binarize threshold must lie in (0, 1), got {self.binarize}")
        if not self.band_low < self.band_high:
            raise ValueError(f"band_low must be below band_high, got ({self.band_low}, {self.band_high})")


@dataclass
class PipelineConfig:
    seed: int = 0
    train_fraction: float = 0.7
    checkpoint_dir: str = "checkpoints"
    output_dir: str = "out"
    backbone: BackboneConfig = field(default_factory=BackboneConfig.full)
    branches: int = 4
    fusion_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    preprocess: Preprocess = field(default_factory=Preprocess)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(phase="pretrain"))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(phase="finetune"))
    thresholds: Thresholds = field(default_factory=Thresholds)

    def train_config(self, phase: str) -> TrainConfig:
        cfg = self.pretrain if phase == "pretrain" else self.finetune
        return TrainConfig(**{**_as_dict(cfg), "seed": self.seed, "phase": phase})

    def with_seed(self, seed: int) -> PipelineConfig:
        return replace(self, seed=int(seed))


def _as_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_TRAIN_KEYS = {"learning_rate": float, "momentum": float, "epochs": int, "batch_size": int,
               "checkpoint_every": int}
_SCHEMA = {
    "run": {"seed": int, "train_fraction": float, "checkpoint_dir": str, "output_dir": str},
    "backbone": {"variant": str, "growth_rate": int, "block_layer_counts": _ints, "stem_channels": int,
                 "bn_size": int, "pretrained_init": _bool, "pretrained_path": str},
    "model": {"branches": int, "fusion_weights": _floats},
    "preprocess": {"mean": _floats, "std": _floats},
    "augment": {"contrast_factors": _floats, "center_value": float},
    "train.pretrain": _TRAIN_KEYS,
    "train.finetune": _TRAIN_KEYS,
    "thresholds": {"binarize": float, "band_low": float, "band_high": float, "max_hole_fraction": float},
}


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text, source=source)
    raw = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"{source}: unknown section [{section}]")
        raw[section] = {}
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"{source}: unknown key {section}.{key}")
            try:
                raw[section][key] = _SCHEMA[section][key](value)
            except ValueError as exc:
                raise ValueError(f"{source}: bad value for {section}.{key}: {exc}") from None

    run = raw.get("run", {})
    bb = dict(raw.get("backbone", {}))
    variant = bb.pop("variant", "full")
    backbone = BackboneConfig.tiny(**bb) if variant == "tiny" else BackboneConfig(variant=variant, **bb)
    model = raw.get("model", {})
    cfg = PipelineConfig(
        seed=run.get("seed", 0),
        train_fraction=run.get("train_fraction", 0.7),
        checkpoint_dir=run.get("checkpoint_dir", "checkpoints"),
        output_dir=run.get("output_dir", "out"),
        backbone=backbone,
        branches=model.get("branches", 4),
        fusion_weights=model.get("fusion_weights", (1.0, 1.0, 1.0, 1.0)),
        preprocess=Preprocess(**raw.get("preprocess", {})),
        augment=AugmentConfig(**raw.get("augment", {})),
        pretrain=TrainConfig(phase="pretrain", **raw.get("train.pretrain", {})),
        finetune=TrainConfig(phase="finetune", **raw.get("train.finetune", {})),
        thresholds=Thresholds(**raw.get("thresholds", {})),
    )
    if len(cfg.fusion_weights) != 4:
        raise ValueError(f"{source}: model.fusion_weights needs 4 values")
    if cfg.branches not in (1, 2, 3, 4):
        raise ValueError(f"{source}: model.branches must be 1..4")
    if not 0.0 < cfg.train_fraction < 1.0:
        raise ValueError(f"{source}: run.train_fraction must lie in (0, 1)")
    for name in ("mean", "std"):
        if len(getattr(cfg.preprocess, name)) != 3:
            raise ValueError(f"{source}: preprocess.{name} needs 3 values")
    return cfg


def load_config(path=None) -> PipelineConfig:
    """Read ``path``, else ``$SEGDENSE_CONFIG``, else defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def dump_config(cfg: PipelineConfig) -> str:
    def fmt(v):
        if isinstance(v, (tuple, list)):
            return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        return str(v)

    out = [
        "[run]",
        f"seed = {cfg.seed}",
        f"train_fraction = {cfg.train_fraction!r}",
        f"checkpoint_dir = {cfg.checkpoint_dir}",
        f"output_dir = {cfg.output_dir}",
        "",
        "[backbone]",
    ]
    for k, v in _as_dict(cfg.backbone).items():
        if v is not None:
            out.append(f"{k} = {fmt(v)}")
    out += ["", "[model]", f"branches = {cfg.branches}", f"fusion_weights = {fmt(cfg.fusion_weights)}",
            "", "[preprocess]", f"mean = {fmt(cfg.preprocess.mean)}", f"std = {fmt(cfg.preprocess.std)}",
            "", "[augment]", f"contrast_factors = {fmt(cfg.augment.contrast_factors)}",
            f"center_value = {cfg.augment.center_value!r}"]
    for phase in ("pretrain", "finetune"):
        t = getattr(cfg, phase)
        out += ["", f"[train.{phase}]"] + [f"{k} = {getattr(t, k)!r}" for k in _TRAIN_KEYS]
    out += ["", "[thresholds]"] + [f"{k} = {v!r}" for k, v in _as_dict(cfg.thresholds).items()]
    return "\n".join(out) + "\n"
