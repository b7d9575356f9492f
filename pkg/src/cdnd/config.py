"""YAML run-configuration files mapped onto the dataclass configs.

Layout (every section and key optional; unknown keys are rejected)::

    data:    {dataset, source_domain, target_domain}
    train:   {learning_rate, epochs, batch_size, grl_lambda, grl_ramp_epochs,
              alignment, seeds, shuffle_seed, workers}
    weights: {alpha, gamma, beta1, beta2}
    deform:  {k, m, n_deform, mode, statistic, variance, curvature_neighborhood, fps_start}
    model:   {encoder_widths, classifier_widths, decoder_widths, num_classes}
    shift:   {jitter_sigma, crop_fraction, density_bias, rotation}   # used by gen-data
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .geometry import DeformConfig
from .losses import LossWeights
from .models import ModelConfig
from .synth_data import DomainShiftConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


_DATA_KEYS = ("dataset", "source_domain", "target_domain")
_TRAIN_KEYS = ("learning_rate", "epochs", "batch_size", "grl_lambda", "grl_ramp_epochs",
               "alignment", "seeds", "shuffle_seed", "workers")
_MODEL_KEYS = ("encoder_widths", "classifier_widths", "decoder_widths", "num_classes")


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check(section: str, values: dict, allowed) -> dict:
    if values is None:
        return {}
    if not isinstance(values, dict):
        raise ConfigError(f"section [{section}] must be a mapping")
    unknown = set(values) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    return values


def from_dict(raw: dict) -> tuple[TrainConfig, DomainShiftConfig]:
    raw = raw or {}
    sections = ("data", "train", "weights", "deform", "model", "shift")
    unknown = set(raw) - set(sections)
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    data = _check("data", raw.get("data"), _DATA_KEYS)
    train = _check("train", raw.get("train"), _TRAIN_KEYS)
    weights = _check("weights", raw.get("weights"), _fields(LossWeights))
    deform = _check("deform", raw.get("deform"), _fields(DeformConfig))
    model = _check("model", raw.get("model"), _MODEL_KEYS)
    shift = _check("shift", raw.get("shift"), _fields(DomainShiftConfig))

    model = {k: tuple(v) if isinstance(v, list) else v for k, v in model.items()}
    if "seeds" in train:
        train["seeds"] = tuple(int(s) for s in train["seeds"])
    try:
        cfg = TrainConfig(**data, **train, weights=LossWeights(**weights), deform=DeformConfig(**deform),
                          model=ModelConfig(**model))
        shift_cfg = DomainShiftConfig(**shift)
        cfg.validate()
        shift_cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, shift_cfg


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def to_dict(config: TrainConfig, shift: DomainShiftConfig | None = None) -> dict:
    out = {
        "data": {k: getattr(config, k) for k in _DATA_KEYS},
        "train": {k: _plain(getattr(config, k)) for k in _TRAIN_KEYS},
        "weights": dataclasses.asdict(config.weights),
        "deform": dataclasses.asdict(config.deform),
        "model": {k: _plain(getattr(config.model, k)) for k in _MODEL_KEYS},
    }
    if shift is not None:
        out["shift"] = dataclasses.asdict(shift)
    return out


def load_config(path) -> tuple[TrainConfig, DomainShiftConfig]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw)


def dump_config(config: TrainConfig, shift: DomainShiftConfig | None = None) -> str:
    return yaml.safe_dump(to_dict(config, shift), sort_keys=True, default_flow_style=False)
