"""Run configuration: TOML file sections, CLI flags, and resolution into dataclasses.

A config file has up to five tables::

    [trainer]       learning_rate, batch_size, max_epochs, patience,
                    adam_beta1, adam_beta2, adam_eps, seed
    [model]         dim, layers, self_connections, bundle_bundle, init_scale
    [augmentation]  mode, dropout_ratio, seed
    [loss]          lambda1, lambda2, temperature, mode, bpr_mean
    [data]          root, name, synthetic, split, eval_ks

Command-line flags (see ``FLAGS``) override file values.
"""
from __future__ import annotations

import dataclasses
import sys

from .encoder import ModelConfig
from .graph import AugmentationConfig
from .objectives import LossConfig
from .trainer import TrainerConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


@dataclasses.dataclass(frozen=True)
class DataConfig:
    root: str = ""
    name: str = ""
    synthetic: str = ""
    split: tuple = (0.7, 0.1, 0.2)
    eval_ks: tuple = (20, 40)


# flag -> (section, field, parser)
FLAGS = {
    "--lr": ("trainer", "learning_rate", float),
    "--batch-size": ("trainer", "batch_size", int),
    "--epochs": ("trainer", "max_epochs", int),
    "--patience": ("trainer", "patience", int),
    "--adam-beta1": ("trainer", "adam_beta1", float),
    "--adam-beta2": ("trainer", "adam_beta2", float),
    "--adam-eps": ("trainer", "adam_eps", float),
    "--seed": ("trainer", "seed", int),
    "--dim": ("model", "dim", int),
    "--layers": ("model", "layers", int),
    "--self-connections": ("model", "self_connections", _bool),
    "--bundle-bundle": ("model", "bundle_bundle", _bool),
    "--init-scale": ("model", "init_scale", str),
    "--aug": ("augmentation", "mode", str),
    "--dropout-ratio": ("augmentation", "dropout_ratio", float),
    "--aug-seed": ("augmentation", "seed", int),
    "--lambda1": ("loss", "lambda1", float),
    "--lambda2": ("loss", "lambda2", float),
    "--temperature": ("loss", "temperature", float),
    "--mode": ("loss", "mode", str),
    "--bpr-mean": ("loss", "bpr_mean", _bool),
    "--data": ("data", "root", str),
    "--name": ("data", "name", str),
    "--synthetic": ("data", "synthetic", str),
    "--split": ("data", "split", _floats),
    "--eval-ks": ("data", "eval_ks", _ints),
}

SECTIONS = {
    "trainer": TrainerConfig,
    "model": ModelConfig,
    "augmentation": AugmentationConfig,
    "loss": LossConfig,
    "data": DataConfig,
}
_NESTED = {"model", "loss", "augmentation"}


def config_fields() -> set[tuple[str, str]]:
    """Every ``(section, field)`` a config can set."""
    out = set()
    for section, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            if f.name not in _NESTED:
                out.add((section, f.name))
    return out


def add_flags(parser):
    for flag, (section, name, parse) in FLAGS.items():
        parser.add_argument(flag, dest=f"{section}.{name}", type=str, default=None,
                            metavar=name.upper(), help=f"[{section}] {name}")


def load_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    known = config_fields()
    for section, table in raw.items():
        if not isinstance(table, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key in table:
            if (section, key) not in known:
                raise ConfigError(f"unknown config key [{section}] {key}")
    return raw


def resolve(file_values: dict, overrides: dict):
    """Merge file values and CLI overrides into ``(TrainerConfig, DataConfig)``.

    When the augmentation seed is not given it follows the trainer seed.
    """
    values = {s: dict(file_values.get(s, {})) for s in SECTIONS}
    parsers = {(s, n): p for s, n, p in FLAGS.values()}
    for key, raw in overrides.items():
        if raw is None:
            continue
        section, name = key.split(".", 1)
        values[section][name] = raw
    try:
        for section, table in values.items():
            for name, raw in list(table.items()):
                parse = parsers.get((section, name))
                if parse is not None and (isinstance(raw, str) or parse in (_ints, _floats)):
                    table[name] = parse(raw)
        aug_vals = values["augmentation"]
        aug_vals.setdefault("seed", values["trainer"].get("seed", 0))
        aug = AugmentationConfig(**aug_vals)
        model = ModelConfig(augmentation=aug, **values["model"])
        loss = LossConfig(**values["loss"])
        trainer = TrainerConfig(model=model, loss=loss, **values["trainer"])
        data_vals = values["data"]
        for name in ("split", "eval_ks"):
            if name in data_vals:
                data_vals[name] = tuple(data_vals[name])
        data = DataConfig(**data_vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return trainer, data


def to_dict(trainer: TrainerConfig, data: DataConfig) -> dict:
    t = dataclasses.asdict(trainer)
    model = t.pop("model")
    aug = model.pop("augmentation")
    loss = t.pop("loss")
    d = dataclasses.asdict(data)
    d["split"] = list(d["split"])
    d["eval_ks"] = list(d["eval_ks"])
    return {"trainer": t, "model": model, "augmentation": aug, "loss": loss, "data": d}
