"""Strict key/value training configuration files (INI sections).

Unknown sections or keys are hard errors: a typo must never silently fall
back to a default. All defaults mirror the package training defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .bags import DOMAIN_NAMES
from .errors import ConfigError
from .loss import AslConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataSpec:
    """Where a run reads bags from and writes artifacts to."""

    manifest: Path
    bags_dir: Path
    out_dir: Path
    domains: tuple[str, ...]
    stream_mode: str
    normalize: bool


def _parse_bool(raw: str, where: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {raw!r}")


def _parse_domains(raw: str, where: str) -> tuple[str, ...]:
    names = tuple(token.strip() for token in raw.split(",") if token.strip())
    if not names:
        raise ConfigError(f"{where}: at least one domain required")
    for name in names:
        if name not in DOMAIN_NAMES:
            raise ConfigError(
                f"{where}: unknown domain {name!r} (expected from {DOMAIN_NAMES})"
            )
    if len(set(names)) != len(names):
        raise ConfigError(f"{where}: duplicate domain in {names}")
    return names


_SCHEMA: dict[str, dict[str, object]] = {
    "data": {
        "manifest": str,
        "bags_dir": str,
        "domains": _parse_domains,
        "stream_mode": str,
        "normalize": _parse_bool,
    },
    "model": {"head": str, "hidden": int, "dropout": float},
    "train": {
        "lr": float,
        "weight_decay": float,
        "clip": float,
        "epochs": int,
        "seed": int,
        "batch_size": int,
    },
    "asl": {"gamma_pos": float, "gamma_neg": float, "margin": float},
    "output": {"dir": str},
}

_REQUIRED = {("data", "manifest"), ("data", "bags_dir"), ("output", "dir")}


def load_train_config(path: str | Path) -> tuple[TrainConfig, DataSpec]:
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    values: dict[tuple[str, str], object] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            caster = _SCHEMA[section][key]
            where = f"{path} [{section}] {key}"
            try:
                if caster in (_parse_bool, _parse_domains):
                    values[(section, key)] = caster(raw, where)
                else:
                    values[(section, key)] = caster(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{where}: {exc}") from exc
    for section, key in sorted(_REQUIRED):
        if (section, key) not in values:
            raise ConfigError(f"{path}: missing required key {key!r} in [{section}]")

    def get(section: str, key: str, default):
        return values.get((section, key), default)

    cfg = TrainConfig(
        lr=get("train", "lr", 0.001),
        weight_decay=get("train", "weight_decay", 0.001),
        clip=get("train", "clip", 0.08),
        epochs=get("train", "epochs", 25),
        batch_size=get("train", "batch_size", 1),
        head=get("model", "head", "mrl"),
        hidden=get("model", "hidden", 128),
        dropout_rate=get("model", "dropout", 0.25),
        seed=get("train", "seed", 0),
        asl=AslConfig(
            gamma_pos=get("asl", "gamma_pos", 0.0),
            gamma_neg=get("asl", "gamma_neg", 1.0),
            margin=get("asl", "margin", 0.0),
        ),
        stream_mode=get("data", "stream_mode", "bag-union"),
    )
    base = path.parent

    def resolve(raw: str) -> Path:
        p = Path(raw)
        return p if p.is_absolute() else base / p

    spec = DataSpec(
        manifest=resolve(values[("data", "manifest")]),
        bags_dir=resolve(values[("data", "bags_dir")]),
        out_dir=resolve(values[("output", "dir")]),
        domains=get("data", "domains", ("rgb",)),
        stream_mode=cfg.stream_mode,
        normalize=get("data", "normalize", True),
    )
    return cfg, spec
