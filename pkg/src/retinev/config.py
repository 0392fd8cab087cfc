"""Run configuration: TOML file with [data], [lldm], [model], [loss], [train]
sections, merged with CLI overrides and fully validated before any work starts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .degrade import DegradationConfig
from .losses import LossWeights
from .model import ModelConfig

SEED_ENV_VAR = "RETINEV_SEED"


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending field path."""


@dataclass(frozen=True)
class DataConfig:
    train_dir: str = ""
    test_dir: str = ""
    low_dir: str = "low"
    high_dir: str = "high"
    #: when true, low-light inputs are synthesized by darkening the GT on the
    #: fly instead of being read from a paired low/ directory
    synthetic_low: bool = False


@dataclass(frozen=True)
class TrainConfig:
    patch_size: int = 64
    batch_size: int = 8
    iters_pretrain: int = 2000
    iters_main: int = 2000
    lr_main: float = 2e-4
    lr_min: float = 1e-7
    lr_denoiser_scale: float = 0.1
    seed: int = 0
    checkpoint_every: int = 500
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.patch_size < 8:
            raise ConfigError("train.patch_size must be >= 8")
        if not (self.lr_main > self.lr_min > 0):
            raise ConfigError("train.lr_main > train.lr_min > 0 required")
        if not (0 < self.lr_denoiser_scale <= 1):
            raise ConfigError("train.lr_denoiser_scale must be in (0, 1]")
        if self.batch_size < 1 or self.iters_main < 0 or self.iters_pretrain < 0:
            raise ConfigError("train counts must be non-negative (batch_size >= 1)")


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = DataConfig()
    lldm: DegradationConfig = DegradationConfig()
    model: ModelConfig = ModelConfig()
    loss: LossWeights = LossWeights()
    train: TrainConfig = TrainConfig()
    extractor_seed: int = 1234

    def config_hash(self) -> str:
        """Stable digest of everything that affects training semantics."""
        payload = dataclasses.asdict(self)
        payload.pop("data")  # dataset paths may move between hosts
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True, default=str).encode()
        ).hexdigest()


_SECTION_TYPES = {
    "data": DataConfig,
    "lldm": DegradationConfig,
    "model": ModelConfig,
    "loss": LossWeights,
    "train": TrainConfig,
}


def _build_section(name: str, cls, raw: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"unknown field {name}.{key}")
        if fields[key].type.startswith("tuple") and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Parse a TOML run config; `overrides` maps section -> {field: value}.

    The RETINEV_SEED environment variable provides a global seed at the
    lowest precedence: it applies only when neither the file nor the
    overrides set the seed.
    """
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
    for section, values in (overrides or {}).items():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section}]")
        raw.setdefault(section, {}).update(
            {k: v for k, v in values.items() if v is not None})
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            env_seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
        raw.setdefault("train", {}).setdefault("seed", env_seed)
        raw.setdefault("lldm", {}).setdefault("seed", env_seed)
    unknown = set(raw) - set(_SECTION_TYPES) - {"extractor_seed"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    sections = {
        name: _build_section(name, cls, raw.get(name, {}))
        for name, cls in _SECTION_TYPES.items()
    }
    return RunConfig(extractor_seed=raw.get("extractor_seed", 1234), **sections)
