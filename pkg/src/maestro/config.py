"""Declarative run configuration.

One TOML file drives a whole run: a [model] table, a [train] table, a
[curriculum] table, and a top-level seed. Unknown tables or keys are
rejected outright so a typo cannot silently fall back to a default. Every
command writes the fully resolved configuration next to its outputs.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .model import ModelConfig
from .training import CurriculumSchedule, TrainConfig

DEFAULT_SEED = 2711

_SECTIONS = ("model", "train", "curriculum")


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    curriculum: CurriculumSchedule
    seed: int = DEFAULT_SEED

    def resolved(self) -> dict:
        return {
            "seed": self.seed,
            "model": asdict(self.model),
            "train": asdict(self.train),
            "curriculum": asdict(self.curriculum),
        }


def _build_section(cls, name: str, table: dict):
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    allowed = {f.name for f in fields(cls)}
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key '{name}.{sorted(unknown)[0]}'")
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigError(f"bad value in [{name}]: {exc}") from exc


def load_config(path=None, seed_override: int | None = None,
                model_overrides: dict | None = None) -> RunConfig:
    """Parse and validate a TOML run configuration.

    path may be None for an all-defaults run. seed_override (a CLI flag)
    wins over the file; model_overrides patch [model] keys after the file is
    read, which is how ablation toggles are applied.
    """
    data: dict = {}
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc

    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown section or key '{sorted(unknown)[0]}'")

    seed = data.get("seed", DEFAULT_SEED)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    if seed_override is not None:
        seed = int(seed_override)

    model_table = dict(data.get("model", {}))
    if model_overrides:
        model_table.update(model_overrides)
    train_table = dict(data.get("train", {}))
    train_table.setdefault("seed", seed)
    if seed_override is not None:
        train_table["seed"] = seed

    return RunConfig(
        model=_build_section(ModelConfig, "model", model_table),
        train=_build_section(TrainConfig, "train", train_table),
        curriculum=_build_section(CurriculumSchedule, "curriculum",
                                  dict(data.get("curriculum", {}))),
        seed=seed,
    )
