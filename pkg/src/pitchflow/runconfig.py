"""Run configuration: one INI-style file covering every pipeline stage.

A run config collects the per-module settings (model, training, sampler,
score extraction) plus a single seed and optional default paths, so a
whole experiment can be reproduced from one file.  Sections map onto the
config dataclasses by name:

    [run]       seed
    [model]     fields of ModelConfig
    [train]     fields of TrainConfig (except seed; see below)
    [sampler]   fields of SamplerConfig
    [score]     fields of ScoreConfig
    [paths]     data_dir, out_dir, checkpoint

Values are written as ``key = value`` and coerced to the field's declared
type.  Command-line ``--set section.key=value`` overrides are applied after
the file, and ``--seed`` last of all.

There is exactly one seed.  ``[train] seed`` is rejected so a config file
cannot disagree with ``[run] seed``; the run seed is injected into the
TrainConfig during assembly.
"""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .flow import SamplerConfig, TrainConfig
from .model import ModelConfig
from .score import ScoreConfig

__all__ = ["PathDefaults", "RunConfig", "load_run_config"]

MAX_SEED = 2**64

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class PathDefaults:
    """Optional path defaults; explicit command arguments take precedence."""

    data_dir: str | None = None
    out_dir: str | None = None
    checkpoint: str | None = None


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs: per-stage configs, paths, and the seed."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    paths: PathDefaults = field(default_factory=PathDefaults)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed < MAX_SEED:
            raise ValueError(f"seed must lie in [0, 2**64), got {self.seed}")


_SECTIONS: dict[str, type] = {
    "model": ModelConfig,
    "train": TrainConfig,
    "sampler": SamplerConfig,
    "score": ScoreConfig,
    "paths": PathDefaults,
}


def _coerce(section: str, key: str, text: str, typ) -> object:
    """Parse one config value according to the dataclass field type."""
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if len(args) == 1:
            return None if text == "" else _coerce(section, key, text, args[0])
        raise ValueError(f"[{section}] {key}: unsupported option type {typ}")
    if typ is bool:
        lowered = text.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"[{section}] {key}: expected a boolean, got {text!r}")
    if typ is int:
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"[{section}] {key}: expected an integer, got {text!r}") from None
    if typ is float:
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"[{section}] {key}: expected a number, got {text!r}") from None
    if typ is str:
        return text
    raise ValueError(f"[{section}] {key}: unsupported option type {typ}")


def _section_kwargs(section: str, raw: dict[str, str]) -> dict[str, object]:
    cls = _SECTIONS[section]
    hints = typing.get_type_hints(cls)
    fields = {f.name for f in dataclasses.fields(cls)}
    out: dict[str, object] = {}
    for key, text in raw.items():
        if section == "train" and key == "seed":
            raise ValueError(
                "[train] seed is not configurable; set [run] seed or pass --seed"
            )
        if key not in fields:
            raise ValueError(f"[{section}] unknown key {key!r}")
        out[key] = _coerce(section, key, text, hints[key])
    return out


def _parse_override(item: str) -> tuple[str, str, str]:
    head, sep, value = item.partition("=")
    section, dot, key = head.partition(".")
    if not sep or not dot or not section or not key:
        raise ValueError(f"--set expects section.key=value, got {item!r}")
    return section.strip(), key.strip(), value


def load_run_config(
    path: str | Path | None = None,
    overrides: typing.Sequence[str] = (),
    seed: int | None = None,
) -> RunConfig:
    """Build a RunConfig from an optional file plus overrides.

    Precedence, lowest to highest: dataclass defaults, the config file,
    ``--set`` overrides in order, then the ``seed`` argument.  Unknown
    sections or keys and unparseable values raise ValueError; a named
    config file that does not exist raises FileNotFoundError.
    """
    raw: dict[str, dict[str, str]] = {name: {} for name in _SECTIONS}
    run_raw: dict[str, str] = {}

    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ValueError(f"{path}: {exc}") from exc
        for section in parser.sections():
            items = dict(parser.items(section))
            if section == "run":
                run_raw.update(items)
            elif section in raw:
                raw[section].update(items)
            else:
                raise ValueError(f"{path}: unknown section [{section}]")

    for item in overrides:
        section, key, value = _parse_override(item)
        if section == "run":
            run_raw[key] = value
        elif section in raw:
            raw[section][key] = value
        else:
            raise ValueError(f"--set: unknown section {section!r}")

    unknown_run = set(run_raw) - {"seed"}
    if unknown_run:
        raise ValueError(f"[run] unknown key(s): {sorted(unknown_run)}")
    if seed is None:
        seed = _coerce("run", "seed", run_raw.get("seed", "0"), int)

    kwargs = {name: _section_kwargs(name, raw[name]) for name in _SECTIONS}
    kwargs["train"]["seed"] = seed
    return RunConfig(
        model=ModelConfig(**kwargs["model"]),
        train=TrainConfig(**kwargs["train"]),
        sampler=SamplerConfig(**kwargs["sampler"]),
        score=ScoreConfig(**kwargs["score"]),
        paths=PathDefaults(**kwargs["paths"]),
        seed=seed,
    )
