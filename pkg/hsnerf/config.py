"""
Experiment configuration files.

An experiment is a JSON object with up to four sections::

    {"field": {...}, "train": {...}, "split": {...}, "sampler": {...}}

Missing sections and keys take their defaults; unknown ones are rejected.
"""

from __future__ import annotations


__all__ = [
    "Experiment",
    "CONFIG_FILE",
    "load_experiment",
    "apply_overrides",
    "dump_experiment",
    "parse_assignment",
]

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Tuple, Union

from hsnerf.errors import ConfigError
from hsnerf.field import FieldConfig
from hsnerf.renderer import SamplerConfig
from hsnerf.trainer import SplitSpec, TrainConfig


CONFIG_FILE = "config.json"

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Experiment:
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    split: SplitSpec = dataclasses.field(default_factory=SplitSpec)
    sampler: SamplerConfig = dataclasses.field(default_factory=SamplerConfig)

    def validate(self) -> Experiment:
        self.field.validate(bound=False)
        self.train.validate()
        self.split.validate()
        self.sampler.validate()
        return self

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {
            "field": self.field.to_dict(),
            "train": self.train.to_dict(),
            "split": self.split.to_dict(),
            "sampler": self.sampler.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Experiment:
        if not isinstance(data, Mapping):
            raise ConfigError("an experiment must be a JSON object")
        unknown = set(data) - {"field", "train", "split", "sampler"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            field=FieldConfig.from_dict(data.get("field", {})),
            train=TrainConfig.from_dict(data.get("train", {})),
            split=SplitSpec.from_dict(data.get("split", {})),
            sampler=SamplerConfig.from_dict(data.get("sampler", {})),
        ).validate()


def load_experiment(path: PathLike) -> Experiment:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return Experiment.from_dict(data)


def parse_assignment(assignment: str) -> Tuple[str, str, Any]:
    """``section.key=value`` -> (section, key, value).

    Values are parsed as JSON when possible (numbers, lists, booleans,
    null) and kept as strings otherwise, so ``train.cache_images=all`` works
    unquoted.
    """
    target, sep, raw = assignment.partition("=")
    section, dot, key = target.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(
            f"override {assignment!r} is not of the form section.key=value"
        )
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw.strip()
    return section, key, value


def apply_overrides(
    experiment: Experiment, assignments: Iterable[str]
) -> Experiment:
    """A copy of `experiment` with every ``section.key=value`` applied."""
    data = experiment.to_dict()
    for assignment in assignments:
        section, key, value = parse_assignment(assignment)
        if section not in data:
            raise ConfigError(f"unknown config section {section!r}")
        if key not in data[section]:
            raise ConfigError(f"unknown key {section}.{key}")
        data[section][key] = value
    return Experiment.from_dict(data)


def dump_experiment(experiment: Experiment, path: PathLike) -> Path:
    """Write the effective configuration; a directory gets ``config.json``."""
    path = Path(path)
    if path.is_dir():
        path = path / CONFIG_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(experiment.to_dict(), indent=2) + "\n")
    return path

