"""INI-style run configuration.

Example::

    [train]
    lambda1 = 1.0
    lambda2 = 1.0
    integration = sequential
    epochs = 25

    [experiment]
    seeds = 0, 1, 2, 3, 4
    n = 2000
    vuln_rate = 0.1
    cc_lambda1 = 10

Command-line ``--set section.key=value`` overrides single fields.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .train import TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n: int = 2000
    vuln_rate: float = 0.1
    cc_lambda1: float = 10.0
    sft_lambda1: float = 0.0
    probe: bool = True
    sweep_seeds: tuple[int, ...] = (0, 1, 2)
    sweep_order_seed: int = 0
    split_ratios: tuple[float, ...] = (0.8, 0.1, 0.1)
    # the sweep compares closely spaced points, so it evaluates on a larger test split
    sweep_n: int = 4000
    sweep_split_ratios: tuple[float, ...] = (0.5, 0.1, 0.4)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self) -> dict:
        out = {}
        for section in ("train", "experiment"):
            obj = getattr(self, section)
            out[section] = {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
        return out


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(raw: str, current):
    raw = raw.strip()
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        item = type(current[0]) if current else str
        return tuple(item(x.strip()) for x in raw.split(",") if x.strip())
    return raw


def _apply(obj, items: dict):
    known = {f.name: f for f in fields(obj)}
    kw = {}
    for key, raw in items.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r} for {type(obj).__name__}")
        kw[key] = _coerce(raw, getattr(obj, key))
    return type(obj)(**{**{f: getattr(obj, f) for f in known}, **kw})


def load_config(path=None, overrides=()) -> RunConfig:
    """Read ``path`` (if any) and apply ``section.key=value`` overrides in order."""
    sections: dict[str, dict] = {"train": {}, "experiment": {}}
    if path is not None:
        parser = configparser.ConfigParser()
        text = Path(path).read_text(encoding="utf-8")
        parser.read_string(text, source=str(path))
        for name in parser.sections():
            if name not in sections:
                raise ValueError(f"unknown config section [{name}]")
            sections[name].update(parser[name])
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValueError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        if section not in sections:
            raise ValueError(f"unknown config section {section!r}")
        sections[section][key.strip()] = value
    return RunConfig(
        train=_apply(TrainConfig(), sections["train"]),
        experiment=_apply(ExperimentConfig(), sections["experiment"]),
    )
