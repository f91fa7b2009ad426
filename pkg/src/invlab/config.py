"""Experiment configuration: dataclasses plus an INI-style loader.

Example file (every key optional)::

    [dataset]
    dim = 2
    classes = 2
    points_per_class = 1000
    means = -1, 0; 1, 0
    spread = 0.5
    seed = 0

    [schedule]
    T = 1000
    beta_start = 1e-4
    beta_end = 2e-2

    [experiment]
    steps = 20, 50, 100, 200
    w = 7.5
    methods = ddim_cfg, null_text, negative_prompt
    trials = 50
    seed = 0
    out = results
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .inversion import Method, OptimizerConfig


@dataclass(frozen=True)
class DatasetSpec:
    dim: int = 2
    classes: int = 2
    points_per_class: int = 1000
    means: tuple[tuple[float, ...], ...] | None = None  # default: unit circle in the first two axes
    spread: tuple[float, ...] | float = 0.5
    seed: int = 0
    path: str | None = None

    def cluster_means(self) -> np.ndarray:
        if self.means is not None:
            m = np.asarray(self.means, dtype=np.float64)
            if m.shape != (self.classes, self.dim):
                raise ConfigurationError(f"means must be {self.classes} x {self.dim}, got {m.shape}")
            return m
        angles = 2.0 * np.pi * np.arange(self.classes) / self.classes
        m = np.zeros((self.classes, self.dim))
        m[:, 0] = -np.cos(angles)
        if self.dim > 1:
            m[:, 1] = np.sin(angles)
        # sin(pi) is 1.2e-16, not 0
        return np.round(m, 12)

    def cluster_spreads(self) -> np.ndarray:
        s = np.broadcast_to(np.asarray(self.spread, dtype=np.float64), (self.classes,)).copy()
        if np.any(s < 0):
            raise ConfigurationError("spreads must be non-negative")
        return s

    def validate(self) -> None:
        if self.dim < 1 or self.classes < 1 or self.points_per_class < 1:
            raise ConfigurationError("dim, classes and points_per_class must be >= 1")
        self.cluster_means()
        self.cluster_spreads()


@dataclass(frozen=True)
class ScheduleSpec:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2


@dataclass(frozen=True)
class PropcheckSpec:
    runs: int = 2000
    t_values: tuple[int, ...] = (1000, 500)
    gaps: tuple[int, ...] = (1, 5, 20)
    sigma_scales: tuple[float, ...] = (1.0, 0.5, 0.1, 0.0)
    identity_samples: int = 1000


@dataclass(frozen=True)
class EditConfig:
    t0_ratio: float = 0.5
    target_offset: int = 1  # target class = (source + offset) mod K


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    steps: tuple[int, ...] = (20, 50, 100, 200)
    w: tuple[float, ...] = (7.5,)
    methods: tuple[Method, ...] = (Method.DDIM_CFG, Method.NULL_TEXT, Method.NEGATIVE_PROMPT)
    trials: int = 50
    seed: int = 0
    out: str = "results"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    propcheck: PropcheckSpec = field(default_factory=PropcheckSpec)
    edit: EditConfig = field(default_factory=EditConfig)

    def __post_init__(self):
        try:
            object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        except ValueError as exc:
            raise ConfigurationError(f"unknown method: {exc}") from exc
        if not (self.steps and self.w and self.methods):
            raise ConfigurationError("steps, w and methods must be non-empty")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if any(x < 0 for x in self.w):
            raise ConfigurationError("guidance scales must be >= 0")
        T = self.schedule.T
        bad = [N for N in self.steps if not (1 <= N <= T) or T % N]
        if bad:
            raise ConfigurationError(f"plan sizes must divide T={T}: {bad}")
        self.dataset.validate()


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _means(text: str) -> tuple[tuple[float, ...], ...]:
    return tuple(_floats(row) for row in text.split(";") if row.strip())


def _spread(text: str):
    vals = _floats(text)
    return vals[0] if len(vals) == 1 else vals


_PARSERS = {
    "dataset": {"dim": int, "classes": int, "points_per_class": int, "means": _means,
                "spread": _spread, "seed": int, "path": str},
    "schedule": {"T": int, "beta_start": float, "beta_end": float},
    "experiment": {"steps": _ints, "w": _floats, "methods": _names, "trials": int,
                   "seed": int, "out": str},
    "optimizer": {f.name: (int if f.type in ("int", int) else float)
                  for f in fields(OptimizerConfig)},
    "propcheck": {"runs": int, "t_values": _ints, "gaps": _ints, "sigma_scales": _floats,
                  "identity_samples": int},
    "edit": {"t0_ratio": float, "target_offset": int},
}


def _section(parser: configparser.ConfigParser, name: str) -> dict:
    if not parser.has_section(name):
        return {}
    known = _PARSERS[name]
    out = {}
    for key, raw in parser.items(name):
        match = {k.lower(): k for k in known}.get(key.lower())
        if match is None:
            raise ConfigurationError(f"unknown key [{name}] {key}")
        try:
            out[match] = known[match](raw)
        except ValueError as exc:
            raise ConfigurationError(f"[{name}] {key} = {raw!r}: {exc}") from exc
    return out


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Read an INI file (or defaults) and apply non-None experiment overrides."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if path is not None:
        if not parser.read(path):
            raise ConfigurationError(f"cannot read config file {path}")
        unknown = set(parser.sections()) - set(_PARSERS)
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    base = ExperimentConfig()
    exp = _section(parser, "experiment")
    exp.update({k: v for k, v in overrides.items() if v is not None})
    return replace(
        base,
        dataset=replace(base.dataset, **_section(parser, "dataset")),
        schedule=replace(base.schedule, **_section(parser, "schedule")),
        optimizer=replace(base.optimizer, **_section(parser, "optimizer")),
        propcheck=replace(base.propcheck, **_section(parser, "propcheck")),
        edit=replace(base.edit, **_section(parser, "edit")),
        **{k: tuple(v) if isinstance(v, list) else v for k, v in exp.items()},
    )
