"""Run configuration: one YAML file drives the whole pipeline.

Command-line flags only override keys that already exist here, so a run is
fully described by (config file, overrides, seed) and can be hashed for
provenance.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .errors import ConfigError

GROUPING_MODES = ("pca", "census_region", "single_state")


@dataclass(frozen=True)
class Window:
    age_min: int = 60
    age_max: int = 84
    year_min: int = 1990
    year_max: int = 2018

    def __post_init__(self):
        if self.age_min > self.age_max or self.year_min > self.year_max:
            raise ConfigError("window is empty")

    @property
    def ages(self) -> range:
        return range(self.age_min, self.age_max + 1)

    @property
    def years(self) -> range:
        return range(self.year_min, self.year_max + 1)


@dataclass(frozen=True)
class Paths:
    mortality: str = ""
    covariates: str = ""
    populations: str = ""
    adjacency: str | None = None
    life_expectancy: str | None = None


@dataclass(frozen=True)
class GroupingConfig:
    mode: str = "pca"
    population_floor: float = 5_000_000.0
    rounds: int = 10
    pca_components: int = 3

    def __post_init__(self):
        if self.mode not in GROUPING_MODES:
            raise ConfigError(f"grouping mode must be one of {GROUPING_MODES}")


@dataclass(frozen=True)
class FitSettings:
    restarts: int = 10
    maxiter: int = 200
    seed: int = 1
    trend: str = "intercepts"
    solver: str = "dense"
    workers: int = 0  # 0 -> one per available CPU (capped)


@dataclass(frozen=True)
class AnalysisConfig:
    ages: tuple[int, ...] = (65, 75)
    year: int = 2020
    rank_years: tuple[int, ...] = (2000, 2010, 2020)
    decade_base_year: int = 2010
    interval_level: float = 0.95
    sort_age: int = 65


@dataclass(frozen=True)
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    schema: dict = field(default_factory=dict)
    window: Window = field(default_factory=Window)
    forecast_end_year: int = 2020
    sexes: tuple[str, ...] = ("male", "female")
    rates_kernel: str = "matern52"
    improvement_kernel: str = "sqexp"
    coreg_rank: int = 3
    grouping: GroupingConfig = field(default_factory=GroupingConfig)
    fit: FitSettings = field(default_factory=FitSettings)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output_dir: str = "out"

    def __post_init__(self):
        if self.coreg_rank < 1:
            raise ConfigError("coreg_rank must be >= 1")
        if self.forecast_end_year < self.window.year_max:
            raise ConfigError("forecast_end_year precedes the training window")
        for sex in self.sexes:
            if sex not in ("male", "female"):
                raise ConfigError(f"unknown sex {sex!r}")

    @property
    def families(self) -> tuple[str, ...]:
        return tuple(sorted({self.rates_kernel, self.improvement_kernel}))

    @property
    def predict_years(self) -> range:
        return range(self.window.year_min, self.forecast_end_year + 1)


def _section(data: dict, key: str) -> dict:
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {key!r} must be a mapping")
    return value


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse the YAML config, apply CLI overrides, and validate file paths."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")

    base = path.parent

    def _resolve(p):
        if p is None or p == "":
            return None
        p = Path(p)
        return str(p if p.is_absolute() else base / p)

    paths_raw = _section(raw, "paths")
    kernels_raw = _section(raw, "kernels")
    try:
        cfg = RunConfig(
            paths=Paths(
                mortality=_resolve(paths_raw.get("mortality")) or "",
                covariates=_resolve(paths_raw.get("covariates")) or "",
                populations=_resolve(paths_raw.get("populations")) or "",
                adjacency=_resolve(paths_raw.get("adjacency")),
                life_expectancy=_resolve(paths_raw.get("life_expectancy")),
            ),
            schema=dict(_section(raw, "schema")),
            window=Window(**_section(raw, "window")),
            forecast_end_year=int(raw.get("forecast_end_year", 2020)),
            sexes=tuple(raw.get("sexes", ("male", "female"))),
            rates_kernel=str(kernels_raw.get("rates", "matern52")),
            improvement_kernel=str(kernels_raw.get("improvement", "sqexp")),
            coreg_rank=int(raw.get("coreg_rank", 3)),
            grouping=GroupingConfig(**_section(raw, "grouping")),
            fit=FitSettings(**_section(raw, "fit")),
            analysis=AnalysisConfig(
                **{k: tuple(v) if isinstance(v, list) else v
                   for k, v in _section(raw, "analysis").items()}),
            output_dir=_resolve(raw.get("output_dir", "out")) or "out",
        )
    except TypeError as exc:
        raise ConfigError(f"bad config key: {exc}") from exc

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            cfg = replace(cfg, fit=replace(cfg.fit, seed=int(value)))
        elif key == "mode":
            cfg = replace(cfg, grouping=replace(cfg.grouping, mode=value))
        elif key == "sex":
            cfg = replace(cfg, sexes=("male", "female") if value == "both" else (value,))
        elif key == "out":
            cfg = replace(cfg, output_dir=str(Path(value).absolute()))
        elif key == "kernel":
            if value != "both":
                cfg = replace(cfg, rates_kernel=value, improvement_kernel=value)
        else:
            raise ConfigError(f"unknown override {key!r}")
    return cfg


def validate_input_paths(cfg: RunConfig, need=("mortality", "covariates", "populations")):
    """Check that the required data files exist before a command starts."""
    for name in need:
        value = getattr(cfg.paths, name)
        if not value:
            raise ConfigError(f"paths.{name} is not set in the config")
        if not os.path.isfile(value):
            raise ConfigError(f"paths.{name} does not exist: {value}")
    for name in ("adjacency", "life_expectancy"):
        value = getattr(cfg.paths, name)
        if value and not os.path.isfile(value):
            raise ConfigError(f"paths.{name} does not exist: {value}")


def config_hash(cfg: RunConfig) -> str:
    """Stable digest of the effective configuration."""
    doc = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]
