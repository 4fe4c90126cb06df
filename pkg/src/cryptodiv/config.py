"""Run configuration: one declarative file, CLI flags override individual keys."""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

CONFIG_ENV_VAR = "CRYPTODIV_CONFIG"

_MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    """Invalid or unreadable configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class AnalysisConfig:
    start: dt.date = dt.date(2019, 7, 1)
    end: dt.date = dt.date(2023, 2, 14)
    tau: int = 90
    draws: int = 500
    seed: int = 20230214
    variance_floor: float = 1e-12
    decile_size: int = 4
    grid_m: int = 10
    grid_n: int = 4
    epsilon: float = 0.0
    k: int = 4
    workers: int = 1
    scopes: str = "both"
    charts: bool = False
    prices: str | None = None
    deciles: str | None = None
    run_dir: str = "run"

    def __post_init__(self) -> None:
        if self.tau < 2:
            raise ConfigError(f"tau must be >= 2, got {self.tau}")
        if self.draws < 1:
            raise ConfigError(f"draws must be >= 1, got {self.draws}")
        if not 0 <= self.seed <= _MAX_SEED:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not self.variance_floor > 0:
            raise ConfigError("variance_floor must be positive")
        if self.start >= self.end:
            raise ConfigError(f"start {self.start} must precede end {self.end}")
        if self.decile_size < 1 or self.grid_m < 1 or self.grid_n < 1:
            raise ConfigError("decile_size, grid_m and grid_n must be positive")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.scopes not in ("ALL", "deciles", "both"):
            raise ConfigError(f"unknown scope {self.scopes!r}; use ALL, deciles or both")

    def replace(self, **changes: Any) -> AnalysisConfig:
        changes = {k: v for k, v in changes.items() if v is not None}
        return from_mapping({**self.snapshot(), **changes})

    def snapshot(self) -> dict[str, Any]:
        """JSON-safe view used in manifests."""
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.isoformat() if isinstance(value, dt.date) else value
        return out


def _coerce_date(value: Any, key: str) -> dt.date:
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"{key}: expected YYYY-MM-DD, got {value!r}") from exc


def from_mapping(data: dict[str, Any]) -> AnalysisConfig:
    known = {f.name: f for f in dataclasses.fields(AnalysisConfig)}
    kwargs: dict[str, Any] = {}
    extra = {}
    for key, value in data.items():
        key = key.replace("-", "_")
        if key == "master_seed":
            key = "seed"
        if key not in known:
            extra[key] = value
            continue
        if key in ("start", "end"):
            value = _coerce_date(value, key)
        elif key in ("tau", "draws", "seed", "decile_size", "grid_m", "grid_n", "k", "workers"):
            try:
                value = int(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: expected an integer, got {value!r}") from exc
        elif key in ("variance_floor", "epsilon"):
            try:
                value = float(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: expected a number, got {value!r}") from exc
        elif key == "charts":
            value = bool(value)
        kwargs[key] = value
    if extra:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
    return AnalysisConfig(**kwargs)


def load_config(path: str | os.PathLike | None = None) -> AnalysisConfig:
    """Read a YAML/JSON config; falls back to $CRYPTODIV_CONFIG, then defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return AnalysisConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return from_mapping(data)
