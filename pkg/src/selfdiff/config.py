"""Run configuration: defaults, file parsing, flag overrides.

Config files are plain `key = value` lines with `#` comments.  Every
parse failure names the file and line; flag overrides report the flag
instead.  A master seed is mandatory, so no run ever seeds itself from
the clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

from .lattice import Grid, JumpModel

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config_file",
    "build_config",
    "parse_drifts",
    "drift_slug",
    "CANONICAL_DRIFTS",
]

CANONICAL_DRIFTS = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0))

_ROUTES = ("min", "kmc", "both")

_KEYS = (
    "seed",
    "M",
    "torus",
    "route",
    "rank",
    "tolerance",
    "max_site_updates",
    "ntilde",
    "T",
    "nhat",
    "drifts",
    "model",
    "out",
    "threads",
    "repeats",
    "max_indefinite_fraction",
)


class ConfigError(Exception):
    """Invalid configuration, pointing at the offending source."""

    def __init__(self, message: str, path=None, line=None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None and line is not None:
            where = f"{self.path}:{line}: "
        elif self.path is not None:
            where = f"{self.path}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class RunConfig:
    """Resolved parameters for one pipeline run."""

    seed: int
    radius: int = 2
    torus: tuple | None = None
    route: str = "both"
    rank: int = 3
    tolerance: float = 1e-12
    max_site_updates: int = 420
    ntilde: int = 50
    final_time: float = 300.0
    nhat: int = 30000
    drifts: tuple = CANONICAL_DRIFTS
    model: str = "nearest"
    out: str = "selfdiff-out"
    threads: int = 1
    repeats: int = 20
    max_indefinite_fraction: float = 0.9

    def __post_init__(self):
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must fit in 64 bits")
        if self.radius < 1:
            raise ValueError("M must be >= 1")
        if self.torus is not None:
            sides = tuple(int(s) for s in self.torus)
            if len(sides) < 1 or any(s < 3 for s in sides):
                raise ValueError("torus sides must all be >= 3")
            object.__setattr__(self, "torus", sides)
        if self.route not in _ROUTES:
            raise ValueError(f"route must be one of {', '.join(_ROUTES)}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_site_updates < 1:
            raise ValueError("max_site_updates must be >= 1")
        if self.ntilde < 1:
            raise ValueError("ntilde must be >= 1")
        if not self.final_time > 0:
            raise ValueError("T must be positive")
        if self.nhat < 1:
            raise ValueError("nhat must be >= 1")
        drifts = tuple(tuple(float(c) for c in u) for u in self.drifts)
        if not drifts or any(len(u) != 2 for u in drifts):
            raise ValueError("drifts must be 2-d vectors")
        if any(not all(math.isfinite(c) for c in u) for u in drifts):
            raise ValueError("non-finite drift")
        if len(set(drifts)) != len(drifts):
            raise ValueError("duplicate drift")
        object.__setattr__(self, "drifts", drifts)
        if self.model != "nearest":
            raise ValueError("model must be 'nearest'")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.repeats < 2:
            raise ValueError("repeats must be >= 2")
        if not 0 < self.max_indefinite_fraction <= 1:
            raise ValueError("max_indefinite_fraction must be in (0, 1]")

    def build_grid(self) -> Grid:
        if self.torus is not None:
            return Grid.torus(self.torus)
        return Grid(self.radius, 2)

    def build_model(self) -> JumpModel:
        return JumpModel.nearest_neighbor(dim=2)

    def describe(self) -> str:
        """One deterministic line with every value that shapes the numbers.

        threads is omitted on purpose: it changes the schedule, never the
        output, and data files from serial and parallel runs must match
        byte for byte.
        """
        drifts = ";".join(",".join(_fmt(c) for c in u) for u in self.drifts)
        torus = "none" if self.torus is None else ",".join(str(s) for s in self.torus)
        parts = [
            f"seed={self.seed}",
            f"M={self.radius}",
            f"torus={torus}",
            f"route={self.route}",
            f"rank={self.rank}",
            f"tolerance={self.tolerance!r}",
            f"max_site_updates={self.max_site_updates}",
            f"ntilde={self.ntilde}",
            f"T={self.final_time!r}",
            f"nhat={self.nhat}",
            f"drifts={drifts}",
            f"model={self.model}",
            f"repeats={self.repeats}",
            f"max_indefinite_fraction={self.max_indefinite_fraction!r}",
        ]
        return " ".join(parts)

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "M": self.radius,
            "torus": None if self.torus is None else list(self.torus),
            "route": self.route,
            "rank": self.rank,
            "tolerance": self.tolerance,
            "max_site_updates": self.max_site_updates,
            "ntilde": self.ntilde,
            "T": self.final_time,
            "nhat": self.nhat,
            "drifts": [list(u) for u in self.drifts],
            "model": self.model,
            "out": self.out,
            "threads": self.threads,
            "repeats": self.repeats,
            "max_indefinite_fraction": self.max_indefinite_fraction,
        }


def _fmt(c: float) -> str:
    return str(int(c)) if float(c).is_integer() else repr(float(c))


def drift_slug(drift) -> str:
    """File-name-safe tag for one drift vector."""
    text = ",".join(_fmt(c) for c in drift)
    return "u" + text.replace("-", "m").replace(".", "p").replace(",", "_")


def parse_drifts(text: str):
    """Parse '1,0;0,1;1,1' into a tuple of drift vectors."""
    drifts = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            raise ValueError("empty drift entry")
        comps = part.split(",")
        if len(comps) != 2:
            raise ValueError(f"drift '{part}' is not two comma-separated numbers")
        try:
            drifts.append(tuple(float(c) for c in comps))
        except ValueError:
            raise ValueError(f"drift '{part}' is not numeric") from None
    return tuple(drifts)


def parse_config_file(path):
    """Read `key = value` lines; returns {key: (raw value, line number)}."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=path) from exc
    entries: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError("expected 'key = value'", path=path, line=lineno)
        key = key.strip()
        value = value.strip()
        if key not in _KEYS:
            raise ConfigError(f"unknown key '{key}'", path=path, line=lineno)
        if key in entries:
            raise ConfigError(f"duplicate key '{key}'", path=path, line=lineno)
        if not value:
            raise ConfigError(f"empty value for '{key}'", path=path, line=lineno)
        entries[key] = (value, lineno)
    return entries


_PARSERS = {
    "seed": int,
    "M": int,
    "rank": int,
    "max_site_updates": int,
    "ntilde": int,
    "nhat": int,
    "threads": int,
    "repeats": int,
    "tolerance": float,
    "T": float,
    "max_indefinite_fraction": float,
    "route": str,
    "model": str,
    "out": str,
    "drifts": parse_drifts,
    "torus": lambda v: tuple(int(s) for s in v.split(",")),
}

_FIELD_FOR_KEY = {
    "M": "radius",
    "T": "final_time",
}


def build_config(file_entries: dict, overrides: dict, path=None) -> RunConfig:
    """Combine file entries and flag overrides into a validated RunConfig.

    file_entries maps key -> (raw string, line number); overrides maps
    key -> already-typed value from the command line and wins.  Raises
    ConfigError pointing at the file line or the flag.
    """
    kwargs = {}
    for key, (raw, lineno) in file_entries.items():
        try:
            kwargs[_FIELD_FOR_KEY.get(key, key)] = _PARSERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for '{key}': {exc}", path=path, line=lineno) from exc
    for key, value in overrides.items():
        if value is None:
            continue
        kwargs[_FIELD_FOR_KEY.get(key, key)] = value
    if "seed" not in kwargs:
        raise ConfigError("master seed is required (config 'seed = N' or --seed)", path=path)
    try:
        cfg = RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path=path) from exc
    try:
        grid = cfg.build_grid()
        model = cfg.build_model()
        if model.reach > grid.radius:
            raise ValueError(
                f"jump reach {model.reach} exceeds the grid radius {grid.radius}"
            )
    except ValueError as exc:
        raise ConfigError(str(exc), path=path) from exc
    return cfg


def with_updates(cfg: RunConfig, **changes) -> RunConfig:
    """Validated copy with fields replaced."""
    return replace(cfg, **changes)
