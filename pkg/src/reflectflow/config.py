"""Experiment configuration in an INI file; command-line flags override file values."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .runner import default_workers

SECTIONS = {
    "model": ("d", "drift", "A"),
    "grid": ("T", "dt"),
    "run": ("seeds", "starts", "method", "tol", "max_iter", "min_length", "min_lengths", "workers"),
    "scan": ("x1_min", "x1_max", "n_points", "x2", "t", "n_blocks"),
    "output": ("out",),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    d: int = 2
    drift: str = "linear"  # "zero" or "linear"
    A: list = field(default_factory=lambda: [[1.0, 1.0], [1.0, 1.0]])
    T: float = 1.0
    dt: float = 1e-4
    seeds: list = field(default_factory=lambda: [0])
    starts: list = field(default_factory=lambda: [[0.5, 0.1]])
    method: str = "both"
    tol: float = 1e-12
    max_iter: int = 200
    min_length: float | None = None  # None keeps every resolved excursion
    min_lengths: list = field(default_factory=list)
    workers: int = field(default_factory=default_workers)
    x1_min: float = 0.0
    x1_max: float = 1.0
    n_points: int = 512
    x2: float = 0.1
    t: float | None = None  # scan time, defaults to T
    n_blocks: int = 4
    out: str = "out"

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.d, int) and 1 <= self.d <= 16, f"d must be an integer in 1..16, got {self.d!r}")
        need(self.drift in ("zero", "linear"), f"drift must be 'zero' or 'linear', got {self.drift!r}")
        if self.drift == "linear":
            need(all(len(row) == self.d for row in self.A), f"A must have {self.d} rows of {self.d} entries")
            a = np.asarray(self.A, dtype=float)
            need(a.shape == (self.d, self.d), f"A must be {self.d}x{self.d}, got shape {a.shape}")
            need(bool(np.all(np.isfinite(a))), "A has non-finite entries")
        need(self.T > 0 and self.dt > 0, "T and dt must be positive")
        n = round(self.T / self.dt)
        need(n >= 1 and abs(n * self.dt - self.T) <= 1e-9 * self.T, f"dt={self.dt} must divide T={self.T}")
        need(len(self.seeds) > 0 and all(isinstance(s, int) and s >= 0 for s in self.seeds), "seeds must be non-negative integers")
        need(len(self.starts) > 0, "at least one start point is required")
        for x in self.starts:
            need(len(x) == self.d, f"start {x} does not have dimension {self.d}")
            need(x[-1] >= 0, f"start {x} lies outside the half-space")
        need(self.method in ("picard", "product", "both"), f"unknown method {self.method!r}")
        need(self.tol > 0 and self.max_iter >= 1, "tol must be positive and max_iter >= 1")
        need(self.min_length is None or self.min_length >= 0, "min_length must be >= 0")
        need(all(m >= 0 for m in self.min_lengths), "min_lengths must be >= 0")
        need(self.workers >= 1, "workers must be >= 1")
        need(self.x1_min < self.x1_max, "x1_min must be below x1_max")
        need(self.n_points >= 3, "n_points must be >= 3")
        need(self.x2 > 0, "x2 must be positive")
        need(self.t is None or 0 < self.t <= self.T, "scan time t must lie in (0, T]")
        need(self.n_blocks >= 1, "n_blocks must be >= 1")
        return self

    @property
    def scan_time(self) -> float:
        return self.T if self.t is None else self.t

    def drift_matrix(self) -> np.ndarray:
        if self.drift == "zero":
            return np.zeros((self.d, self.d))
        return np.asarray(self.A, dtype=float)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        values = asdict(self)
        for section, keys in SECTIONS.items():
            parser[section] = {k: _format(values[k]) for k in keys}
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in parser[section].items())
            lines.append("")
        return "\n".join(lines)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_ini())

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        known = {k for keys in SECTIONS.values() for k in keys}
        kwargs = {}
        types = {f.name: f for f in fields(cls)}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser[section].items():
                if key not in known or key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                kwargs[key] = _parse(key, raw, types[key])
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_ini(text)


_INT_KEYS = {"d", "max_iter", "workers", "n_points", "n_blocks"}
_FLOAT_KEYS = {"T", "dt", "tol", "x1_min", "x1_max", "x2"}
_OPT_FLOAT_KEYS = {"min_length", "t"}
_STR_KEYS = {"drift", "method", "out"}


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        if value and isinstance(value[0], list):
            return "; ".join(" ".join(repr(float(v)) for v in row) for row in value)
        return ", ".join(repr(v) for v in value)
    return str(value)


def _parse(key: str, raw: str, _field):
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _OPT_FLOAT_KEYS:
            return float(raw) if raw else None
        if key in _STR_KEYS:
            return raw
        if key == "seeds":
            return [int(s) for s in raw.replace(",", " ").split()]
        if key == "min_lengths":
            return [float(s) for s in raw.replace(",", " ").split()]
        if key in ("A", "starts"):
            return [[float(v) for v in row.replace(",", " ").split()] for row in raw.split(";") if row.strip()]
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    raise ConfigError(f"unknown key {key!r}")
