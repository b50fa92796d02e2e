"""Run configuration: INI-style config files overridden by CLI flags.

Sections and keys are flat; every value has a response-specific default, so
a config file (or flag set) only needs to state what differs. Flags win
over file values.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

RESPONSES = ("static-elastic", "static-plastic", "dynamic")
MODELS = ("homogeneous", "heterogeneous")
METHODS = ("mlmc", "mc", "both")


@dataclass
class RunConfig:
    """Fully resolved parameters of one experiment."""

    response: str = "static-elastic"
    model: str = "homogeneous"
    material: str = ""              # preset name; default depends on response
    method: str = "mlmc"
    epsilons: list = field(default_factory=lambda: [2.5e-4])
    seed: int = 2024
    workers: int = 1
    max_level: int = -1             # -1: response default (4 elastic, 3 plastic)
    output: str = "out"
    figures: bool = True

    # geometry
    length: float = 2.5
    height: float = 0.25
    width: float = -1.0             # -1: response default
    clamping: str = ""              # default depends on response
    ny_coarse: int = 4

    # material / uncertainty
    alpha: float = 0.0              # 0: use preset
    beta: float = 0.0
    nu: float = -1.0                # -1: response default
    rho: float = 2500.0
    fixed_e: float = 0.0            # > 0: deterministic smoke mode

    # random field
    lam: float = 0.3
    sigma: float = 1.0
    variance_fraction: float = 0.90

    # mlmc
    trial_samples: int = -1         # -1: response default (200 / 24)
    min_extra_samples: int = 3
    screening: str = "auto"
    quantile_cap: int = 20000
    mc_max_draw: int = 0            # 0: unlimited

    # loads
    total_load: float = 1.0e7
    load_start: float = 0.0
    load_end: float = 13.5e3
    load_step: float = 135.0
    sigma_y: float = 240e6
    hardening_ratio: float = 0.01

    # dynamic
    freq: str = "0:400:2"
    eta: float = 0.03
    trace_count: int = 10
    trace_level: int = 0

    def validate(self) -> "RunConfig":
        if self.response not in RESPONSES:
            raise ConfigError(f"response must be one of {RESPONSES}, got {self.response!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.epsilons or any(e <= 0.0 for e in self.epsilons):
            raise ConfigError("epsilon values must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.screening not in ("auto", "on", "off"):
            raise ConfigError("screening must be auto, on or off")
        if self.response == "dynamic":
            self.frequency_grid()
        # Resolve response-dependent defaults.
        if not self.material:
            self.material = "steel" if self.response == "static-plastic" else "concrete"
        if self.width < 0.0:
            self.width = 1e-3 if self.response == "static-plastic" else 1.0
        if not self.clamping:
            self.clamping = "left-only" if self.response == "dynamic" else "both-ends"
        if self.nu < 0.0:
            self.nu = 0.25 if self.response == "static-plastic" else 0.15
        if self.max_level < 0:
            self.max_level = 3 if self.response == "static-plastic" else 4
        if self.trial_samples < 0:
            self.trial_samples = 24 if self.response == "static-plastic" else 200
        return self

    def frequency_grid(self) -> np.ndarray:
        try:
            start, stop, step = (float(v) for v in self.freq.split(":"))
        except ValueError:
            raise ConfigError(f"freq must be start:stop:step, got {self.freq!r}") from None
        if step <= 0.0 or stop < start:
            raise ConfigError("freq grid must have positive step and stop >= start")
        n = int(round((stop - start) / step))
        return start + step * np.arange(n + 1)

    def screening_enabled(self) -> bool:
        if self.screening == "on":
            return True
        if self.screening == "off":
            return False
        return self.response == "dynamic" and self.model == "heterogeneous"


_KEY_TYPES = {
    "response": str, "model": str, "material": str, "method": str,
    "seed": int, "workers": int, "max_level": int, "output": str,
    "figures": bool, "length": float, "height": float, "width": float,
    "clamping": str, "ny_coarse": int, "alpha": float, "beta": float,
    "nu": float, "rho": float, "fixed_e": float, "lam": float,
    "sigma": float, "variance_fraction": float, "trial_samples": int,
    "min_extra_samples": int, "screening": str, "quantile_cap": int,
    "mc_max_draw": int, "total_load": float, "load_start": float,
    "load_end": float, "load_step": float, "sigma_y": float,
    "hardening_ratio": float, "freq": str, "eta": float,
    "trace_count": int, "trace_level": int,
}
#: Config-file spellings that differ from the attribute name.
_ALIASES = {"lambda": "lam", "fixed-e": "fixed_e", "epsilon": "epsilons"}


def _parse_epsilons(raw: str) -> list:
    try:
        values = [float(tok) for tok in raw.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"cannot parse epsilon list {raw!r}") from None
    if not values:
        raise ConfigError("epsilon list is empty")
    return values


def _coerce(key: str, raw: str):
    if key == "epsilons":
        return _parse_epsilons(raw)
    kind = _KEY_TYPES[key]
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {raw!r} for {key}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} for key {key!r}") from None


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Config file plus CLI overrides (overrides win), validated."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                name = _ALIASES.get(key, key.replace("-", "_"))
                if name != "epsilons" and name not in _KEY_TYPES:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                setattr(cfg, name, _coerce(name, raw))
    for name, value in (overrides or {}).items():
        if value is None:
            continue
        setattr(cfg, name, value)
    return cfg.validate()
