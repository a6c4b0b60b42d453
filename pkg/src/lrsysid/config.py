"""Validated fit configuration (a single JSON document)."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ipm import SolverOptions
from .stability import DEFAULT_MU

METHODS = ("lr", "ee", "stable-subspace")
STATE_POLICIES = ("file", "central-diff", "oracle")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FitConfig:
    method: str = "lr"
    n_x: Optional[int] = None  # default: width of the state columns
    deg_e: int = 3
    deg_fx: int = 3
    deg_fu: int = 1
    deg_g: int = 1
    deg_gu: int = 1
    separable_f: bool = True
    linear: bool = False
    mu: float = DEFAULT_MU
    mu_wp: Optional[float] = None
    scale_bound: Optional[float] = None
    state_policy: str = "file"
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.state_policy not in STATE_POLICIES:
            raise ConfigError(f"state_policy must be one of {STATE_POLICIES}, got {self.state_policy!r}")
        if self.n_x is not None and (not isinstance(self.n_x, int) or self.n_x < 1):
            raise ConfigError("n_x must be a positive integer")
        for name in ("deg_e", "deg_fx", "deg_g"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be an integer >= 1")
        for name in ("deg_fu", "deg_gu"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 0:
                raise ConfigError(f"{name} must be an integer >= 0")
        if not (isinstance(self.mu, (int, float)) and self.mu > 0):
            raise ConfigError("mu must be positive")
        if self.mu_wp is not None and not self.mu_wp > 0:
            raise ConfigError("mu_wp must be positive")
        if self.scale_bound is not None and not self.scale_bound > 0:
            raise ConfigError("scale_bound must be positive (use inf to disable)")
        self.solver_options()  # validates keys and values

    def solver_options(self) -> SolverOptions:
        names = {f.name for f in dataclasses.fields(SolverOptions)}
        bad = sorted(set(self.solver) - names)
        if bad:
            raise ConfigError(f"unknown solver option(s): {', '.join(bad)}")
        try:
            return SolverOptions(**self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver options: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        bad = sorted(set(d) - names)
        if bad:
            raise ConfigError(f"unknown config key(s): {', '.join(bad)}")
        d = dict(d)
        if isinstance(d.get("scale_bound"), str):
            d["scale_bound"] = float(d["scale_bound"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "FitConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["scale_bound"] is not None and not np.isfinite(d["scale_bound"]):
            d["scale_bound"] = "inf"
        return d
