"""Simulation parameters and their TOML form.

The TOML file may group keys under any tables (``[network]``, ``[lifetimes]``
and so on); tables are flattened one level before validation, and unknown
keys are an error.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..core import QueueLimits
from ..errors import InvariantViolation

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class SimConfig:
    n_peers: int = 1000
    ultra_fraction: float = 0.06
    limits: QueueLimits = field(default_factory=QueueLimits)
    core_threshold: int = 10
    leaf_max_ultra: int = 3
    leaf_target: int = 2

    # mean lifetimes, hours
    leaf_connection_life: float = 2.4
    ultra_connection_life: float = 3.1
    ultra_peer_life: float = 11.23
    leaf_peer_life: float = 7.8
    offline_time: float = 4.0
    churn: bool = True
    # a rejoining peer shows up under a new identity
    fresh_identity: bool = False

    # attempts per hour
    active_connect_rate: float = 12.0
    passive_rate_ultra: float = 24.0
    passive_rate_leaf: float = 3.0
    attempt_scale: float = 1.0

    # mode changes per hour
    promotion_rate: float = 0.1
    kick_out_rate: float = 2.0
    # an ultra with fewer leaves than this is redundant and may be kicked out
    redundant_leaves: int = 22

    crawl_interval: int = 1800
    warmup: float = 6.0
    duration: float = 23.0
    software: str = "LimeWire"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.limits, dict):
            object.__setattr__(self, "limits", QueueLimits(**self.limits))
        for name in _INT_FIELDS:
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise InvariantViolation(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.n_peers < 2:
            raise InvariantViolation("n_peers must be >= 2")
        if not 0 <= self.ultra_fraction <= 1:
            raise InvariantViolation("ultra_fraction must lie in [0, 1]")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                if not math.isfinite(v) or v < 0:
                    raise InvariantViolation(f"{f.name} must be finite and >= 0, got {v}")
        for name in ("leaf_connection_life", "ultra_connection_life", "ultra_peer_life",
                     "leaf_peer_life", "offline_time"):
            if getattr(self, name) <= 0:
                raise InvariantViolation(f"{name} must be positive")
        if not 0 <= self.leaf_target <= self.leaf_max_ultra:
            raise InvariantViolation("need 0 <= leaf_target <= leaf_max_ultra")
        if self.core_threshold > self.limits.L_u:
            raise InvariantViolation("core_threshold must not exceed L_u")
        if self.crawl_interval <= 0:
            raise InvariantViolation("crawl_interval must be positive")

    def replace(self, **changes) -> SimConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        lim = self.limits
        out["limits"] = {"B_l": lim.B_l, "B_u": lim.B_u, "L_u": lim.L_u}
        return out


_FIELDS = {f.name for f in dataclasses.fields(SimConfig)}
_INT_FIELDS = ("n_peers", "core_threshold", "leaf_max_ultra", "leaf_target", "crawl_interval", "seed",
               "redundant_leaves")
_LIMIT_KEYS = {"B_l", "B_u", "L_u"}


def config_from_dict(data: dict, **overrides) -> SimConfig:
    flat: dict = {}
    limits: dict = {}
    for key, value in data.items():
        if key == "limits" and isinstance(value, dict):
            limits.update(value)
        elif isinstance(value, dict):
            for k, v in value.items():
                (limits if k in _LIMIT_KEYS else flat)[k] = v
        elif key in _LIMIT_KEYS:
            limits[key] = value
        else:
            flat[key] = value
    flat.update(overrides)
    unknown = set(flat) - _FIELDS
    if unknown:
        raise InvariantViolation(f"unknown simulation parameters: {sorted(unknown)}")
    if limits:
        flat["limits"] = QueueLimits(**{**dataclasses.asdict(QueueLimits()), **limits})
    return SimConfig(**flat)


def load_config(path: str | os.PathLike | None = None, **overrides) -> SimConfig:
    """Read a TOML config; ``None`` loads the bundled defaults file."""
    if path is None:
        raw = resources.files(__package__).joinpath("sim.toml").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    return config_from_dict(tomllib.loads(raw), **overrides)
