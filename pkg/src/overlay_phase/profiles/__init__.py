"""Built-in software profiles and profile loading.

A profile argument may be a built-in name (``limewire``, ``bearshare``), a
name found as ``<name>.toml``/``<name>.json`` under the directory given by
the ``OVERLAY_PHASE_PROFILE_DIR`` environment variable, or a file path.
"""

from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path

from ..core import PhaseState, QueueLimits, Rect, RegionId, SoftwareProfile
from ..errors import InvariantViolation

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

PROFILE_DIR_ENV = "OVERLAY_PHASE_PROFILE_DIR"
BUILTIN = ("limewire", "bearshare")


def profile_from_dict(data: dict) -> SoftwareProfile:
    try:
        regions = {RegionId[k]: Rect(*v) for k, v in data["regions"].items()}
        belt_lo, belt_hi = data["belt"]
        return SoftwareProfile(
            name=data["name"],
            leaf_stable_point=PhaseState(*data["leaf_stable_point"]),
            ultra_stable_point=PhaseState(*data["ultra_stable_point"]),
            belt_lo=int(belt_lo),
            belt_hi=int(belt_hi),
            region_rects=regions,
            slot_limits=QueueLimits(**data.get("slot_limits", {})),
        )
    except (KeyError, TypeError) as exc:
        raise InvariantViolation(f"malformed profile: {exc!r}") from None


def profile_to_dict(profile: SoftwareProfile) -> dict:
    lim = profile.slot_limits
    return {
        "name": profile.name,
        "leaf_stable_point": list(profile.leaf_stable_point),
        "ultra_stable_point": list(profile.ultra_stable_point),
        "belt": [profile.belt_lo, profile.belt_hi],
        "regions": {r.name: profile.region_rects[r].as_list() for r in RegionId},
        "slot_limits": {"B_l": lim.B_l, "B_u": lim.B_u, "L_u": lim.L_u},
    }


def _read(path: Path) -> dict:
    raw = path.read_bytes()
    if path.suffix == ".json":
        return json.loads(raw)
    return tomllib.loads(raw.decode("utf-8"))


def load_profile(source: str | os.PathLike | SoftwareProfile = "limewire") -> SoftwareProfile:
    if isinstance(source, SoftwareProfile):
        return source
    source = str(source)
    path = Path(source)
    if path.suffix in (".toml", ".json") and path.exists():
        return profile_from_dict(_read(path))
    custom = os.environ.get(PROFILE_DIR_ENV)
    if custom:
        for suffix in (".toml", ".json"):
            candidate = Path(custom) / f"{source}{suffix}"
            if candidate.exists():
                return profile_from_dict(_read(candidate))
    key = source.lower()
    if key in BUILTIN:
        text = resources.files(__package__).joinpath(f"{key}.toml").read_text("utf-8")
        return profile_from_dict(tomllib.loads(text))
    raise InvariantViolation(f"unknown profile {source!r}")


def limewire() -> SoftwareProfile:
    return load_profile("limewire")


def bearshare() -> SoftwareProfile:
    return load_profile("bearshare")
