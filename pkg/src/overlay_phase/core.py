"""Domain types shared by every module.

All types are immutable and validate on construction; a value that exists
satisfies its invariants.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import InvariantViolation

DEGREE_CAP = 128


@dataclass(frozen=True, slots=True, order=True)
class PhaseState:
    """A point (d_l, d_u) of the leaf-degree x ultra-degree lattice."""

    d_l: int
    d_u: int

    def __post_init__(self):
        for name in ("d_l", "d_u"):
            v = getattr(self, name)
            if isinstance(v, bool):
                raise InvariantViolation(f"{name} must be an integer, got {v!r}")
            if not isinstance(v, int):
                try:
                    iv = int(v)
                except (TypeError, ValueError):
                    raise InvariantViolation(f"{name} must be an integer, got {v!r}") from None
                if iv != v:
                    raise InvariantViolation(f"{name} must be an integer, got {v!r}")
                object.__setattr__(self, name, iv)
                v = iv
            if v < 0:
                raise InvariantViolation(f"{name} must be non-negative, got {v}")
            if v > DEGREE_CAP:
                raise InvariantViolation(f"degree cap exceeded: {name}={v} > {DEGREE_CAP}")

    def __iter__(self):
        yield self.d_l
        yield self.d_u

    def __sub__(self, other: PhaseState) -> tuple[int, int]:
        return (self.d_l - other.d_l, self.d_u - other.d_u)

    def __repr__(self):
        return f"({self.d_l},{self.d_u})"


class PeerMode(enum.Enum):
    LEAF = "leaf"
    ULTRA = "ultra"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, value) -> PeerMode:
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.UNKNOWN
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise InvariantViolation(f"unknown peer mode {value!r}") from None


class RegionId(enum.IntEnum):
    """Phase-space regions, in the fixed order used by transfer matrices."""

    LSR = 0
    USR = 1
    TB = 2
    UDR = 3


@dataclass(frozen=True, slots=True)
class CrawlRecord:
    peer_id: str
    t: int
    mode: PeerMode
    software: str
    leaf_neighbors: frozenset = field(default_factory=frozenset)
    ultra_neighbors: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "peer_id", str(self.peer_id))
        if isinstance(self.t, bool) or int(self.t) != self.t:
            raise InvariantViolation(f"timestamp must be integer seconds, got {self.t!r}")
        object.__setattr__(self, "t", int(self.t))
        object.__setattr__(self, "mode", PeerMode.parse(self.mode))
        leaves = frozenset(str(p) for p in self.leaf_neighbors)
        ultras = frozenset(str(p) for p in self.ultra_neighbors)
        object.__setattr__(self, "leaf_neighbors", leaves)
        object.__setattr__(self, "ultra_neighbors", ultras)
        if leaves & ultras:
            raise InvariantViolation(
                f"peer {self.peer_id} at t={self.t}: neighbor listed as both leaf and ultra"
            )
        if self.peer_id in leaves or self.peer_id in ultras:
            raise InvariantViolation(f"peer {self.peer_id} at t={self.t}: self-loop")
        if len(leaves) > DEGREE_CAP or len(ultras) > DEGREE_CAP:
            raise InvariantViolation(
                f"degree cap exceeded: ({len(leaves)},{len(ultras)}) > {DEGREE_CAP}"
            )

    @property
    def state(self) -> PhaseState:
        return PhaseState(len(self.leaf_neighbors), len(self.ultra_neighbors))


def state_of(record: CrawlRecord) -> PhaseState:
    return PhaseState(len(record.leaf_neighbors), len(record.ultra_neighbors))


@dataclass(frozen=True, slots=True)
class PeerTrace:
    peer_id: str
    records: tuple

    def __post_init__(self):
        recs = tuple(self.records)
        object.__setattr__(self, "records", recs)
        for r in recs:
            if r.peer_id != self.peer_id:
                raise InvariantViolation(
                    f"trace {self.peer_id} contains a record of peer {r.peer_id}"
                )
        for a, b in zip(recs, recs[1:]):
            if b.t <= a.t:
                raise InvariantViolation(
                    f"trace {self.peer_id}: timestamps not strictly increasing ({a.t} -> {b.t})"
                )

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def states(self) -> list[PhaseState]:
        return [r.state for r in self.records]

    @property
    def software(self) -> str:
        return self.records[0].software if self.records else ""

    @classmethod
    def from_records(cls, records: Iterable[CrawlRecord]) -> PeerTrace:
        recs = sorted(records, key=lambda r: r.t)
        if not recs:
            raise InvariantViolation("cannot build a trace from zero records")
        return cls(recs[0].peer_id, tuple(recs))


@dataclass(frozen=True, slots=True)
class QueueLimits:
    """Slot limits of an ultra-mode peer.

    ``B_l``/``B_u`` cap leaf and ultra connections; below ``L_u`` ultra
    connections the peer actively connects instead of waiting.
    """

    B_l: int = 30
    B_u: int = 32
    L_u: int = 20

    def __post_init__(self):
        if self.B_l <= 0:
            raise InvariantViolation(f"B_l must be positive, got {self.B_l}")
        if not 0 <= self.L_u < self.B_u:
            raise InvariantViolation(f"need 0 <= L_u < B_u, got L_u={self.L_u}, B_u={self.B_u}")
        if self.B_l > DEGREE_CAP or self.B_u > DEGREE_CAP:
            raise InvariantViolation("slot limits exceed the degree cap")


@dataclass(frozen=True, slots=True)
class Rect:
    """Closed axis-aligned lattice rectangle [l_lo, l_hi] x [u_lo, u_hi]."""

    l_lo: int
    l_hi: int
    u_lo: int
    u_hi: int

    def __post_init__(self):
        if self.l_lo > self.l_hi or self.u_lo > self.u_hi:
            raise InvariantViolation(f"empty rectangle {self}")

    def contains(self, state) -> bool:
        d_l, d_u = state
        return self.l_lo <= d_l <= self.l_hi and self.u_lo <= d_u <= self.u_hi

    def interiors_overlap(self, other: Rect) -> bool:
        # sharing a boundary line is allowed; region_of resolves it by ordinal
        dl = min(self.l_hi, other.l_hi) - max(self.l_lo, other.l_lo)
        du = min(self.u_hi, other.u_hi) - max(self.u_lo, other.u_lo)
        return dl > 0 and du > 0

    def as_list(self) -> list[int]:
        return [self.l_lo, self.l_hi, self.u_lo, self.u_hi]


@dataclass(frozen=True)
class SoftwareProfile:
    name: str
    leaf_stable_point: PhaseState
    ultra_stable_point: PhaseState
    belt_lo: int
    belt_hi: int
    region_rects: Mapping[RegionId, Rect]
    slot_limits: QueueLimits = QueueLimits()

    def __post_init__(self):
        if self.belt_lo > self.belt_hi:
            raise InvariantViolation(f"belt_lo {self.belt_lo} > belt_hi {self.belt_hi}")
        rects = {RegionId(k) if not isinstance(k, str) else RegionId[k]: v
                 for k, v in dict(self.region_rects).items()}
        if set(rects) != set(RegionId):
            raise InvariantViolation(f"profile {self.name}: need exactly the four regions")
        ordered = [rects[r] for r in RegionId]
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                if a.interiors_overlap(b):
                    raise InvariantViolation(f"profile {self.name}: region rectangles overlap")
        object.__setattr__(self, "region_rects", MappingProxyType(rects))
        if not rects[RegionId.LSR].contains(self.leaf_stable_point):
            raise InvariantViolation(f"profile {self.name}: leaf stable point outside LSR")
        if not rects[RegionId.USR].contains(self.ultra_stable_point):
            raise InvariantViolation(f"profile {self.name}: ultra stable point outside USR")

    def in_belt(self, state) -> bool:
        return self.belt_lo <= state[1] <= self.belt_hi
