"""Random degree traces from the double M/M/m/m model.

CTDM traces invert the cumulative columns of the chain's one-interval
transition matrix. BDTM traces draw Poisson arrivals and thin the held
connections with one uniform per connection, then clamp to the legal range.

Random streams: ``SeedSequence(seed)`` is split into one child per trace,
and each trace's child into three streams, used for the leaf chain, the
ultra chain and synthetic neighbor identities, in that order. Output is a
pure function of the seed and the trace index.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import CrawlRecord, PeerMode, PhaseState
from .errors import InvariantViolation, ModelError
from .queue import INTERVAL_SECONDS, QueueParams, bdtm_transfer, ctdm_transfer

MODELS = ("ctdm", "bdtm")
_CHUNK = 1 << 15


@dataclass(frozen=True)
class GenConfig:
    model: str
    leaf: QueueParams
    ultra: QueueParams
    x0: PhaseState
    n: int
    seed: int = 0
    interval: int = INTERVAL_SECONDS

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvariantViolation(f"model must be one of {MODELS}, got {self.model!r}")
        object.__setattr__(self, "x0", PhaseState(*self.x0))
        if self.n < 0:
            raise InvariantViolation("n must be >= 0")
        if not self.leaf.floor <= self.x0.d_l <= self.leaf.cap:
            raise InvariantViolation(f"x0 leaf degree {self.x0.d_l} outside {self.leaf.floor}..{self.leaf.cap}")
        if not self.ultra.floor <= self.x0.d_u <= self.ultra.cap:
            raise InvariantViolation(f"x0 ultra degree {self.x0.d_u} outside {self.ultra.floor}..{self.ultra.cap}")
        if self.model == "bdtm" and (self.leaf.mu > 1 or self.ultra.mu > 1):
            raise InvariantViolation("BDTM drop probabilities must be <= 1")


def cumulative(T) -> np.ndarray:
    """Column-wise cumulative sums; the last row is pinned to exactly 1."""
    C = np.cumsum(np.asarray(T, dtype=float), axis=0)
    if np.any(np.abs(C[-1] - 1.0) > 1e-9):
        raise ModelError("columns of T must sum to 1")
    C = np.maximum.accumulate(C, axis=0)
    C[-1] = 1.0
    return C


def ctdm_step(C, current: int, r: float) -> int:
    """The unique k with C[k-1, current] <= r < C[k, current] (C[-1, .] = 0)."""
    col = C[:, current]
    return int(np.searchsorted(col, r, side="right"))


def bdtm_step(d: int, params: QueueParams, rng: np.random.Generator) -> int:
    arrivals = int(rng.poisson(params.lam))
    drops = int(np.count_nonzero(rng.random(d) <= params.mu))
    return min(max(d + arrivals - drops, params.floor), params.cap)


def _ctdm_chain(params, x0, n, rng):
    C = cumulative(ctdm_transfer(params))
    cols = [C[:, j].tolist() for j in range(params.n_states)]
    out = np.empty(n + 1, dtype=np.int64)
    out[0] = x0
    i = x0 - params.floor
    bisect_right = bisect.bisect_right
    for t, r in enumerate(rng.random(n).tolist(), start=1):
        i = bisect_right(cols[i], r)
        out[t] = i
    out[1:] += params.floor
    return out, None


def _bdtm_chain(params, x0, n, rng):
    # Per step: Poisson arrivals, then one uniform per held connection; the
    # drop count for degree d is the number of the first d uniforms <= mu.
    floor, cap, lam, mu = params.floor, params.cap, params.lam, params.mu
    out = np.empty(n + 1, dtype=np.int64)
    drops_out = np.zeros(n, dtype=np.int64)
    out[0] = d = x0
    t = 0
    while t < n:
        size = min(_CHUNK, n - t)
        arrivals = rng.poisson(lam, size).tolist()
        u = rng.random((size, cap)) <= mu
        counts = np.zeros((size, cap + 1), dtype=np.int16)
        np.cumsum(u, axis=1, out=counts[:, 1:])
        counts = counts.tolist()
        for s in range(size):
            dropped = counts[s][d]
            d = d + arrivals[s] - dropped
            if d < floor:
                d = floor
            elif d > cap:
                d = cap
            drops_out[t + s] = dropped
            out[t + s + 1] = d
        t += size
    return out, drops_out


def simulate_chain(model: str, params: QueueParams, x0: int, n: int, rng: np.random.Generator,
                   return_drops: bool = False):
    """Degrees ``x_0 .. x_n`` of one chain (and BDTM drop counts when asked)."""
    if not params.floor <= x0 <= params.cap:
        raise ModelError(f"initial degree {x0} outside {params.floor}..{params.cap}")
    if model == "ctdm":
        degrees, drops = _ctdm_chain(params, x0, n, rng)
    elif model == "bdtm":
        degrees, drops = _bdtm_chain(params, x0, n, rng)
    else:
        raise ModelError(f"unknown model {model!r}")
    return (degrees, drops) if return_drops else degrees


def trace_streams(seed: int, n_traces: int = 1) -> list[list[np.random.Generator]]:
    """Three generators (leaf, ultra, identities) per trace."""
    children = np.random.SeedSequence(seed).spawn(n_traces)
    return [[np.random.default_rng(s) for s in child.spawn(3)] for child in children]


def generate_degrees(config: GenConfig, trace_index: int = 0, streams=None):
    """Leaf and ultra degree arrays (length n+1) plus per-step drop counts."""
    if streams is None:
        streams = trace_streams(config.seed, trace_index + 1)[trace_index]
    leaf, leaf_drops = simulate_chain(config.model, config.leaf, config.x0.d_l, config.n,
                                      streams[0], return_drops=True)
    ultra, ultra_drops = simulate_chain(config.model, config.ultra, config.x0.d_u, config.n,
                                        streams[1], return_drops=True)
    return leaf, ultra, leaf_drops, ultra_drops


def generate(config: GenConfig) -> list[tuple[int, PhaseState]]:
    leaf, ultra, _, _ = generate_degrees(config)
    return [(t * config.interval, PhaseState(int(a), int(b)))
            for t, (a, b) in enumerate(zip(leaf.tolist(), ultra.tolist()))]


class _NeighborPool:
    def __init__(self, prefix, rng):
        self.prefix = prefix
        self.rng = rng
        self.current: list[str] = []
        self.serial = 0

    def step(self, target: int, drops: int | None):
        d = len(self.current)
        if drops is None:
            drops = max(0, d - target)
        drops = min(drops, d)
        if drops:
            keep = np.sort(self.rng.choice(d, size=d - drops, replace=False))
            self.current = [self.current[i] for i in keep.tolist()]
        while len(self.current) > target:  # clamped at the floor: fewer drops than drawn
            self.current.pop(int(self.rng.integers(len(self.current))))
        while len(self.current) < target:
            self.serial += 1
            self.current.append(f"{self.prefix}{self.serial}")
        return frozenset(self.current)


def synthesize_records(peer_id: str, leaf, ultra, leaf_drops=None, ultra_drops=None,
                       rng: np.random.Generator | None = None, t0: int = 0,
                       interval: int = INTERVAL_SECONDS, software: str = "synthetic",
                       mode: PeerMode = PeerMode.ULTRA) -> Iterator[CrawlRecord]:
    """Crawl records for a degree trace with synthetic neighbor identities.

    Arrivals get fresh identifiers and drops remove uniformly chosen current
    neighbors. Without drop counts only the net change is realized.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    lp = _NeighborPool(f"{peer_id}.l", rng)
    up = _NeighborPool(f"{peer_id}.u", rng)
    for t, (a, b) in enumerate(zip(np.asarray(leaf).tolist(), np.asarray(ultra).tolist())):
        ld = None if t == 0 or leaf_drops is None else int(leaf_drops[t - 1])
        ud = None if t == 0 or ultra_drops is None else int(ultra_drops[t - 1])
        yield CrawlRecord(peer_id, t0 + t * interval, mode, software, lp.step(a, ld), up.step(b, ud))


def generate_records(config: GenConfig, n_traces: int = 1, prefix: str = "g") -> Iterator[CrawlRecord]:
    """Records of ``n_traces`` independent synthetic peers, trace after trace."""
    streams = trace_streams(config.seed, n_traces)
    width = len(str(max(n_traces - 1, 0)))
    for idx in range(n_traces):
        leaf, ultra, ld, ud = generate_degrees(config, idx, streams[idx])
        pid = f"{prefix}{idx:0{width}d}"
        yield from synthesize_records(pid, leaf, ultra, ld, ud, streams[idx][2],
                                      interval=config.interval,
                                      software=f"synthetic-{config.model}")


def model_transfer(model: str, params: QueueParams) -> np.ndarray:
    return ctdm_transfer(params) if model == "ctdm" else bdtm_transfer(params)
