"""Phase-space statics and transition dynamics.

Intensity grids, transition pairs and the fields built from them, per-state
stationary probability, the four-region partition with its transfer matrix,
and the equilibrium of that region chain.

Transfer matrices are column-stochastic throughout: ``G[i, j]`` is the
probability that the next region is ``i`` given the current region ``j``.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import CrawlRecord, PeerTrace, PhaseState, RegionId, SoftwareProfile
from .errors import InvariantViolation, ModelError
from .ingest import TraceStore
from .markov import stationary_vector
from .profiles import load_profile
from .validation import check_column_stochastic, check_distribution

SHRINK = 0.4
REGIONS = tuple(RegionId)


def _iter_states(items) -> Iterable[PhaseState]:
    if isinstance(items, TraceStore):
        items = items.records()
    for it in items:
        if isinstance(it, PeerTrace):
            for r in it.records:
                yield r.state
        elif isinstance(it, CrawlRecord):
            yield it.state
        else:
            yield it if isinstance(it, PhaseState) else PhaseState(*it)


def _iter_traces(items) -> Iterable[PeerTrace]:
    if isinstance(items, PeerTrace):
        yield items
        return
    for it in items:
        if not isinstance(it, PeerTrace):
            raise TypeError(f"expected PeerTrace, got {type(it).__name__}")
        yield it


# --------------------------------------------------------------------------
# intensity


@dataclass(frozen=True)
class IntensityGrid:
    """Occurrence counts indexed ``counts[d_l, d_u]``."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, state) -> int:
        d_l, d_u = state
        if d_l >= self.counts.shape[0] or d_u >= self.counts.shape[1]:
            return 0
        return int(self.counts[d_l, d_u])

    def transformed(self, kind: str = "linear") -> np.ndarray:
        if kind == "linear":
            return self.counts.astype(float)
        if kind == "fourth-root":
            return self.counts.astype(float) ** 0.25
        raise ValueError(f"unknown transform {kind!r}")

    def rows(self, kind: str = "linear", nonzero: bool = True):
        values = self.transformed(kind)
        for d_l in range(values.shape[0]):
            for d_u in range(values.shape[1]):
                if nonzero and self.counts[d_l, d_u] == 0:
                    continue
                yield (d_l, d_u, float(values[d_l, d_u]))


def intensity(items) -> IntensityGrid:
    counts = Counter(_iter_states(items))
    if not counts:
        return IntensityGrid(np.zeros((1, 1), dtype=np.int64))
    max_l = max(s.d_l for s in counts)
    max_u = max(s.d_u for s in counts)
    grid = np.zeros((max_l + 1, max_u + 1), dtype=np.int64)
    for s, c in counts.items():
        grid[s.d_l, s.d_u] = c
    return IntensityGrid(grid)


# --------------------------------------------------------------------------
# transitions


@dataclass(frozen=True)
class TransitionPairSet:
    """Multiset of (from, to) states of consecutive responses of one peer."""

    pairs: tuple = ()

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __add__(self, other: TransitionPairSet) -> TransitionPairSet:
        return TransitionPairSet(self.pairs + other.pairs)

    @classmethod
    def from_traces(cls, traces) -> TransitionPairSet:
        if isinstance(traces, TraceStore):
            traces = iter(traces)
        out = []
        for tr in _iter_traces(traces):
            out.extend(transition_pairs(tr).pairs)
        return cls(tuple(out))


def transition_pairs(trace) -> TransitionPairSet:
    """Pairs of consecutive states; a trace with fewer than two records gives none.

    ``trace`` may also be a plain sequence of states.
    """
    if isinstance(trace, PeerTrace):
        states = trace.states
    else:
        states = list(_iter_states(trace))
    return TransitionPairSet(tuple(zip(states, states[1:])))


def _as_pairs(pairs) -> TransitionPairSet:
    if isinstance(pairs, TransitionPairSet):
        return pairs
    if isinstance(pairs, (TraceStore, PeerTrace)):
        return TransitionPairSet.from_traces(pairs)
    return TransitionPairSet(tuple((PhaseState(*a), PhaseState(*b)) for a, b in pairs))


def _cell(state: PhaseState, group: int) -> tuple[int, int]:
    if group == 1:
        return (state.d_l, state.d_u)
    return (state.d_l // group, state.d_u // group)


def _check_group(group):
    if group not in (1, 2):
        raise ValueError(f"group must be 1 or 2, got {group}")


@dataclass(frozen=True)
class StreamField:
    """Mean displacement per starting cell: ``cells[cell] = (vx, vy, support)``.

    Displacements are in degree units whatever the cell size.
    """

    cells: Mapping
    group: int = 1

    def rows(self):
        for (cl, cu), (vx, vy, n) in sorted(self.cells.items()):
            yield (cl, cu, vx, vy, n)


def stream_field(pairs, group: int = 1, min_support: int = 1) -> StreamField:
    _check_group(group)
    sums = defaultdict(lambda: [0, 0, 0])
    for a, b in _as_pairs(pairs):
        acc = sums[_cell(a, group)]
        acc[0] += b.d_l - a.d_l
        acc[1] += b.d_u - a.d_u
        acc[2] += 1
    cells = {c: (sx / n, sy / n, n) for c, (sx, sy, n) in sums.items() if n >= min_support}
    return StreamField(cells, group)


@dataclass(frozen=True)
class FieldEntry:
    """One line of an incoming/outgoing graph.

    ``ux, uy`` is the unit direction (zero for a self-transition) and
    ``length`` the displacement in cell units scaled by :data:`SHRINK`.
    """

    ux: float
    uy: float
    length: float


def _field(pairs, group, incoming: bool) -> dict:
    _check_group(group)
    out = defaultdict(list)
    for a, b in _as_pairs(pairs):
        anchor, other = (b, a) if incoming else (a, b)
        dx = (other.d_l - anchor.d_l) / group
        dy = (other.d_u - anchor.d_u) / group
        norm = math.hypot(dx, dy)
        if norm == 0:
            entry = FieldEntry(0.0, 0.0, 0.0)
        else:
            entry = FieldEntry(dx / norm, dy / norm, SHRINK * norm)
        out[_cell(anchor, group)].append(entry)
    return dict(out)


def outgoing_field(pairs, group: int = 1) -> dict:
    """Lines from each starting cell toward where its peers went."""
    return _field(pairs, group, incoming=False)


def incoming_field(pairs, group: int = 1) -> dict:
    """Lines from each ending cell back toward where its peers came from."""
    return _field(pairs, group, incoming=True)


def stationary_probability(pairs) -> dict:
    """P(to == s | from == s) for every state with at least one outgoing pair."""
    out_n = Counter()
    stay_n = Counter()
    for a, b in _as_pairs(pairs):
        out_n[a] += 1
        if a == b:
            stay_n[a] += 1
    return {s: stay_n[s] / n for s, n in out_n.items()}


# --------------------------------------------------------------------------
# region partition


def region_of(state, profile: SoftwareProfile | str = "limewire") -> RegionId | None:
    profile = load_profile(profile)
    for region in REGIONS:  # lower ordinal wins on shared boundaries
        if profile.region_rects[region].contains(state):
            return region
    return None


@dataclass(frozen=True)
class RegionTransferMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (4, 4):
            raise InvariantViolation(f"region transfer matrix must be 4x4, got {v.shape}")
        if np.any(v < 0) or np.any(v > 1):
            raise InvariantViolation("transfer probabilities must lie in [0, 1]")
        if np.any(np.abs(v.sum(axis=0) - 1) > 1e-9):
            raise InvariantViolation("transfer matrix columns must sum to 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __getitem__(self, idx):
        return self.values[idx]


@dataclass(frozen=True)
class RegionDistribution:
    values: np.ndarray

    def __post_init__(self):
        v = check_distribution(self.values, name="region distribution").copy()
        if v.shape != (4,):
            raise InvariantViolation(f"region distribution must have 4 entries, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __getitem__(self, idx):
        return self.values[idx]

    def as_dict(self) -> dict:
        return {r.name: float(self.values[r]) for r in REGIONS}


@dataclass(frozen=True)
class RegionTransferResult:
    G: RegionTransferMatrix
    p: RegionDistribution
    counts: np.ndarray
    excluded_pairs: int = 0
    empty_regions: tuple = field(default_factory=tuple)

    def __iter__(self):
        yield self.G
        yield self.p


def region_transfer_matrix(pairs, profile: SoftwareProfile | str = "limewire") -> RegionTransferResult:
    """Count region-to-region transitions.

    Pairs with an endpoint outside every region are excluded and tallied in
    ``excluded_pairs``. A region with no outgoing pairs keeps its identity
    column and is listed in ``empty_regions``.
    """
    profile = load_profile(profile)
    counts = np.zeros((4, 4), dtype=np.int64)
    excluded = 0
    cache = {}

    def reg(s):
        if s not in cache:
            cache[s] = region_of(s, profile)
        return cache[s]

    for a, b in _as_pairs(pairs):
        ra, rb = reg(a), reg(b)
        if ra is None or rb is None:
            excluded += 1
            continue
        counts[rb, ra] += 1
    if counts.sum() == 0:
        raise ModelError("no transition pair has both endpoints inside a region")
    col = counts.sum(axis=0)
    G = np.zeros((4, 4))
    empty = []
    for j in range(4):
        if col[j] == 0:
            G[j, j] = 1.0
            empty.append(RegionId(j))
        else:
            G[:, j] = counts[:, j] / col[j]
    endpoints = counts.sum(axis=0) + counts.sum(axis=1)
    p = endpoints / endpoints.sum()
    return RegionTransferResult(
        RegionTransferMatrix(G), RegionDistribution(p), counts, excluded, tuple(empty)
    )


def equilibrium(G, atol: float = 1e-3) -> RegionDistribution:
    """Stationary distribution h of a 4x4 region chain (G h = h).

    Columns must sum to one within ``atol``; they are renormalized before
    solving so that matrices printed to four decimals are accepted. Raises
    :class:`~overlay_phase.errors.ReducibleChainError` when h is not unique.
    """
    G = check_column_stochastic(np.asarray(G, dtype=float), atol=atol, name="G", renormalize=True)
    if G.shape != (4, 4):
        raise ModelError(f"region chain must be 4x4, got {G.shape}")
    return RegionDistribution(stationary_vector(G))


class RegionTransferEstimator(TransformerMixin, BaseEstimator):
    """Estimate the region transfer matrix and its equilibrium from traces.

    Parameters
    ----------
    profile : str or SoftwareProfile
        Region partition to use.

    Attributes
    ----------
    transfer_matrix_ : ndarray of shape (4, 4)
    state_distribution_ : ndarray of shape (4,)
        Fraction of pair endpoints per region (the measured ``p``).
    equilibrium_ : ndarray of shape (4,)
        Stationary distribution of ``transfer_matrix_`` (the ``h``), or
        None when the estimated chain is reducible.
    n_pairs_, n_excluded_ : int
    """

    def __init__(self, profile="limewire"):
        self.profile = profile

    def fit(self, X, y=None):
        result = region_transfer_matrix(_as_pairs(X), self.profile)
        self.transfer_matrix_ = np.array(result.G.values)
        self.state_distribution_ = np.array(result.p.values)
        self.counts_ = result.counts
        self.n_pairs_ = int(result.counts.sum())
        self.n_excluded_ = result.excluded_pairs
        self.empty_regions_ = result.empty_regions
        try:
            self.equilibrium_ = np.array(equilibrium(self.transfer_matrix_, atol=1e-9).values)
        except ModelError:
            self.equilibrium_ = None
        return self

    def transform(self, X):
        """Region ordinal of each state (-1 outside every region)."""
        check_is_fitted(self, "transfer_matrix_")
        profile = load_profile(self.profile)
        out = []
        for s in _iter_states(X):
            r = region_of(s, profile)
            out.append(-1 if r is None else int(r))
        return np.asarray(out, dtype=int)
