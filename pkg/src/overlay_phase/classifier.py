"""Per-trace region attributes and the nine-class trace classification.

The classifier partition has two disks, around the ultra and leaf stable
points, and the transition region that is their complement. A trace is
summarized by the fraction of its reports in each region (eta) and by how
often it crosses into or out of each region relative to its reports there
(xi, clamped to [0, 1]).
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .core import PeerTrace, PhaseState
from .errors import InvariantViolation

_L, _T, _U = 0, 1, 2


class TraceClass(enum.Enum):
    STABLE_LEAF = "StableLeaf"
    NEVER_STABLE_ULTRA = "NeverStableUltra"
    STABLE_ULTRA = "StableUltra"
    BIPOLAR = "Bipolar"
    UNSTABLE_LEAF = "UnstableLeaf"
    TOTAL_CHURN = "TotalChurn"
    STABLE_ULTRA_OCCASIONAL_CHURN = "StableUltraOccasionalChurn"
    HALF_STABLE_ULTRA = "HalfStableUltra"
    HALF_UNSTABLE_ULTRA = "HalfUnstableUltra"


# display order and captions for the summary table
TABLE_ROWS = (
    (TraceClass.STABLE_LEAF, "eta_l>0, eta_t=0, eta_u=0", "Stable leaf"),
    (TraceClass.NEVER_STABLE_ULTRA, "eta_l=0, eta_t>0, eta_u=0 | xi_u=1", "Never stable ultra"),
    (TraceClass.STABLE_ULTRA, "eta_l=0, eta_t=0, eta_u>0", "Stable ultra"),
    (TraceClass.BIPOLAR, "eta_l>0, eta_t=0, eta_u>0", "Bipolar between leaf and ultra"),
    (TraceClass.UNSTABLE_LEAF, "eta_l>0, eta_t>0, eta_u=0", "Unstable leaf"),
    (TraceClass.TOTAL_CHURN, "eta_l>0, eta_t>0, eta_u>0", "Total churn"),
    (TraceClass.STABLE_ULTRA_OCCASIONAL_CHURN, "eta_l=0, eta_t>0, eta_u>0, xi_t=1",
     "Stable ultra (occasional churn)"),
    (TraceClass.HALF_STABLE_ULTRA, "eta_l=0, eta_t>0, eta_u>0, xi_t<=xi_u<1", "Half stable ultra"),
    (TraceClass.HALF_UNSTABLE_ULTRA, "eta_l=0, eta_t>0, eta_u>0, 1>xi_t>xi_u", "Half unstable ultra"),
)


@dataclass(frozen=True)
class ClassifierRegions:
    usp: PhaseState = PhaseState(30, 32)
    lsp: PhaseState = PhaseState(0, 2)
    r_u: float = 10.0
    r_l: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "usp", PhaseState(*self.usp))
        object.__setattr__(self, "lsp", PhaseState(*self.lsp))
        if self.r_u <= 0 or self.r_l <= 0:
            raise InvariantViolation("disk radii must be positive")
        if distance(self.usp, self.lsp) <= self.r_u + self.r_l:
            raise InvariantViolation("stable-region disks overlap")

    def locate(self, state) -> int:
        if distance(state, self.usp) <= self.r_u:
            return _U
        if distance(state, self.lsp) <= self.r_l:
            return _L
        return _T


def distance(s1, s2) -> float:
    (a1, b1), (a2, b2) = s1, s2
    return math.hypot(a1 - a2, b1 - b2)


@dataclass(frozen=True)
class TraceAttributes:
    eta_l: float
    eta_t: float
    eta_u: float
    xi_l: float
    xi_t: float
    xi_u: float

    def __post_init__(self):
        vals = self.as_tuple()
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise InvariantViolation(f"attributes must lie in [0, 1]: {vals}")
        if abs(self.eta_l + self.eta_t + self.eta_u - 1.0) > 1e-9:
            raise InvariantViolation("eta fractions must sum to 1")
        for eta, xi in ((self.eta_l, self.xi_l), (self.eta_t, self.xi_t), (self.eta_u, self.xi_u)):
            if eta == 0 and xi != 0:
                raise InvariantViolation("xi of an unvisited region must be 0")

    def as_tuple(self) -> tuple:
        return (self.eta_l, self.eta_t, self.eta_u, self.xi_l, self.xi_t, self.xi_u)


def trace_attributes(trace, regions: ClassifierRegions | None = None) -> TraceAttributes:
    """Six-tuple summary of a trace (a PeerTrace or a sequence of states)."""
    regions = regions or ClassifierRegions()
    states = trace.states if isinstance(trace, PeerTrace) else [PhaseState(*s) for s in trace]
    if not states:
        raise InvariantViolation("trace has no reports")
    labels = [regions.locate(s) for s in states]
    n = len(labels)
    reports = Counter(labels)
    crossings = Counter()
    # only interior transitions count; the trace's own start and end do not
    for a, b in zip(labels, labels[1:]):
        if a != b:
            crossings[a] += 1
            crossings[b] += 1
    eta = [reports[k] / n for k in (_L, _T, _U)]
    xi = [min(1.0, crossings[k] / reports[k]) if reports[k] else 0.0 for k in (_L, _T, _U)]
    return TraceAttributes(*eta, *xi)


def classify(attrs: TraceAttributes) -> TraceClass:
    el, et, eu = attrs.eta_l > 0, attrs.eta_t > 0, attrs.eta_u > 0
    if el:
        if et:
            return TraceClass.TOTAL_CHURN if eu else TraceClass.UNSTABLE_LEAF
        return TraceClass.BIPOLAR if eu else TraceClass.STABLE_LEAF
    if not et:
        return TraceClass.STABLE_ULTRA
    if not eu:
        return TraceClass.NEVER_STABLE_ULTRA
    if attrs.xi_t == 1.0:
        return TraceClass.STABLE_ULTRA_OCCASIONAL_CHURN
    if attrs.xi_u == 1.0:
        return TraceClass.NEVER_STABLE_ULTRA
    if attrs.xi_t <= attrs.xi_u:
        return TraceClass.HALF_STABLE_ULTRA
    return TraceClass.HALF_UNSTABLE_ULTRA


def class_histogram(labels) -> list[tuple[TraceClass, str, str, int, float]]:
    """Rows of (class, rule, caption, count, share) in summary-table order."""
    counts = Counter(labels)
    total = sum(counts.values())
    return [
        (cls, rule, caption, counts.get(cls, 0), counts.get(cls, 0) / total if total else 0.0)
        for cls, rule, caption in TABLE_ROWS
    ]


class TraceClassifier(ClassifierMixin, BaseEstimator):
    """Rule-based trace classifier with an estimator interface.

    ``fit`` only validates the partition; ``transform`` returns the
    (n_traces, 6) attribute matrix and ``predict`` the class labels.
    """

    def __init__(self, usp=(30, 32), lsp=(0, 2), r_u=10.0, r_l=10.0):
        self.usp = usp
        self.lsp = lsp
        self.r_u = r_u
        self.r_l = r_l

    def fit(self, X=None, y=None):
        self.regions_ = ClassifierRegions(PhaseState(*self.usp), PhaseState(*self.lsp),
                                          self.r_u, self.r_l)
        self.classes_ = np.array([c.value for c in TraceClass])
        return self

    def attributes(self, X) -> list[TraceAttributes]:
        check_is_fitted(self, "regions_")
        return [trace_attributes(tr, self.regions_) for tr in X]

    def transform(self, X) -> np.ndarray:
        return np.array([a.as_tuple() for a in self.attributes(X)], dtype=float).reshape(-1, 6)

    def predict(self, X) -> np.ndarray:
        return np.array([classify(a).value for a in self.attributes(X)], dtype=object)
