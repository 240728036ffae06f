"""Degree change versus connection change, drop fits, sessions and lifetimes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import poisson
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import CrawlRecord, PeerMode, PeerTrace, PhaseState
from .errors import ModelError

HOUR = 3600.0


@dataclass(frozen=True)
class ChurnStep:
    peer_id: str
    index: int
    from_state: PhaseState
    to_state: PhaseState
    degree_change: float
    leaf_departures: int
    ultra_departures: int
    leaf_arrivals: int
    ultra_arrivals: int
    dt: int = 0

    @property
    def departures(self) -> int:
        return self.leaf_departures + self.ultra_departures

    @property
    def arrivals(self) -> int:
        return self.leaf_arrivals + self.ultra_arrivals


def churn_steps(trace: PeerTrace) -> list[ChurnStep]:
    recs = trace.records
    out = []
    for i, (a, b) in enumerate(zip(recs, recs[1:])):
        sa, sb = a.state, b.state
        out.append(ChurnStep(
            peer_id=trace.peer_id,
            index=i,
            from_state=sa,
            to_state=sb,
            degree_change=math.hypot(sb.d_l - sa.d_l, sb.d_u - sa.d_u),
            leaf_departures=len(a.leaf_neighbors - b.leaf_neighbors),
            ultra_departures=len(a.ultra_neighbors - b.ultra_neighbors),
            leaf_arrivals=len(b.leaf_neighbors - a.leaf_neighbors),
            ultra_arrivals=len(b.ultra_neighbors - a.ultra_neighbors),
            dt=b.t - a.t,
        ))
    return out


def ultra_mode_filter(step: ChurnStep, min_leaf: int = 10, min_ultra: int = 10) -> bool:
    s = step.from_state
    return s.d_l >= min_leaf and s.d_u >= min_ultra


@dataclass(frozen=True)
class Histogram:
    """Normalized frequency of non-negative integer counts.

    ``pmf[k]`` is the share of samples equal to ``k``; ``n`` the sample size.
    """

    pmf: np.ndarray
    n: int

    def __len__(self):
        return len(self.pmf)

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.pmf)), self.pmf)) if self.n else float("nan")

    @classmethod
    def from_counts(cls, values) -> Histogram:
        values = np.asarray(list(values), dtype=np.int64)
        if values.size == 0:
            return cls(np.zeros(0), 0)
        if values.min() < 0:
            raise ValueError("counts must be non-negative")
        freq = np.bincount(values).astype(float)
        return cls(freq / values.size, int(values.size))

    def rows(self):
        return [(k, float(p)) for k, p in enumerate(self.pmf)]


def departure_histogram(steps: Iterable[ChurnStep], side: str = "leaf", mode_filter=ultra_mode_filter) -> Histogram:
    if side not in ("leaf", "ultra"):
        raise ValueError(f"side must be 'leaf' or 'ultra', got {side!r}")
    attr = f"{side}_departures"
    return Histogram.from_counts(
        getattr(s, attr) for s in steps if mode_filter is None or mode_filter(s)
    )


def degree_samples(steps: Iterable[ChurnStep], side: str = "leaf", interval: int | None = None,
                   mode_filter=ultra_mode_filter) -> tuple[np.ndarray, np.ndarray]:
    """Degree at the start of each step and the departures over it.

    With ``interval`` only steps spanning exactly that many seconds are kept,
    so that departures are per interval.
    """
    if side not in ("leaf", "ultra"):
        raise ValueError(f"side must be 'leaf' or 'ultra', got {side!r}")
    X, y = [], []
    for s in steps:
        if interval is not None and s.dt != interval:
            continue
        if mode_filter is not None and not mode_filter(s):
            continue
        X.append(s.from_state.d_l if side == "leaf" else s.from_state.d_u)
        y.append(s.leaf_departures if side == "leaf" else s.ultra_departures)
    return np.asarray(X, dtype=np.int64), np.asarray(y, dtype=np.int64)


class PoissonMethod(str, enum.Enum):
    MEAN_MINUS_ONE = "mean_minus_one"
    HEAD_K_MEAN = "head_k_mean"


@dataclass(frozen=True)
class PoissonFit:
    lambda_hat: float
    method: PoissonMethod
    k: int | None = None
    raw_mean: float = float("nan")
    n: int = 0

    def __post_init__(self):
        if not self.lambda_hat >= 0:
            raise ModelError(f"lambda_hat must be >= 0, got {self.lambda_hat}")


def fit_poisson(hist: Histogram, method: str = "mean_minus_one", k: int = 11) -> PoissonFit:
    """Poisson rate for the body of a departure histogram.

    ``mean_minus_one`` discounts a heavy tail by taking the mean minus one
    (floored at zero). ``head_k_mean`` renormalizes the histogram over
    counts ``0..k-1`` and takes that mean.
    """
    method = PoissonMethod(method)
    if hist.n == 0 or len(hist.pmf) == 0:
        raise ModelError("cannot fit an empty histogram")
    raw = hist.mean
    if method is PoissonMethod.MEAN_MINUS_ONE:
        return PoissonFit(max(raw - 1.0, 0.0), method, None, raw, hist.n)
    head = hist.pmf[:k]
    mass = head.sum()
    if mass == 0:
        raise ModelError(f"no mass on counts below {k}")
    lam = float(np.dot(np.arange(len(head)), head) / mass)
    return PoissonFit(lam, method, k, raw, hist.n)


@dataclass(frozen=True)
class Session:
    peer_id: str
    start: int
    end: int

    def __post_init__(self):
        if self.end < self.start:
            raise ModelError("session ends before it starts")

    @property
    def duration(self) -> int:
        return self.end - self.start


def sessions(trace: PeerTrace, break_time: float = 2 * HOUR) -> list[Session]:
    """Split a trace wherever consecutive responses are more than ``break_time`` apart."""
    if break_time <= 0:
        raise ValueError("break_time must be positive")
    recs = trace.records
    if not recs:
        return []
    out = []
    start = prev = recs[0].t
    for r in recs[1:]:
        if r.t - prev > break_time:
            out.append(Session(trace.peer_id, start, prev))
            start = r.t
        prev = r.t
    out.append(Session(trace.peer_id, start, prev))
    return out


@dataclass(frozen=True)
class ExponentialFit:
    rate: float
    mean: float
    n: int
    unit: float = 1.0


def fit_exponential(durations, censor_after: float | None = None, unit: float = 1.0) -> ExponentialFit:
    """Maximum-likelihood exponential rate (1 / mean).

    ``durations`` are numbers or :class:`Session` objects. With
    ``censor_after`` only sessions that ended strictly before that time
    are kept, which needs sessions rather than bare durations. Rate and
    mean are reported in ``unit`` (e.g. ``unit=3600`` for hours when
    durations are seconds).
    """
    items = list(durations)
    if censor_after is not None:
        if not all(isinstance(s, Session) for s in items):
            raise ModelError("censor_after needs Session objects with end times")
        items = [s for s in items if s.end < censor_after]
    values = np.array([s.duration if isinstance(s, Session) else s for s in items], dtype=float)
    if values.size == 0:
        raise ModelError("no durations to fit")
    if np.any(values < 0):
        raise ModelError("durations must be non-negative")
    mean = float(values.mean()) / unit
    if mean == 0:
        raise ModelError("all durations are zero")
    return ExponentialFit(1.0 / mean, mean, int(values.size), unit)


def connection_lifetime(mean_degree: float, departure_rate_per_hour: float) -> float:
    """Mean connection lifetime in hours from aggregate departures per hour."""
    if departure_rate_per_hour <= 0:
        raise ModelError("departure rate must be positive")
    if mean_degree <= 0:
        raise ModelError("mean degree must be positive")
    per_connection = departure_rate_per_hour / mean_degree
    return 1.0 / per_connection


def departure_correlation(steps: Sequence[ChurnStep], truncate_at: int | None = None) -> float:
    """Pearson correlation of leaf vs ultra departures per step.

    With ``truncate_at`` only steps where both counts are below it are used.
    """
    pairs = [(s.leaf_departures, s.ultra_departures) for s in steps]
    if truncate_at is not None:
        pairs = [(a, b) for a, b in pairs if a < truncate_at and b < truncate_at]
    if len(pairs) < 2:
        raise ModelError("need at least two steps")
    x = np.array(pairs, dtype=float)
    if x[:, 0].std() == 0 or x[:, 1].std() == 0:
        raise ModelError("correlation undefined: zero variance")
    return float(np.corrcoef(x[:, 0], x[:, 1])[0, 1])


def infer_mode(record: CrawlRecord, max_leaf: int = 2, max_ultra: int = 10) -> PeerMode:
    if record.mode is not PeerMode.UNKNOWN:
        return record.mode
    s = record.state
    if s.d_l <= max_leaf and s.d_u <= max_ultra:
        return PeerMode.LEAF
    return PeerMode.ULTRA


class PoissonDropEstimator(BaseEstimator):
    """Fit the Poisson body of per-interval connection drops.

    ``fit`` takes a 1-d array of departure counts. ``lambda_`` is the
    fitted rate, ``raw_mean_`` the plain sample mean.
    """

    def __init__(self, method="head_k_mean", k=11):
        self.method = method
        self.k = k

    def fit(self, X, y=None):
        X = np.asarray(X).ravel()
        fit = fit_poisson(Histogram.from_counts(X), self.method, self.k)
        self.lambda_ = fit.lambda_hat
        self.raw_mean_ = fit.raw_mean
        self.n_samples_ = fit.n
        return self

    def predict_proba(self, counts):
        check_is_fitted(self, "lambda_")
        return poisson.pmf(np.asarray(counts), self.lambda_)


class ExponentialLifetime(BaseEstimator):
    """Exponential lifetime estimator over sessions or durations.

    Attributes ``rate_`` and ``mean_`` are in ``unit`` (default hours for
    durations in seconds).
    """

    def __init__(self, censor_after=None, unit=HOUR):
        self.censor_after = censor_after
        self.unit = unit

    def fit(self, X, y=None):
        fit = fit_exponential(X, self.censor_after, self.unit)
        self.rate_ = fit.rate
        self.mean_ = fit.mean
        self.n_samples_ = fit.n
        return self

    def survival(self, t):
        check_is_fitted(self, "rate_")
        return np.exp(-self.rate_ * np.asarray(t, dtype=float))
