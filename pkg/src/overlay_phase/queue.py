"""Double M/M/m/m degree-keeping model.

Each of the leaf and ultra degrees is an independent loss system: arrivals
(new-connection efforts) at rate ``lam`` per interval, each held connection
dropping at ``mu``. State index ``i`` stands for degree ``k + i``, where the
floor ``k`` is 0 for the leaf system and ``L_u`` for the ultra system (below
it a peer reconnects actively, which the model treats as instantaneous).

Two time models are provided. CTDM is the continuous-time chain with a
tridiagonal generator and a closed-form truncated-Poisson equilibrium.
BDTM is a discrete-time chain: per interval every held connection drops
independently with probability ``mu``, then Poisson(``lam``) arrivals are
added and the result is clamped to the legal range.

All rates are per crawl interval (30 minutes by default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln
from scipy.stats import binom, poisson
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_is_fitted

from .core import QueueLimits
from .errors import InvariantViolation, ModelError
from .markov import stationary_vector
from .validation import check_column_stochastic, check_distribution, total_variation

INTERVAL_SECONDS = 1800
POISSON_TAIL_TOL = 1e-12


@dataclass(frozen=True)
class QueueParams:
    """One M/M/m/m system: states are degrees ``k .. k + m``."""

    lam: float
    mu: float
    m: int
    k: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InvariantViolation(f"lam must be >= 0, got {self.lam}")
        if not (math.isfinite(self.mu) and self.mu >= 0):
            raise InvariantViolation(f"mu must be >= 0, got {self.mu}")
        if int(self.m) != self.m or self.m < 1:
            raise InvariantViolation(f"m must be an integer >= 1, got {self.m}")
        if int(self.k) != self.k or self.k < 0:
            raise InvariantViolation(f"k must be an integer >= 0, got {self.k}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "k", int(self.k))

    @property
    def floor(self) -> int:
        return self.k

    @property
    def cap(self) -> int:
        return self.k + self.m

    @property
    def n_states(self) -> int:
        return self.m + 1

    @property
    def load(self) -> float:
        return self.lam / self.mu if self.mu > 0 else math.inf

    def scaled(self, dt: float) -> QueueParams:
        """Same system with both rates multiplied by the time step ``dt``."""
        return QueueParams(self.lam * dt, self.mu * dt, self.m, self.k)


def leaf_params(lam: float, mu: float, limits: QueueLimits = QueueLimits()) -> QueueParams:
    return QueueParams(lam, mu, limits.B_l, 0)


def ultra_params(lam: float, mu: float, limits: QueueLimits = QueueLimits()) -> QueueParams:
    return QueueParams(lam, mu, limits.B_u - limits.L_u, limits.L_u)


@dataclass(frozen=True)
class EquilibriumDist:
    probs: np.ndarray
    floor: int = 0

    def __post_init__(self):
        p = check_distribution(np.asarray(self.probs, dtype=float), name="equilibrium").copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return len(self.probs)

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    @property
    def degrees(self) -> np.ndarray:
        return np.arange(self.floor, self.floor + len(self.probs))

    @property
    def top_mass(self) -> float:
        """Mass at the cap: the loss (blocking) probability of the system."""
        return float(self.probs[-1])

    @property
    def mean_degree(self) -> float:
        return float(np.dot(self.degrees, self.probs))

    def prob(self, degree: int) -> float:
        i = degree - self.floor
        return float(self.probs[i]) if 0 <= i < len(self.probs) else 0.0

    def rows(self):
        return [(int(d), float(p)) for d, p in zip(self.degrees, self.probs)]


# --------------------------------------------------------------------------
# CTDM


def ctdm_generator(params: QueueParams) -> np.ndarray:
    """Column-convention generator: ``Q[i, j]`` is the rate j -> i.

    Up-moves at ``lam``; from index ``i`` down-moves at ``(k + i) * mu``.
    """
    n = params.n_states
    Q = np.zeros((n, n))
    for i in range(n - 1):
        Q[i + 1, i] = params.lam
    for i in range(1, n):
        Q[i - 1, i] = (params.k + i) * params.mu
    Q[np.diag_indices(n)] = -Q.sum(axis=0)
    return Q


def ctdm_equilibrium(params: QueueParams) -> EquilibriumDist:
    """Closed form: ``p_i`` proportional to ``(lam/mu)^i k! / (k+i)!``."""
    n = params.n_states
    if params.lam == 0:
        p = np.zeros(n)
        p[0] = 1.0
        return EquilibriumDist(p, params.k)
    if params.mu == 0:
        p = np.zeros(n)
        p[-1] = 1.0
        return EquilibriumDist(p, params.k)
    i = np.arange(n)
    logw = i * math.log(params.lam / params.mu) - (gammaln(params.k + i + 1) - gammaln(params.k + 1))
    w = np.exp(logw - logw.max())
    return EquilibriumDist(w / w.sum(), params.k)


def ctdm_transfer(params: QueueParams, dt: float = 1.0) -> np.ndarray:
    """Transition matrix of the CTDM chain sampled every ``dt`` intervals."""
    T = expm(ctdm_generator(params) * dt)
    T = np.clip(T, 0.0, None)
    return T / T.sum(axis=0, keepdims=True)


def erlang_b(m: int, load: float) -> float:
    """Erlang-B blocking probability by the standard recursion."""
    b = 1.0
    for n in range(1, m + 1):
        b = load * b / (n + load * b)
    return b


def estimate_lambda(q: float, u: float) -> float:
    """Offered rate from the stable-point probability ``q`` and mean departures ``u``.

    In equilibrium admitted arrivals balance departures: ``lam (1 - q) = u``.
    """
    if not 0 <= q < 1:
        raise ModelError(f"stable-point probability must be in [0, 1), got {q}")
    if u < 0:
        raise ModelError(f"mean departures must be >= 0, got {u}")
    return u / (1.0 - q)


def calibrate_mu(u: float, mean_degree: float) -> float:
    """Per-connection drop rate: mean departures per interval over mean degree."""
    if mean_degree <= 0:
        raise ModelError("mean degree must be positive")
    return u / mean_degree


def admitted_rejected(lam: float, loss_prob: float) -> tuple[float, float]:
    if not 0 <= loss_prob <= 1:
        raise ModelError(f"loss probability must be in [0, 1], got {loss_prob}")
    return lam * (1.0 - loss_prob), lam * loss_prob


# --------------------------------------------------------------------------
# BDTM


def _poisson_pmf(lam: float, tail_tol: float) -> tuple[np.ndarray, float]:
    """Poisson pmf truncated once the residual mass drops below ``tail_tol``."""
    if lam == 0:
        return np.array([1.0]), 0.0
    hi = int(poisson.isf(tail_tol, lam)) + 1
    pmf = poisson.pmf(np.arange(hi + 1), lam)
    return pmf, max(0.0, float(poisson.sf(hi, lam)))


def bdtm_transfer(params: QueueParams, tail_tol: float = POISSON_TAIL_TOL) -> np.ndarray:
    """One-interval transition matrix, ``T[i, j] = P(next = k+i | now = k+j)``.

    Each of the ``k + j`` held connections drops with probability ``mu``,
    Poisson(``lam``) arrivals are added, and mass outside ``[k, k+m]`` is
    folded onto the nearest boundary. The arrival pmf is cut where its
    tail falls below ``tail_tol``; that tail is credited to the cap.
    """
    if params.mu > 1:
        raise ModelError(f"BDTM drop probability must be <= 1, got {params.mu}")
    n, k = params.n_states, params.k
    arrivals, residual = _poisson_pmf(params.lam, tail_tol)
    T = np.zeros((n, n))
    for j in range(n):
        d = k + j
        survivors = binom.pmf(np.arange(d + 1)[::-1], d, params.mu)  # index s = d - drops
        nxt = np.convolve(survivors, arrivals)  # index = next degree
        target = np.clip(np.arange(len(nxt)), k, k + params.m) - k
        col = np.bincount(target, weights=nxt, minlength=n)
        col[-1] += residual  # truncated arrival tail overflows the cap
        T[:, j] = col
    return T


def bdtm_equilibrium(T, atol: float = 1e-9, floor: int = 0) -> EquilibriumDist:
    T = check_column_stochastic(T, atol=atol, name="T", renormalize=True)
    return EquilibriumDist(stationary_vector(T), floor)


def bdtm_equilibrium_for(params: QueueParams) -> EquilibriumDist:
    return bdtm_equilibrium(bdtm_transfer(params), floor=params.k)


def time_step_convergence(params: QueueParams, steps=(1, 1 / 2, 1 / 4, 1 / 8, 1 / 64)) -> list[tuple[float, float]]:
    """TV distance between BDTM(rates * dt) and CTDM equilibria for each dt."""
    target = ctdm_equilibrium(params).probs
    return [
        (dt, total_variation(bdtm_equilibrium_for(params.scaled(dt)).probs, target))
        for dt in steps
    ]


# --------------------------------------------------------------------------
# estimator


class DegreeKeepingModel(DensityMixin, BaseEstimator):
    """One side (leaf or ultra) of the double M/M/m/m model.

    Parameters
    ----------
    side : {"leaf", "ultra"}
    kind : {"ctdm", "bdtm"}
    B_l, B_u, L_u : int
        Slot limits.
    lam, mu : float, optional
        Fixed rates per interval. Left as None they are estimated in
        ``fit``: ``mu`` as mean departures over mean degree, ``lam`` from
        the share of samples at the cap and the mean departures.

    Attributes
    ----------
    lam_, mu_ : float
    stable_point_prob_ : float or None
        Measured share of samples at the cap (None when rates were fixed).
    equilibrium_ : EquilibriumDist
    blocking_ : float
    """

    def __init__(self, side="leaf", kind="ctdm", B_l=30, B_u=32, L_u=20, lam=None, mu=None):
        self.side = side
        self.kind = kind
        self.B_l = B_l
        self.B_u = B_u
        self.L_u = L_u
        self.lam = lam
        self.mu = mu

    def _params(self, lam, mu) -> QueueParams:
        limits = QueueLimits(self.B_l, self.B_u, self.L_u)
        if self.side == "leaf":
            return leaf_params(lam, mu, limits)
        if self.side == "ultra":
            return ultra_params(lam, mu, limits)
        raise ModelError(f"side must be 'leaf' or 'ultra', got {self.side!r}")

    def fit(self, X=None, y=None):
        """Estimate rates from degree samples ``X`` and departures ``y``.

        ``X`` holds observed degrees, ``y`` the departures counted over the
        interval following each sample. Both may be omitted when ``lam``
        and ``mu`` are fixed.
        """
        if self.kind not in ("ctdm", "bdtm"):
            raise ModelError(f"kind must be 'ctdm' or 'bdtm', got {self.kind!r}")
        lam, mu = self.lam, self.mu
        self.stable_point_prob_ = None
        if lam is None or mu is None:
            if X is None or y is None:
                raise ModelError("degrees and departures are needed to estimate rates")
            X = np.asarray(X, dtype=float).ravel()
            y = np.asarray(y, dtype=float).ravel()
            if X.shape != y.shape or X.size == 0:
                raise ModelError("degrees and departures must be equal-length and non-empty")
            cap = self._params(0.0, 1.0).cap
            u = float(y.mean())
            q = float(np.mean(X >= cap))
            self.stable_point_prob_ = q
            if mu is None:
                mu = calibrate_mu(u, float(X.mean()))
            if lam is None:
                lam = estimate_lambda(q, u)
        self.lam_ = float(lam)
        self.mu_ = float(mu)
        self.params_ = self._params(self.lam_, self.mu_)
        if self.kind == "ctdm":
            self.equilibrium_ = ctdm_equilibrium(self.params_)
        else:
            self.equilibrium_ = bdtm_equilibrium_for(self.params_)
        self.blocking_ = self.equilibrium_.top_mass
        return self

    def predict_proba(self, X):
        """Model probability of each degree in ``X``."""
        check_is_fitted(self, "equilibrium_")
        return np.array([self.equilibrium_.prob(int(d)) for d in np.asarray(X).ravel()])

    def score(self, X, y=None):
        """Negative total-variation distance between empirical and model degrees."""
        check_is_fitted(self, "equilibrium_")
        eq = self.equilibrium_
        X = np.clip(np.asarray(X, dtype=int).ravel(), eq.floor, eq.floor + len(eq) - 1)
        emp = np.bincount(X - eq.floor, minlength=len(eq)) / X.size
        return -total_variation(emp, eq.probs)

    def admitted_rejected(self):
        check_is_fitted(self, "equilibrium_")
        return admitted_rejected(self.lam_, self.blocking_)

    def sample(self, n_steps, x0=None, seed=0):
        """Degree trace of ``n_steps + 1`` values generated from the fitted model."""
        from .tracegen import simulate_chain

        check_is_fitted(self, "equilibrium_")
        x0 = self.params_.floor if x0 is None else x0
        return simulate_chain(self.kind, self.params_, x0, n_steps, np.random.default_rng(seed))
