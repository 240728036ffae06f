"""Input validation helpers for matrices, distributions and parameters."""

from __future__ import annotations

import numpy as np

from .errors import InvariantViolation, ModelError


def check_square(a, name="matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ModelError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ModelError(f"{name} has non-finite entries")
    return a


def check_column_stochastic(a, atol=1e-9, name="matrix", renormalize=False) -> np.ndarray:
    """Validate that columns are probability vectors.

    With ``renormalize`` the columns are rescaled to sum to exactly one
    after passing the ``atol`` check, which lets rounded published
    matrices through.
    """
    a = check_square(a, name)
    if np.any(a < -atol) or np.any(a > 1 + atol):
        raise ModelError(f"{name} has entries outside [0, 1]")
    sums = a.sum(axis=0)
    bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
    if bad.size:
        raise ModelError(
            f"{name} is not column-stochastic: column(s) {bad.tolist()} sum to {sums[bad].tolist()}"
        )
    if renormalize:
        a = np.clip(a, 0.0, None)
        a = a / a.sum(axis=0, keepdims=True)
    return a


def check_generator(q, atol=1e-9, name="generator") -> np.ndarray:
    q = check_square(q, name)
    off = q - np.diag(np.diag(q))
    if np.any(off < -atol):
        raise ModelError(f"{name} has negative off-diagonal rates")
    if np.any(np.abs(q.sum(axis=0)) > atol * max(1.0, np.abs(q).max())):
        raise ModelError(f"{name} columns do not sum to zero")
    return q


def check_distribution(p, atol=1e-9, name="distribution") -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise InvariantViolation(f"{name} must be a vector")
    if np.any(p < -atol):
        raise InvariantViolation(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > atol:
        raise InvariantViolation(f"{name} sums to {p.sum()}, not 1")
    return p


def check_probability(x, name, *, closed_right=True) -> float:
    x = float(x)
    upper_ok = x <= 1 if closed_right else x < 1
    if not (0 <= x and upper_ok):
        raise ModelError(f"{name} must be in [0, 1{']' if closed_right else ')'}, got {x}")
    return x


def check_nonnegative(x, name) -> float:
    x = float(x)
    if not np.isfinite(x) or x < 0:
        raise ModelError(f"{name} must be finite and >= 0, got {x}")
    return x


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())
