"""Confidence sequences for the mean of N(mu, 1) data.

For every candidate mean ``mu`` the process ``prod exp(delta (X_i - mu) - delta^2/2)``
is a test martingale for ``H_0: mu* = mu``. The lower bound at time ``t`` is
the smallest ``mu`` whose (boosted) martingale has not reached ``1/alpha`` by
``t``. Larger ``mu`` means smaller factors and smaller boosts, so crossing is
monotone in ``mu`` and the bound can be found by bisection.

Boosting is only valid for exactly Gaussian data with unit variance; the
unboosted bound also holds for 1-sub-Gaussian data, the boosted one does not.

A crossed martingale stays at ``1/alpha``, so the bound at ``t`` excludes
every ``mu`` rejected at any earlier time. Without boosting this gives the
running maximum of the closed-form bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .models import GaussianLRModel
from .process import _CAP_RTOL, check_alpha
from .solver import boost_batch

SIDES = ("lower", "upper", "two-sided")


@dataclass(frozen=True)
class ConfSeqConfig:
    alpha: float = 0.05
    delta: Union[float, np.ndarray, Callable[[int], float]] = 0.5
    side: str = "two-sided"
    bisection_tol: float = 1e-6
    boost: bool = True

    def __post_init__(self):
        check_alpha(self.alpha)
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")
        if self.bisection_tol <= 0:
            raise ValueError("bisection_tol must be positive")

    @property
    def side_alpha(self):
        return self.alpha / 2 if self.side == "two-sided" else self.alpha


@dataclass
class BoundTrajectory:
    t: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    robbins_lower: np.ndarray
    robbins_upper: np.ndarray


def delta_schedule(delta, T: int) -> np.ndarray:
    """Expand a constant, array or callable ``t -> delta_t`` to ``delta_1..delta_T``."""
    if callable(delta):
        d = np.array([float(delta(t)) for t in range(1, T + 1)])
    else:
        d = np.broadcast_to(np.asarray(delta, dtype=float), (T,)).copy() if np.ndim(delta) == 0 else np.asarray(delta, dtype=float)[:T]
    if d.shape != (T,):
        raise ValueError(f"need {T} bet sizes, got {d.shape}")
    if np.any(d <= 0):
        raise ValueError("bet sizes delta must be positive")
    return d


def robbins_bound(t: int, sample_mean: float, alpha: float, delta: float, side: str = "two-sided"):
    """Closed-form ``(lower, upper)`` bound at time ``t`` for a constant bet ``delta``.

    One-sided versions use ``log(1/alpha)`` and leave the other end infinite;
    the two-sided version uses ``log(2/alpha)`` on both ends.
    """
    check_alpha(alpha)
    if t < 1:
        raise ValueError("t must be >= 1")
    if delta <= 0:
        raise ValueError("delta must be positive")
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}")
    level = 2.0 / alpha if side == "two-sided" else 1.0 / alpha
    half = np.log(level) / (t * delta) + delta / 2
    lo = sample_mean - half if side != "upper" else -np.inf
    hi = sample_mean + half if side != "lower" else np.inf
    return lo, hi


def _running_robbins_lower(x, alpha, deltas):
    """Running max of the closed-form lower bound with a bet schedule; rows of ``x`` are paths."""
    x = np.atleast_2d(x)
    sd = np.cumsum(deltas)
    l = (np.cumsum(deltas * x, axis=-1) - np.cumsum(deltas**2) / 2 - np.log(1.0 / alpha)) / sd
    return np.maximum.accumulate(l, axis=-1)


def crossed_batch(X, lengths, mu, alpha, deltas, boost=True):
    """Whether each row's martingale for ``mu`` reached ``1/alpha`` within its first ``lengths`` points.

    ``X`` has shape ``(R, T)``; ``mu`` and ``lengths`` have shape ``(R,)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    R = X.shape[0]
    lengths = np.broadcast_to(np.asarray(lengths), (R,))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (R,))
    log_cap = np.log(1.0 / alpha)
    hit = log_cap + np.log1p(-_CAP_RTOL)
    logW = np.zeros(R)
    crossed = np.zeros(R, dtype=bool)
    for i in range(int(lengths.max(initial=0))):
        idx = np.flatnonzero((i < lengths) & ~crossed)
        if idx.size == 0:
            break
        d = deltas[i]
        lf = d * (X[idx, i] - mu[idx]) - d * d / 2
        logb = 0.0
        if boost:
            logb = np.log(boost_batch(GaussianLRModel(0.0, d), np.exp(logW[idx]), alpha).b)
        cand = logW[idx] + logb + lf
        c = cand >= hit
        logW[idx] = np.where(c, log_cap, cand)
        crossed[idx[c]] = True
    return crossed


def lower_bounds_batch(X, lengths, alpha, deltas, tol=1e-6, boost=True, max_widen=60):
    """Boosted lower bounds for each row ``(path prefix of given length)`` by vectorised bisection.

    Returns the crossed end of the final bracket, so the result is a valid
    bound that sits at most ``tol`` below the exact one.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    R = X.shape[0]
    lengths = np.broadcast_to(np.asarray(lengths), (R,)).astype(int)
    if np.any(lengths < 1):
        raise ValueError("each prefix needs at least one observation")
    rob = _running_robbins_lower(X, alpha, deltas)[np.arange(R), lengths - 1]
    # the unboosted bound is crossed, and boosting only crosses earlier
    lo = rob - max(tol, 1e-12 * np.max(np.abs(rob), initial=1.0))
    means = np.cumsum(X, axis=-1) / np.arange(1, X.shape[1] + 1)
    mask = np.arange(X.shape[1]) < lengths[:, None]
    top = np.max(np.where(mask, means, -np.inf), axis=-1)
    width = np.maximum(top - lo, 0.0) + deltas.max()
    hi = top + deltas.max()
    open_ended = np.zeros(R, dtype=bool)
    for _ in range(max_widen):
        c = crossed_batch(X, lengths, hi, alpha, deltas, boost)
        if not c.any():
            break
        lo = np.where(c, hi, lo)
        width = np.where(c, 2 * width, width)
        hi = np.where(c, hi + width, hi)
    else:
        open_ended = crossed_batch(X, lengths, hi, alpha, deltas, boost)
    while True:
        act = (hi - lo > tol) & ~open_ended
        if not act.any():
            break
        idx = np.flatnonzero(act)
        mid = 0.5 * (lo[idx] + hi[idx])
        c = crossed_batch(X[idx], lengths[idx], mid, alpha, deltas, boost)
        lo[idx] = np.where(c, mid, lo[idx])
        hi[idx] = np.where(c, hi[idx], mid)
    return np.where(open_ended, np.inf, lo)


def boosted_lower_bound(x, alpha, delta, tol=1e-6, boost=True) -> float:
    """Lower bound after observing the prefix ``x``; ``boost=False`` gives the unboosted bound."""
    check_alpha(alpha)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    d = delta_schedule(delta, x.shape[1])
    return float(lower_bounds_batch(x, [x.shape[1]], alpha, d, tol, boost)[0])


def boosted_upper_bound(x, alpha, delta, tol=1e-6, boost=True) -> float:
    """Upper bound by reflection: ``u(x) = -l(-x)``."""
    return -boosted_lower_bound(-np.asarray(x, dtype=float), alpha, delta, tol, boost)


def confidence_sequence(x, config: ConfSeqConfig = ConfSeqConfig()) -> BoundTrajectory:
    """Bounds at every time ``t = 1..len(x)`` for one data stream."""
    x = np.asarray(x, dtype=float)
    T = x.size
    a = config.side_alpha
    d = delta_schedule(config.delta, T)
    X = np.broadcast_to(x, (T, T))
    lengths = np.arange(1, T + 1)
    t = lengths.astype(float)
    mean = np.cumsum(x) / t
    lower = np.full(T, -np.inf)
    upper = np.full(T, np.inf)
    rl = np.full(T, -np.inf)
    ru = np.full(T, np.inf)
    if config.side in ("lower", "two-sided"):
        lower = lower_bounds_batch(X, lengths, a, d, config.bisection_tol, config.boost)
        rl = (np.cumsum(d * x) - np.cumsum(d**2) / 2 - np.log(1.0 / a)) / np.cumsum(d)
    if config.side in ("upper", "two-sided"):
        upper = -lower_bounds_batch(-X, lengths, a, d, config.bisection_tol, config.boost)
        ru = (np.cumsum(d * x) + np.cumsum(d**2) / 2 + np.log(1.0 / a)) / np.cumsum(d)
    return BoundTrajectory(lengths, mean, lower, upper, rl, ru)


def coverage_failures(X, mu_star, alpha, delta, boost=True):
    """Per path: did the lower bound ever exceed ``mu_star``?

    By monotonicity this is the event that the martingale for ``mu_star``
    crossed ``1/alpha`` within the horizon, so a single replay per path decides it.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = delta_schedule(delta, X.shape[1])
    return crossed_batch(X, X.shape[1], np.full(X.shape[0], float(mu_star)), alpha, d, boost)
