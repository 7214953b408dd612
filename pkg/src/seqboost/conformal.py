"""Testing exchangeability with conformal p-values and boosted power bets.

Under exchangeability, conformal p-values with independent uniform tie-breaks
are i.i.d. uniform, so ``prod f(p_i)`` is a test martingale for any density
``f`` on [0, 1]. With the power bet ``f(u) = kappa u^(kappa - 1)`` the factor
``L = f(U)`` has a simple law: ``L <= y`` exactly when ``U >= u0(y)``, with
``u0(y) = min((y/kappa)^(1/(kappa-1)), 1)``. That gives the partial mean
``E[L; L <= y] = 1 - u0(y)^kappa`` needed by the boost solver.
"""

from __future__ import annotations

import abc
import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Union

import numpy as np

from .models import ContinuousFactorModel
from .process import Mode, ProcessState, StopRule, check_alpha, step
from .rng import path_seed
from .solver import BoostResult, boost_batch, solve_boost_one_sided
from .sprt import REJECT, MethodRun, StepLog, TestOutcome, _to_decision, _Tracker, _truncated


def conformal_p(scores, tie_break: float) -> float:
    """Conformal p-value of the last score among ``scores``.

    ``(#{z_i > z_t} + tie_break * #{z_i == z_t}) / t``; the count of ties includes ``z_t`` itself.
    """
    z = np.asarray(scores, dtype=float)
    if z.ndim != 1 or z.size < 1:
        raise ValueError("need at least one score")
    zt = z[-1]
    return float((np.sum(z > zt) + tie_break * np.sum(z == zt)) / z.size)


def conformal_p_batch(scores, tie_break):
    """Row-wise conformal p-values of the last column of ``scores`` (shape ``(R, t)``)."""
    z = np.atleast_2d(scores)
    zt = z[:, -1:]
    return (np.sum(z > zt, axis=1) + tie_break * np.sum(z == zt, axis=1)) / z.shape[1]


def power_bet(u, kappa):
    """``kappa * u^(kappa - 1)``; ``u = 0`` gives ``inf``."""
    if not (0.0 < np.min(kappa) and np.max(kappa) < 1.0):
        raise ValueError("kappa must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("u must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        out = kappa * u ** (np.asarray(kappa) - 1.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PowerBetModel(ContinuousFactorModel):
    """Null law of ``kappa U^(kappa - 1)`` with ``U`` uniform on [0, 1]."""

    kappa: float = 0.5

    def __post_init__(self):
        k = np.asarray(self.kappa)
        if np.any(k <= 0) or np.any(k >= 1):
            raise ValueError("kappa must lie in (0, 1)")

    def _u0(self, y):
        k = np.asarray(self.kappa, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            u0 = (y / k) ** (1.0 / (k - 1.0))
        return np.clip(u0, 0.0, 1.0)

    def subset(self, idx):
        k = np.asarray(self.kappa)
        return PowerBetModel(k[idx]) if k.ndim else self

    def factor(self, u):
        return power_bet(u, self.kappa)

    def null_cdf(self, y):
        return 1.0 - self._u0(y)

    def null_sf(self, y):
        return self._u0(y)

    def partial_mean(self, y):
        return 1.0 - self._u0(y) ** np.asarray(self.kappa, dtype=float)


def solve_conformal_boost(kappa: float, M: float, alpha: float, tol: float = 1e-9) -> BoostResult:
    return solve_boost_one_sided(PowerBetModel(kappa), M, alpha, tol)


class NonconformityMeasure(abc.ABC):
    """Maps ``x_1..x_t`` (last axis) to scores ``z_1..z_t``, equivariantly under permutations."""

    @abc.abstractmethod
    def __call__(self, x): ...


class DistanceToMean(NonconformityMeasure):
    """``z_i = |x_i - mean of the other points|`` (0 for a single point)."""

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        t = x.shape[-1]
        if t == 1:
            return np.zeros_like(x)
        others = (np.sum(x, axis=-1, keepdims=True) - x) / (t - 1)
        return np.abs(x - others)


@dataclass(frozen=True)
class ConformalConfig:
    kappa: Union[float, Callable[[int], float]] = 0.5
    alpha: float = 0.05
    tie_break_seed: int = 0
    boost: bool = True

    def __post_init__(self):
        check_alpha(self.alpha)

    def kappa_at(self, t: int) -> float:
        k = float(self.kappa(t)) if callable(self.kappa) else float(self.kappa)
        if not 0.0 < k < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        return k


def tie_break_stream(seed: int, trial: int = 0):
    rng = np.random.default_rng(path_seed(seed, 0, trial, "tiebreak"))
    while True:
        yield from rng.random(256)


def run_conformal_boosted(
    observations: Iterable[float],
    measure: Optional[NonconformityMeasure] = None,
    config: ConformalConfig = ConformalConfig(),
    max_samples: int = 10_000,
    tie_breaks: Optional[Iterable[float]] = None,
    log_steps: bool = False,
) -> TestOutcome:
    """Boosted conformal test martingale on a numeric stream."""
    measure = DistanceToMean() if measure is None else measure
    tie_breaks = iter(tie_break_stream(config.tie_break_seed) if tie_breaks is None else tie_breaks)
    rule = StopRule(Mode.POWER_ONE, config.alpha, max_samples=max_samples)
    alpha = config.alpha
    state = ProcessState()
    track = _Tracker(log_steps)
    xs = []
    for t, x in enumerate(itertools.islice(observations, max_samples), start=1):
        xs.append(float(x))
        p = conformal_p(measure(np.array(xs)), float(next(tie_breaks)))
        k = config.kappa_at(t)
        L = power_bet(p, k)
        b = 1.0
        if config.boost and state.wealth > 0:
            res = boost_batch(PowerBetModel(k), np.array([state.wealth]), alpha)
            track.note(res)
            b = float(res.b[0])
        f = _truncated(b * L, state.wealth, 0.0, alpha)
        state = step(state, f, rule, raw_factor=L, boost=b)
        track.record(t, b, 1.0, 0.0, state.wealth)
        if state.stopped:
            break
    return TestOutcome(
        decision=_to_decision(state.status),
        stopping_time=state.t,
        raw_lr_at_stop=state.raw_wealth,
        boosted_wealth_at_stop=state.wealth,
        log=track.log,
        fallbacks=track.fallbacks,
        max_expectation=track.max_e,
    )


@dataclass
class ConformalSim:
    methods: dict
    final_wealth: np.ndarray
    pvalues: np.ndarray
    fallbacks: int = 0
    max_expectation: float = float("nan")
    violations: dict = None


def simulate_conformal(X, tie, kappa: float, alpha: float, measure: Optional[NonconformityMeasure] = None) -> ConformalSim:
    """Boosted and plain conformal martingales on the rows of ``X`` (paired, same tie-breaks).

    Runs to the full horizon ``X.shape[1]``; ``final_wealth`` is the boosted
    wealth there (``1/alpha`` for stopped paths) and ``pvalues`` holds every
    p-value computed.
    """
    check_alpha(alpha)
    measure = DistanceToMean() if measure is None else measure
    X = np.atleast_2d(np.asarray(X, dtype=float))
    tie = np.atleast_2d(np.asarray(tie, dtype=float))
    R, T = X.shape
    cap = 1.0 / alpha
    model = PowerBetModel(kappa)
    runs = {k: MethodRun.empty(R, T) for k in ("boosted", "plain")}
    W = {"boosted": np.ones(R), "plain": np.ones(R)}
    running = {k: np.ones(R, dtype=bool) for k in runs}
    P = np.empty((R, T))
    fb, mx = 0, float("nan")
    viol = {"tau_boost_gt_tau_plain": 0, "overshoot": 0, "wealth_below_plain": 0}
    for t in range(T):
        P[:, t] = conformal_p_batch(measure(X[:, : t + 1]), tie[:, t])
        L = power_bet(P[:, t], kappa)
        for k in runs:
            ii = np.flatnonzero(running[k])
            if ii.size == 0:
                continue
            b = 1.0
            if k == "boosted":
                live = W[k][ii] > 0
                res = boost_batch(model, np.where(live, W[k][ii], 0.0), alpha)
                fb += int(np.sum(res.fallback))
                if np.any(np.isfinite(res.expectation)):
                    mx = float(np.nanmax([mx, np.nanmax(res.expectation)]))
                b = res.b
            with np.errstate(invalid="ignore"):
                cand = np.where(W[k][ii] > 0, np.minimum(W[k][ii] * b * L[ii], cap), 0.0)
            hit = cand >= cap * (1 - 1e-12)
            W[k][ii] = np.where(hit, cap, cand)
            viol["overshoot"] += int(np.sum(W[k][ii] > cap))
            runs[k].stop(ii[hit], t + 1, REJECT, 0.0)
            running[k][ii[hit]] = False
        still = running["plain"]
        viol["wealth_below_plain"] += int(np.sum(still & (W["boosted"] < W["plain"] * (1 - 1e-12))))
    viol["tau_boost_gt_tau_plain"] = int(np.sum(runs["boosted"].tau > runs["plain"].tau))
    return ConformalSim(runs, W["boosted"], P, fb, mx, viol)
