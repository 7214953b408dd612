"""Boosted betting test for the mean of a finite binary population sampled without replacement.

Under ``H_0: mu* = mu0`` the next draw is 1 with conditional probability
``C_i = (N mu0 - S_{i-1}) / (N - i + 1)``, so ``1 + lambda_i (X_i - C_i)`` is
a two-atom factor with conditional null mean exactly one, and its boost has a
closed form. For the composite null ``mu* <= mu0`` the boundary is the
least favourable case, so the same boost is used.

Endpoints of the conditional mean:

* ``C < 0``: no population with mean ``mu0`` fits the data, reject at once.
* ``C = 0``: the null forces every remaining draw to be 0; a 1 refutes it
  and a 0 leaves the wealth unchanged.
* ``C >= 1``: the null forces (at least) all ones; the bet is 0.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from .process import Mode, ProcessState, Status, StopRule, check_alpha, reaches_cap, step
from .solver import closed_form_binary_boost_batch
from .sprt import REJECT, MethodRun, StepLog, TestOutcome, _to_decision, _truncated

C_EPS = 1e-12


def conditional_mean(N: int, mu0: float, draws_so_far: int, sum_so_far: int) -> float:
    if draws_so_far >= N:
        raise ValueError("the population is exhausted")
    if not 0 <= sum_so_far <= draws_so_far:
        raise ValueError("need 0 <= sum_so_far <= draws_so_far")
    return (N * mu0 - sum_so_far) / (N - draws_so_far)


def rilacs_bet(C: float, mu1: float) -> float:
    """``min(1/C, 2(2 mu1 - 1))``, floored at 0 (no bet for ``mu1 <= 1/2``)."""
    if C <= 0:
        raise ValueError("the bet is undefined for C <= 0 (the null is already decided)")
    return max(min(1.0 / C, 2.0 * (2.0 * mu1 - 1.0)), 0.0)


@dataclass
class WorState:
    N: int
    mu0: float
    mu1: float
    draws_so_far: int = 0
    sum_so_far: int = 0
    process: ProcessState = field(default_factory=ProcessState)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be positive")
        if not 0.0 <= self.mu0 <= 1.0:
            raise ValueError("mu0 must lie in [0, 1]")

    @property
    def C(self) -> float:
        return conditional_mean(self.N, self.mu0, self.draws_so_far, self.sum_so_far)


def _factor(x, C, lam):
    """Betting factor with the C = 0 endpoint handled (1 -> infinite evidence, 0 -> 1)."""
    zero = np.abs(C) <= C_EPS
    with np.errstate(invalid="ignore"):
        f = 1.0 + lam * (x - C)
    return np.where(zero, np.where(x == 1, np.inf, 1.0), f)


def _bet(C, mu1):
    lam1 = max(2.0 * (2.0 * mu1 - 1.0), 0.0)
    with np.errstate(divide="ignore"):
        return np.where((C > C_EPS) & (C < 1.0), np.minimum(1.0 / np.where(C > 0, C, 1.0), lam1), 0.0)


def run_wor_boosted(
    draws: Iterable[int],
    N: int,
    mu0: float,
    mu1: float,
    alpha: float,
    with_boost: bool = True,
    bet: Optional[Callable[[float, float], float]] = None,
    log_steps: bool = False,
) -> TestOutcome:
    """Sequential audit on the draws in order.

    ``bet(C, mu1)`` may replace the default rule; it must return a value in
    ``[0, 1/C]``. The test stops at ``1/alpha`` or when the population is
    exhausted (then the census decides: reject iff the total exceeds ``N mu0``).
    """
    check_alpha(alpha)
    rule = StopRule(Mode.POWER_ONE, alpha)
    st = WorState(N, mu0, mu1)
    cap = 1.0 / alpha
    log = [] if log_steps else None
    state = st.process
    for x in itertools.islice(draws, N + 1):
        if st.draws_so_far >= N:
            raise ValueError(f"more than N={N} draws supplied")
        x = int(x)
        if x not in (0, 1):
            raise ValueError("draws must be 0 or 1")
        C = st.C
        if C < -C_EPS:
            state = replace(state, wealth=cap, status=Status.REJECT_NULL)
            break
        if abs(C) <= C_EPS or C >= 1.0:
            lam = 0.0
        else:
            lam = rilacs_bet(C, mu1) if bet is None else float(bet(C, mu1))
            if not 0.0 <= lam <= 1.0 / C * (1 + 1e-12):
                raise ValueError("bets must lie in [0, 1/C]")
        L = float(_factor(np.float64(x), C, lam))
        b = 1.0
        if with_boost and 0.0 < C < 1.0 and lam > 0 and np.isfinite(L):
            b = float(closed_form_binary_boost_batch(C, lam, state.wealth, alpha))
        f = _truncated(b * L, state.wealth, 0.0, alpha)
        state = step(state, f, rule, raw_factor=L, boost=b)
        st.draws_so_far += 1
        st.sum_so_far += x
        if log is not None:
            log.append(StepLog(state.t, b, 1.0, 0.0, state.wealth))
        if state.stopped:
            break
    if not state.stopped and st.draws_so_far == N and st.sum_so_far > N * mu0 + C_EPS:
        state = replace(state, wealth=cap, status=Status.REJECT_NULL)
    st.process = state
    return TestOutcome(
        decision=_to_decision(state.status),
        stopping_time=state.t,
        raw_lr_at_stop=state.raw_wealth,
        boosted_wealth_at_stop=state.wealth,
        log=log,
    )


def population(N: int, ones: int) -> np.ndarray:
    if not 0 <= ones <= N:
        raise ValueError("need 0 <= ones <= N")
    return np.r_[np.ones(ones), np.zeros(N - ones)]


def shuffled_populations(pop, rngs) -> np.ndarray:
    """One independent draw order per generator, shape ``(len(rngs), N)``."""
    pop = np.asarray(pop, dtype=float)
    return np.stack([rng.permutation(pop) for rng in rngs]) if len(rngs) else np.empty((0, pop.size))


@dataclass
class WorSim:
    methods: dict
    final_wealth: np.ndarray
    max_abs_null_mean_error: float = 0.0
    violations: dict = field(default_factory=dict)


def simulate_wor(draws: np.ndarray, mu0: float, mu1: float, alpha: float, max_samples: Optional[int] = None) -> WorSim:
    """Boosted and plain audits on the same draw orders (rows of ``draws``).

    ``final_wealth`` is the boosted wealth at ``min(tau, max_samples)``.
    ``max_abs_null_mean_error`` is the largest deviation from one of the
    factor's exact two-atom null mean over all steps taken.
    """
    check_alpha(alpha)
    draws = np.asarray(draws, dtype=float)
    R, N = draws.shape
    horizon = N if max_samples is None else min(N, max_samples)
    cap = 1.0 / alpha
    runs = {k: MethodRun.empty(R, horizon) for k in ("boosted", "plain")}
    W = {"boosted": np.ones(R), "plain": np.ones(R)}
    running = {k: np.ones(R, dtype=bool) for k in runs}
    S = np.zeros(R)
    err = 0.0
    viol = {"tau_boost_gt_tau_plain": 0, "overshoot": 0, "wealth_below_plain": 0}
    for i in range(horizon):
        act = running["boosted"] | running["plain"]
        idx = np.flatnonzero(act)
        if idx.size == 0:
            break
        C = (N * mu0 - S[idx]) / (N - i)
        x = draws[idx, i]
        lam = _bet(C, mu1)
        inner = (C > C_EPS) & (C < 1.0)
        err = max(err, float(np.max(np.abs(np.where(inner, C * (1 + lam * (1 - C)) + (1 - C) * (1 - lam * C) - 1, 0.0)), initial=0.0)))
        L = _factor(x, C, lam)
        neg = C < -C_EPS
        for k in runs:
            r = running[k][idx]
            ii = idx[r]
            if k == "boosted":
                b = np.where(inner[r] & (lam[r] > 0), closed_form_binary_boost_batch(np.where(inner[r], C[r], 0.5), lam[r], W[k][ii], alpha), 1.0)
            else:
                b = 1.0
            with np.errstate(invalid="ignore"):
                cand = np.minimum(W[k][ii] * b * L[r], cap)
            cand = np.where(W[k][ii] > 0, cand, 0.0)
            hit = reaches_cap(cand, alpha) | neg[r]
            W[k][ii] = np.where(hit, cap, cand)
            viol["overshoot"] += int(np.sum(W[k][ii] > cap))
            # a refuted null stops before the draw
            runs[k].stop(ii[neg[r]], i, REJECT, 0.0)
            runs[k].stop(ii[hit & ~neg[r]], i + 1, REJECT, 0.0)
            running[k][ii[hit]] = False
        still = running["plain"]
        viol["wealth_below_plain"] += int(np.sum(still & (W["boosted"] < W["plain"] * (1 - 1e-12))))
        S[idx] += x
    if horizon == N:
        census = S > N * mu0 + C_EPS
        for k in runs:
            late = running[k] & census
            runs[k].stop(np.flatnonzero(late), N, REJECT, 0.0)
            running[k][late] = False
    viol["tau_boost_gt_tau_plain"] = int(np.sum(runs["boosted"].tau > runs["plain"].tau))
    return WorSim(runs, W["boosted"], err, viol)


def read_population(path) -> np.ndarray:
    """Read a newline-delimited 0/1 file (draw order = line order)."""
    p = Path(path)
    vals = []
    for n, line in enumerate(p.read_text().splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s not in ("0", "1"):
            raise ValueError(f"{p}:{n}: expected 0 or 1, got {s!r}")
        vals.append(int(s))
    return np.array(vals, dtype=int)
