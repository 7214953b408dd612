"""Runnable sequential tests: boosted power-one and two-sided SPRTs and their baselines.

Two layers live here:

* scalar runners (``run_*``) that consume an iterable of observations and go
  through :func:`seqboost.process.step` one observation at a time, and
* batch simulators (``simulate_*``) that advance thousands of paths in lock
  step on paired streams, so boosted and unboosted tests see identical data.

The batch simulators work in log space so that long null paths cannot
underflow; they are checked against the scalar runners in the test suite.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .models import (
    DiscreteFactorModel,
    FactorModel,
    GaussianLRModel,
    plugin_theta,
    truncated_expectation,
)
from .process import (
    _CAP_RTOL,
    Mode,
    ProcessState,
    Status,
    StopRule,
    check_alpha,
    step,
    truncate_two_sided,
)
from .solver import boost_batch, coupled_boost_batch

LOG_CAP_SLACK = np.log1p(-_CAP_RTOL)


class Decision(enum.Enum):
    REJECT_NULL = "reject_null"
    ACCEPT_NULL = "accept_null"
    UNDECIDED = "undecided"


@dataclass
class StepLog:
    t: int
    b: float
    b_inv: float
    nu: float
    wealth: float


@dataclass
class TestOutcome:
    decision: Decision
    stopping_time: int
    raw_lr_at_stop: float
    boosted_wealth_at_stop: float
    log: Optional[list] = None
    fallbacks: int = 0
    max_expectation: float = float("nan")
    inverse_wealth_at_stop: float = float("nan")

    __test__ = False  # not a pytest class


def log_factor(model: FactorModel, x):
    if hasattr(model, "log_factor"):
        return model.log_factor(x)
    with np.errstate(divide="ignore"):
        return np.log(model.factor(x))


def _to_decision(status: Status) -> Decision:
    if status is Status.REJECT_NULL:
        return Decision.REJECT_NULL
    if status is Status.ACCEPT_NULL:
        return Decision.ACCEPT_NULL
    return Decision.UNDECIDED


def _truncated(x, M, nu, alpha):
    # the process never asks for a factor at M <= 0 except after underflow, where any factor gives 0
    if M <= 0:
        return 0.0
    return truncate_two_sided(x, M, nu, alpha)


class _Tracker:
    def __init__(self, log_steps):
        self.log = [] if log_steps else None
        self.fallbacks = 0
        self.max_e = float("nan")

    def note(self, batch):
        self.fallbacks += int(np.sum(batch.fallback))
        e = np.asarray(batch.expectation, dtype=float)
        if np.any(np.isfinite(e)):
            self.max_e = float(np.nanmax([self.max_e, np.nanmax(e)]))

    def record(self, t, b, b_inv, nu, wealth):
        if self.log is not None:
            self.log.append(StepLog(t, float(b), float(b_inv), float(nu), float(wealth)))


def _one_sided(observations, model_at, alpha, max_samples, boost, log_steps):
    rule = StopRule(Mode.POWER_ONE, alpha, max_samples=max_samples)
    state = ProcessState()
    track = _Tracker(log_steps)
    log_raw = 0.0
    prefix = 0.0
    for t, x in enumerate(itertools.islice(observations, max_samples), start=1):
        model = model_at(t, prefix)
        b = 1.0
        if boost and state.wealth > 0:
            res = boost_batch(model, np.array([state.wealth]), alpha)
            track.note(res)
            b = float(res.b[0])
        lf = float(log_factor(model, x))
        L = float(np.exp(lf))
        f = _truncated(b * L, state.wealth, 0.0, alpha)
        state = step(state, f, rule, raw_factor=L, boost=b)
        log_raw += lf
        prefix += float(x)
        track.record(t, b, 1.0, 0.0, state.wealth)
        if state.stopped:
            break
    return TestOutcome(
        decision=_to_decision(state.status),
        stopping_time=state.t,
        raw_lr_at_stop=float(np.exp(log_raw)),
        boosted_wealth_at_stop=state.wealth,
        log=track.log,
        fallbacks=track.fallbacks,
        max_expectation=track.max_e,
    )


def run_power_one_boosted(
    observations: Iterable,
    model: FactorModel,
    alpha: float,
    max_samples: int = 10_000,
    boost: bool = True,
    log_steps: bool = False,
) -> TestOutcome:
    """Boosted power-one SPRT of ``model``'s null; ``boost=False`` gives the plain SPRT."""
    check_alpha(alpha)
    return _one_sided(observations, lambda t, s: model, alpha, max_samples, boost, log_steps)


def run_power_one_plugin(
    observations: Iterable,
    theta0: float,
    alpha: float,
    max_samples: int = 10_000,
    plugin: Callable[[int, float, float], float] = plugin_theta,
    boost: bool = True,
    log_steps: bool = False,
) -> TestOutcome:
    """Power-one test of ``N(theta0, 1)`` against larger means with a predictable plugin.

    ``plugin(t, sum of X_1..X_{t-1}, theta0)`` must return a value ``>= theta0``.
    """
    check_alpha(alpha)

    def model_at(t, prefix):
        theta = plugin(t, prefix, theta0)
        if theta < theta0:
            raise ValueError("plugin values must be >= theta0")
        return GaussianLRModel(mu0=theta0, delta=theta - theta0)

    return _one_sided(observations, model_at, alpha, max_samples, boost, log_steps)


def run_two_sided_boosted(
    observations: Iterable,
    model: FactorModel,
    alpha: float,
    beta: float,
    max_samples: int = 10_000,
    log_steps: bool = False,
) -> TestOutcome:
    """Boosted SPRT with simultaneous type I (``alpha``) and type II (``beta``) control.

    A forward process tests the null and an inverse process (the reciprocal
    likelihood ratio under the alternative) tests the alternative; the pair of
    boosts is solved jointly at every step.
    """
    rule = StopRule(Mode.TWO_SIDED_COUPLED, alpha, beta, max_samples=max_samples)
    inv_model = model.inverse()
    state = ProcessState()
    M_inv = 1.0
    track = _Tracker(log_steps)
    log_raw = 0.0
    for t, x in enumerate(itertools.islice(observations, max_samples), start=1):
        r = coupled_boost_batch(
            model,
            np.array([state.wealth]),
            np.array([min(M_inv, np.nextafter(1.0 / beta, 0.0))]),
            alpha,
            beta,
            state.boost_cumprod,
            state.inv_boost_cumprod,
            inv_model=inv_model,
        )
        track.fallbacks += int(r.fallback[0])
        track.max_e = float(np.nanmax([track.max_e, r.expectation[0], r.expectation_inv[0]]))
        b, b_inv, nu, nu_inv = float(r.b[0]), float(r.b_inv[0]), float(r.nu[0]), float(r.nu_inv[0])
        lf = float(log_factor(model, x))
        L = float(np.exp(lf))
        f = _truncated(b * L, state.wealth, nu, alpha)
        g = _truncated(b_inv * float(np.exp(-lf)), M_inv, nu_inv, beta)
        state = step(state, f, rule, raw_factor=L, boost=b, inv_boost=b_inv, nu=nu)
        M_inv *= g
        log_raw += lf
        track.record(t, b, b_inv, nu, state.wealth)
        if state.stopped:
            break
    return TestOutcome(
        decision=_to_decision(state.status),
        stopping_time=state.t,
        raw_lr_at_stop=float(np.exp(log_raw)),
        boosted_wealth_at_stop=state.wealth,
        log=track.log,
        fallbacks=track.fallbacks,
        max_expectation=track.max_e,
        inverse_wealth_at_stop=M_inv,
    )


def futility_randomization(M: float, model: DiscreteFactorModel, b_star: float, nu: float, alpha: float):
    """Return ``(a_t, threshold)`` for the randomized futility stop.

    ``a_t`` spreads the unused null mass ``1 - E_0[T]`` over the futility
    event; a futility hit is converted into a rejection when a uniform draw
    falls below ``threshold = alpha * a_t * M``.
    """
    if model.continuous:
        raise ValueError("randomized futility only applies to discrete factor models")
    e = truncated_expectation(model, b_star, M, alpha, nu)
    v, p, _ = model.atoms()
    x = np.where(v == 0, 0.0, b_star * v)
    p_fut = float(np.sum(np.where(M * x <= nu, p, 0.0), axis=-1))
    if p_fut <= 0:
        raise ValueError("the futility event has null probability 0; nothing to randomize")
    a = max(1.0 - e, 0.0) / p_fut
    return a, alpha * a * M


def randomized_futility_accept(state, model, b_star, nu, alpha, uniform_draw) -> Decision:
    """Resolve a futility hit: reject iff ``uniform_draw <= alpha * a_t * M_{t-1}``.

    ``state`` is the process state before the step (or its wealth).
    """
    M = state.wealth if isinstance(state, ProcessState) else float(state)
    if not 0.0 <= uniform_draw <= 1.0:
        raise ValueError("uniform_draw must lie in [0, 1]")
    _, threshold = futility_randomization(M, model, b_star, nu, alpha)
    return Decision.REJECT_NULL if uniform_draw <= threshold else Decision.ACCEPT_NULL


def run_two_sided_fixed_nu(
    observations: Iterable,
    model: FactorModel,
    alpha: float,
    nu_m,
    max_samples: int = 10_000,
    couple: bool = True,
    randomized_futility: bool = False,
    uniforms: Optional[Iterable[float]] = None,
    log_steps: bool = False,
) -> TestOutcome:
    """Boosted test with a futility stop.

    With ``couple=True`` the floor is ``min(nu_m(t) * prod b_i, 1/alpha)``,
    which keeps the stopping time no later than that of the unboosted process
    stopped at ``nu_m(t)``; otherwise ``nu_m(t)`` is used directly.
    ``randomized_futility`` (discrete models) turns part of each futility hit
    back into a rejection using the draws in ``uniforms``.
    """
    rule = StopRule(Mode.TWO_SIDED_FIXED_NU, alpha, nu_schedule=nu_m, max_samples=max_samples)
    if randomized_futility:
        if model.continuous:
            raise ValueError("randomized futility only applies to discrete factor models")
        if uniforms is None:
            raise ValueError("randomized futility needs a source of uniform draws")
        uniforms = iter(uniforms)
    state = ProcessState()
    track = _Tracker(log_steps)
    log_raw = 0.0
    cap = 1.0 / alpha
    for t, x in enumerate(itertools.islice(observations, max_samples), start=1):
        nm = rule.nu_m(t)
        if not 0.0 <= nm <= cap:
            raise ValueError("nu_m(t) must lie in [0, 1/alpha]")
        nu_fixed, nu_rate = (0.0, nm * state.boost_cumprod) if couple else (nm, 0.0)
        res = boost_batch(model, np.array([state.wealth]), alpha, nu=nu_fixed, nu_rate=nu_rate)
        track.note(res)
        b = float(res.b[0])
        nu = min(nu_fixed + nu_rate * b, cap)
        lf = float(log_factor(model, x))
        L = float(np.exp(lf))
        prev = state
        f = _truncated(b * L, state.wealth, nu, alpha)
        state = step(state, f, rule, raw_factor=L, boost=b, nu=nu, randomized_futility=randomized_futility)
        if state.status is Status.ACCEPT_PENDING_RANDOMIZATION:
            d = randomized_futility_accept(prev, model, b, nu, alpha, float(next(uniforms)))
            if d is Decision.REJECT_NULL:
                state = replace(state, wealth=cap, status=Status.REJECT_NULL)
            else:
                state = replace(state, status=Status.ACCEPT_NULL)
        log_raw += lf
        track.record(t, b, 1.0, nu, state.wealth)
        if state.stopped:
            break
    return TestOutcome(
        decision=_to_decision(state.status),
        stopping_time=state.t,
        raw_lr_at_stop=float(np.exp(log_raw)),
        boosted_wealth_at_stop=state.wealth,
        log=track.log,
        fallbacks=track.fallbacks,
        max_expectation=track.max_e,
    )


def run_baseline(observations: Iterable, model: FactorModel, rule: StopRule, max_samples: Optional[int] = None) -> TestOutcome:
    """Unboosted likelihood-ratio test against the fixed thresholds of ``rule``."""
    g0, g1 = rule.thresholds()
    two_sided = rule.mode is not Mode.POWER_ONE
    lg1 = np.log(g1) + LOG_CAP_SLACK
    lg0 = np.log(g0) if g0 > 0 else -np.inf
    n_max = rule.max_samples if max_samples is None else max_samples
    log_raw = 0.0
    t = 0
    decision = Decision.UNDECIDED
    for t, x in enumerate(itertools.islice(observations, n_max), start=1):
        log_raw += float(log_factor(model, x))
        if log_raw >= lg1:
            decision = Decision.REJECT_NULL
            break
        if two_sided and log_raw <= lg0:
            decision = Decision.ACCEPT_NULL
            break
    lr = float(np.exp(log_raw))
    return TestOutcome(decision, t, lr, lr)


# ---------------------------------------------------------------------------
# batch simulation on paired streams

REJECT, ACCEPT, UNDECIDED = 1, -1, 0


@dataclass
class MethodRun:
    """Per-path outcome arrays for one method."""

    tau: np.ndarray
    decision: np.ndarray
    log_lr: np.ndarray

    @classmethod
    def empty(cls, n, max_samples):
        return cls(np.full(n, max_samples, dtype=np.int64), np.zeros(n, dtype=np.int8), np.zeros(n))

    def stop(self, idx, t, code, log_lr):
        self.tau[idx] = t
        self.decision[idx] = code
        self.log_lr[idx] = log_lr


@dataclass
class SimResult:
    methods: dict
    final_log_wealth: np.ndarray
    fallbacks: int = 0
    max_expectation: float = float("nan")
    violations: dict = field(default_factory=dict)


def _note(res, fb, mx, *arrays):
    fb += int(np.sum(res.fallback))
    for e in arrays:
        e = np.asarray(e)
        if e.size and np.any(np.isfinite(e)):
            mx = float(np.nanmax([mx, np.nanmax(e)]))
    return fb, mx


def _simulate_one_sided(model_at, alpha, stream, n, max_samples, boost, check_dominance=True):
    log_cap = np.log(1.0 / alpha)
    hit = log_cap + LOG_CAP_SLACK
    boosted = MethodRun.empty(n, max_samples)
    plain = MethodRun.empty(n, max_samples)
    logW = np.zeros(n)
    logR = np.zeros(n)
    prefix = np.zeros(n)
    run_b = np.ones(n, dtype=bool)
    run_p = np.ones(n, dtype=bool)
    fb, mx = 0, float("nan")
    viol = {"tau_boost_gt_tau_plain": 0, "wealth_below_raw": 0, "overshoot": 0}
    for t in range(1, max_samples + 1):
        idx = np.flatnonzero(run_b | run_p)
        if idx.size == 0:
            break
        x = stream.draw(idx)
        lf = log_factor(model_at(idx, t, prefix[idx]), x)
        ib = run_b[idx]
        sub = idx[ib]
        if sub.size:
            if boost:
                res = boost_batch(model_at(sub, t, prefix[sub]), np.exp(logW[sub]), alpha)
                fb, mx = _note(res, fb, mx, res.expectation)
                logb = np.log(res.b)
            else:
                logb = 0.0
            # M * T(bL; M) = min(M b L, 1/alpha)
            cand = logW[sub] + logb + lf[ib]
            stopped = cand >= hit
            logW[sub] = np.where(stopped, log_cap, cand)
            viol["overshoot"] += int(np.sum(logW[sub] > log_cap + 1e-12))
            done = sub[stopped]
            boosted.stop(done, t, REJECT, logR[done] + lf[ib][stopped])
            run_b[done] = False
        logR[idx] += lf
        prefix[idx] += x
        ip = idx[run_p[idx]]
        crossed = logR[ip] >= hit
        plain.stop(ip[crossed], t, REJECT, logR[ip[crossed]])
        run_p[ip[crossed]] = False
        if check_dominance:
            still = ip[~crossed]
            tol = 1e-9 * np.maximum(1.0, np.abs(logR[still]))
            viol["wealth_below_raw"] += int(np.sum(logW[still] < logR[still] - tol))
    for m in (boosted, plain):
        und = m.decision == UNDECIDED
        m.log_lr[und] = logR[und]
    viol["tau_boost_gt_tau_plain"] = int(np.sum(boosted.tau > plain.tau))
    return SimResult({"boosted": boosted, "plain": plain}, logW, fb, mx, viol)


def simulate_power_one(model: FactorModel, alpha, stream, n, max_samples=10_000, boost=True) -> SimResult:
    """Boosted and plain power-one SPRTs on the same ``n`` streams.

    ``stream.draw(idx)`` supplies the next observation of each listed path.
    ``final_log_wealth`` is the boosted log-wealth at ``min(tau, max_samples)``.
    """
    check_alpha(alpha)
    return _simulate_one_sided(lambda idx, t, s: model, alpha, stream, n, max_samples, boost)


def simulate_power_one_plugin(theta0, alpha, stream, n, max_samples=10_000, boost=True) -> SimResult:
    """Plugin version of :func:`simulate_power_one` for ``N(theta0, 1)`` data."""
    check_alpha(alpha)

    def model_at(idx, t, prefix):
        theta = np.maximum((theta0 + prefix) / t, theta0)
        return GaussianLRModel(mu0=theta0, delta=theta - theta0)

    return _simulate_one_sided(model_at, alpha, stream, n, max_samples, boost)


def simulate_two_sided(
    model: GaussianLRModel,
    alpha,
    beta,
    stream,
    n,
    max_samples=10_000,
    baselines=("wald_approx", "wald_conservative", "siegmund"),
) -> SimResult:
    """Coupled boosted two-sided SPRT plus fixed-threshold baselines on the same streams."""
    check_alpha(alpha)
    check_alpha(beta)
    inv_model = model.inverse()
    log_cap, log_cap_inv = np.log(1.0 / alpha), np.log(1.0 / beta)
    hit, hit_inv = log_cap + LOG_CAP_SLACK, log_cap_inv + LOG_CAP_SLACK
    modes = {"wald_approx": Mode.WALD_APPROX, "wald_conservative": Mode.WALD_CONSERVATIVE, "siegmund": Mode.SIEGMUND}
    bounds = {}
    for name in baselines:
        rule = StopRule(modes[name], alpha, beta, mu1=float(np.asarray(model.delta)))
        g0, g1 = rule.thresholds()
        bounds[name] = (np.log(g0), np.log(g1) + LOG_CAP_SLACK)
    runs = {k: MethodRun.empty(n, max_samples) for k in ("boosted",) + tuple(baselines)}
    running = {k: np.ones(n, dtype=bool) for k in runs}
    logW = np.zeros(n)
    logWi = np.zeros(n)
    logB = np.zeros(n)
    logBi = np.zeros(n)
    logR = np.zeros(n)
    fb, mx = 0, float("nan")
    viol = {"tau_boost_gt_tau_cons": 0, "overshoot": 0}
    for t in range(1, max_samples + 1):
        any_run = np.zeros(n, dtype=bool)
        for r in running.values():
            any_run |= r
        idx = np.flatnonzero(any_run)
        if idx.size == 0:
            break
        x = stream.draw(idx)
        lf = model.log_factor(x)
        logR[idx] += lf
        for name in baselines:
            lg0, lg1 = bounds[name]
            rr = running[name][idx]
            ii = idx[rr]
            lr = logR[ii]
            rej = lr >= lg1
            acc = ~rej & (lr <= lg0)
            runs[name].stop(ii[rej], t, REJECT, lr[rej])
            runs[name].stop(ii[acc], t, ACCEPT, lr[acc])
            running[name][ii[rej | acc]] = False
        rb = running["boosted"][idx]
        ii = idx[rb]
        if ii.size:
            M = np.exp(logW[ii])
            Mi = np.minimum(np.exp(logWi[ii]), np.nextafter(1.0 / beta, 0.0))
            res = coupled_boost_batch(
                model, M, Mi, alpha, beta, np.exp(logB[ii]), np.exp(logBi[ii]), inv_model=inv_model
            )
            fb += int(np.sum(res.fallback))
            mx = float(np.nanmax([mx, np.nanmax(res.expectation), np.nanmax(res.expectation_inv)]))
            l = lf[rb]
            cand = logW[ii] + np.log(res.b) + l
            cand_i = logWi[ii] + np.log(res.b_inv) - l
            rej = cand >= hit
            with np.errstate(divide="ignore"):
                acc = ~rej & (cand <= np.log(res.nu))
                acc_i = cand_i >= hit_inv
            logW[ii] = np.where(rej, log_cap, np.where(acc, -np.inf, cand))
            logWi[ii] = np.where(acc_i, log_cap_inv, np.where(rej, -np.inf, cand_i))
            logB[ii] += np.log(res.b)
            logBi[ii] += np.log(res.b_inv)
            runs["boosted"].stop(ii[rej], t, REJECT, logR[ii[rej]])
            runs["boosted"].stop(ii[acc], t, ACCEPT, logR[ii[acc]])
            running["boosted"][ii[rej | acc]] = False
            viol["overshoot"] += int(np.sum(logW[ii] > log_cap + 1e-12))
    for name, m in runs.items():
        und = m.decision == UNDECIDED
        m.log_lr[und] = logR[und]
    if "wald_conservative" in runs:
        cons = runs["wald_conservative"]
        viol["tau_boost_gt_tau_cons"] = int(np.sum(runs["boosted"].tau > cons.tau))
    return SimResult(runs, logW, fb, mx, viol)
