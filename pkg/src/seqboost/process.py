"""Truncation functions and the boosted-supermartingale state machine.

Every boosted test in the package multiplies its wealth by a factor that has
already been passed through one of the truncation functions below, so the
wealth can never overshoot ``1/alpha``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

import numpy as np

# relative slack used when deciding whether ``wealth * capped_factor`` reached 1/alpha;
# M * (1/(M*alpha)) can land one or two ulps below 1/alpha
_CAP_RTOL = 1e-12


class Status(enum.Enum):
    CONTINUE = "continue"
    REJECT_NULL = "reject_null"
    ACCEPT_NULL = "accept_null"
    ACCEPT_PENDING_RANDOMIZATION = "accept_pending_randomization"


class Mode(enum.Enum):
    POWER_ONE = "power_one"
    TWO_SIDED_FIXED_NU = "two_sided_fixed_nu"
    TWO_SIDED_COUPLED = "two_sided_coupled"
    WALD_APPROX = "wald_approx"
    WALD_CONSERVATIVE = "wald_conservative"
    SIEGMUND = "siegmund"


SIEGMUND_RHO = 0.583


@dataclass(frozen=True)
class Level:
    """Type I / type II levels; ``beta == 0`` means a power-one test."""

    alpha: float
    beta: float = 0.0

    def __post_init__(self):
        check_alpha(self.alpha)
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.alpha + self.beta >= 1.0:
            raise ValueError("alpha + beta must be < 1")


def check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


@dataclass(frozen=True)
class StopRule:
    """Thresholds and futility policy of a sequential test.

    ``nu_schedule`` is only used in :attr:`Mode.TWO_SIDED_FIXED_NU`; it is
    either a constant or a callable ``t -> nu_t^M`` evaluated before the
    t-th observation arrives. ``mu1`` is the alternative mean used by the
    Siegmund-corrected thresholds (null mean 0, unit variance).
    """

    mode: Mode = Mode.POWER_ONE
    alpha: float = 0.05
    beta: float = 0.0
    nu_schedule: Union[None, float, Callable[[int], float]] = None
    max_samples: int = 10_000
    mu1: Optional[float] = None

    def __post_init__(self):
        Level(self.alpha, self.beta)
        if self.mode is Mode.POWER_ONE and self.beta != 0.0:
            raise ValueError("power-one rules require beta == 0")
        if self.mode is Mode.TWO_SIDED_COUPLED and self.beta <= 0.0:
            raise ValueError("the coupled two-sided rule needs beta > 0")
        if self.mode is Mode.SIEGMUND and self.mu1 is None:
            raise ValueError("Siegmund thresholds need the alternative mean mu1")
        if self.max_samples < 0:
            raise ValueError("max_samples must be nonnegative")

    @property
    def cap(self) -> float:
        return 1.0 / self.alpha

    def thresholds(self) -> tuple[float, float]:
        """Return ``(gamma0, gamma1)`` for the fixed-threshold rules."""
        a, b = self.alpha, self.beta
        if self.mode is Mode.WALD_APPROX:
            return b / (1.0 - a), (1.0 - b) / a
        if self.mode in (Mode.WALD_CONSERVATIVE, Mode.POWER_ONE):
            return b, 1.0 / a
        if self.mode is Mode.SIEGMUND:
            shift = np.exp(self.mu1 * SIEGMUND_RHO)
            return b * shift / (1.0 - a), (1.0 - b) / (a * shift)
        raise ValueError(f"{self.mode} has no fixed thresholds")

    def nu_m(self, t: int) -> float:
        nu = self.nu_schedule
        if nu is None:
            return 0.0
        return float(nu(t)) if callable(nu) else float(nu)


def _as_out(x):
    return float(x) if np.ndim(x) == 0 else x


def truncate_one_sided(x, M, alpha):
    """Cap ``x`` so that ``M * x`` does not exceed ``1/alpha``.

    Vectorised over all arguments; ``x = inf`` maps to ``1/(M*alpha)``.
    """
    check_alpha(alpha)
    M = np.asarray(M, dtype=float)
    if np.any(M <= 0):
        raise ValueError("truncation needs M > 0")
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        cap = 1.0 / (M * alpha)
        # the outer minimum keeps the map monotone when 1/(M*alpha) rounds below the last passing x
        out = np.minimum(np.where(M * x <= 1.0 / alpha, x, cap), cap)
    return _as_out(out)


def truncate_two_sided(x, M, nu, alpha):
    """Truncation with a futility floor: zero when ``M * x <= nu``.

    Reduces to :func:`truncate_one_sided` for ``nu = 0`` and ``x >= 0``
    (``M * 0 <= 0`` gives zero either way).
    """
    check_alpha(alpha)
    M = np.asarray(M, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(M <= 0):
        raise ValueError("truncation needs M > 0")
    if np.any(nu < 0) or np.any(nu > 1.0 / alpha):
        raise ValueError("nu must lie in [0, 1/alpha]")
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        mx = M * x
        cap = 1.0 / (M * alpha)
        # with nu = 0 only x = 0 is futile, even if M * x underflows
        futile = (mx <= nu) & ((nu > 0) | (x == 0))
        out = np.where(futile, 0.0, np.minimum(np.where(mx <= 1.0 / alpha, x, cap), cap))
    return _as_out(out)


def reaches_cap(wealth, alpha):
    """True where a wealth value counts as having reached ``1/alpha``."""
    return np.asarray(wealth) >= (1.0 / alpha) * (1.0 - _CAP_RTOL)


@dataclass(frozen=True)
class ProcessState:
    t: int = 0
    wealth: float = 1.0
    raw_wealth: float = 1.0
    boost_cumprod: float = 1.0
    inv_boost_cumprod: float = 1.0
    status: Status = Status.CONTINUE

    @property
    def stopped(self) -> bool:
        return self.status is not Status.CONTINUE


@dataclass(frozen=True)
class StopDecision:
    status: Status
    stopping_time: Optional[int]
    terminal_wealth: float


def step(
    state: ProcessState,
    boosted_factor: float,
    rule: StopRule,
    *,
    raw_factor: float = 1.0,
    boost: float = 1.0,
    inv_boost: float = 1.0,
    nu: float = 0.0,
    randomized_futility: bool = False,
) -> ProcessState:
    """Advance a boosted process by one already-truncated factor.

    ``nu`` is the futility level in force at this step (0 for power-one
    rules). With ``randomized_futility`` a futility hit is parked in
    :attr:`Status.ACCEPT_PENDING_RANDOMIZATION` until the caller resolves it.
    """
    if state.stopped:
        raise RuntimeError(f"cannot step a stopped process (status={state.status.value})")
    if boosted_factor < 0 or boost < 1 or inv_boost < 1:
        raise ValueError("factors must be nonnegative and boosts >= 1")
    wealth = state.wealth * boosted_factor
    status = Status.CONTINUE
    if reaches_cap(wealth, rule.alpha):
        wealth = 1.0 / rule.alpha
        status = Status.REJECT_NULL
    elif rule.mode is not Mode.POWER_ONE and (wealth <= nu or wealth == 0.0):
        wealth = 0.0
        status = (
            Status.ACCEPT_PENDING_RANDOMIZATION if randomized_futility else Status.ACCEPT_NULL
        )
    return replace(
        state,
        t=state.t + 1,
        wealth=wealth,
        raw_wealth=state.raw_wealth * raw_factor,
        boost_cumprod=state.boost_cumprod * boost,
        inv_boost_cumprod=state.inv_boost_cumprod * inv_boost,
        status=status,
    )


def decision(state: ProcessState) -> StopDecision:
    return StopDecision(
        status=state.status,
        stopping_time=state.t if state.stopped else None,
        terminal_wealth=state.wealth,
    )
