"""Boosting factors: the largest ``b >= 1`` keeping the truncated factor's null mean <= 1.

Everything here is vectorised over a batch of wealth values so that thousands
of simulated paths can be boosted in one call. Per-element iteration is masked,
so the factor returned for one element never depends on the rest of the batch.

The futility level may depend on the boost itself: ``nu(b) = min(nu_fixed +
nu_rate * b, 1/alpha)``. ``nu_rate`` is how the cumulative-product futility
rules (fixed-nu with the coupled schedule, and the type I/II system) enter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import DiscreteFactorModel, FactorModel, truncated_expectation
from .process import check_alpha, truncate_two_sided

GUARD = 1e-7
SOLVER_RTOL = 1e-9
SOLVER_FTOL = 1e-13
MAX_ITER = 200
MAX_DOUBLINGS = 200

METHODS = (
    "root_bisection",
    "closed_form",
    "largest_feasible_discrete",
    "coupled_constrained",
    "fallback_one",
)


@dataclass(frozen=True)
class BoostResult:
    b: float
    verified_expectation: float
    iterations: int
    method: str


@dataclass(frozen=True)
class CoupledBoostResult:
    b: float
    b_inv: float
    nu: float
    nu_inv: float
    verified_expectation: float
    verified_expectation_inv: float
    iterations: int
    method: str


@dataclass
class BoostBatch:
    b: np.ndarray
    expectation: np.ndarray
    iterations: np.ndarray
    fallback: np.ndarray


def _expect(model, b, M, alpha, nu):
    """Unchecked truncated expectation (inputs already validated)."""
    cap = 1.0 / (M * alpha)
    if not model.continuous:
        v, p, _ = model.atoms()
        bb, MM, nn = b[..., None], M[..., None], nu[..., None]
        with np.errstate(invalid="ignore", over="ignore"):
            x = np.where(v == 0, 0.0, bb * v)
        return np.sum(p * truncate_two_sided(x, MM, nn, alpha), axis=-1)
    finite = np.isfinite(b)
    bf = np.where(finite, b, 1.0)
    hi = cap / bf
    lo = nu / (M * bf)
    middle = np.maximum(model.partial_mean(hi) - model.partial_mean(lo), 0.0)
    return np.where(finite, bf * middle + cap * model.null_sf(hi), cap * model.null_sf(0.0))


def _nu(b, nu_fixed, nu_rate, alpha):
    with np.errstate(invalid="ignore", over="ignore"):
        extra = np.where(nu_rate > 0, nu_rate * b, 0.0)
    return np.minimum(nu_fixed + extra, 1.0 / alpha)


def _broadcast(M, nu_fixed, nu_rate):
    M, nu_fixed, nu_rate = np.broadcast_arrays(
        np.asarray(M, dtype=float), np.asarray(nu_fixed, dtype=float), np.asarray(nu_rate, dtype=float)
    )
    return M.astype(float, copy=True), nu_fixed.copy(), nu_rate.copy()


def _solve_continuous(model, M, alpha, nu_fixed, nu_rate, rtol, maxiter=MAX_ITER):
    """Bracketed Illinois iteration on 1-D arrays; only unfinished elements are re-evaluated."""

    def g(ix, b):
        e = _expect(model.subset(ix), b, M[ix], alpha, _nu(b, nu_fixed[ix], nu_rate[ix], alpha))
        return e - 1.0

    n = M.size
    every = np.arange(n)
    lo = np.ones(n)
    glo = g(every, lo)
    iters = np.zeros(n, dtype=int)
    act = every[glo < -SOLVER_FTOL]

    # expanding bracket: E(b) -> P_0(L > 0)/(M alpha) > 1 as b grows
    hi = np.full(n, 2.0)
    ghi = np.full(n, np.inf)
    if act.size:
        ghi[act] = g(act, hi[act])
    grow = act[ghi[act] <= 0]
    for _ in range(MAX_DOUBLINGS):
        if not grow.size:
            break
        lo[grow], glo[grow] = hi[grow], ghi[grow]
        hi[grow] *= 2.0
        ghi[grow] = g(grow, hi[grow])
        iters[grow] += 1
        grow = grow[ghi[grow] <= 0]
    act = act[(ghi[act] > 0) & (glo[act] < -SOLVER_FTOL)]

    # Illinois-modified regula falsi; lo stays feasible throughout
    wlo, whi = glo.copy(), ghi.copy()
    side = np.zeros(n, dtype=int)
    for _ in range(maxiter):
        if not act.size:
            break
        l, h, wl, wh, sd = lo[act], hi[act], wlo[act], whi[act], side[act]
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            x = l - wl * (h - l) / (wh - wl)
        x = np.where((x > l) & (x < h), x, 0.5 * (l + h))
        gx = g(act, x)
        left = gx <= 0
        wh = np.where(left & (sd == -1), 0.5 * wh, wh)
        wl = np.where(~left & (sd == 1), 0.5 * wl, wl)
        lo[act] = np.where(left, x, l)
        glo[act] = np.where(left, gx, glo[act])
        wlo[act] = np.where(left, gx, wl)
        hi[act] = np.where(left, h, x)
        whi[act] = np.where(left, wh, gx)
        side[act] = np.where(left, -1, 1)
        iters[act] += 1
        done = (hi[act] - lo[act] <= rtol * lo[act]) | (glo[act] >= -SOLVER_FTOL)
        act = act[~done]
    return lo, iters


def _solve_discrete(model, M, alpha, nu_fixed, nu_rate):
    """Largest feasible boost by enumerating the breakpoints of the step-plus-linear expectation."""
    v, p, _ = model.atoms()
    v = np.broadcast_to(v, M.shape + v.shape[-1:])
    p = np.broadcast_to(p, v.shape)
    Mk, nfk, nrk = M[..., None], nu_fixed[..., None], nu_rate[..., None]
    cap = 1.0 / alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        bp_cap = np.where(v > 0, cap / (Mk * v), np.inf)
        slope = Mk * v - nrk
        bp_zero = np.where(slope > 0, nfk / slope, np.inf)
        bp_clamp = np.where(nu_rate > 0, (cap - nu_fixed) / nu_rate, np.inf)[..., None]
    bps = np.concatenate([bp_cap, bp_zero, bp_clamp], axis=-1)
    bps = np.where(np.isfinite(bps) & (bps > 1.0), bps, np.inf)
    bps = np.sort(np.concatenate([np.ones(M.shape + (1,)), bps], axis=-1), axis=-1)
    lo_e = bps
    hi_e = np.concatenate([bps[..., 1:], np.full(M.shape + (1,), np.inf)], axis=-1)
    mid = np.where(np.isfinite(hi_e), 0.5 * (lo_e + hi_e), 2.0 * lo_e + 1.0)

    # classify atoms at each segment midpoint; the classification is constant on (lo, hi]
    mm = mid[..., None]
    nu_mid = _nu(mm, nfk[..., None], nrk[..., None], alpha)
    mx = Mk[..., None] * mm * v[..., None, :]
    middle = (mx > nu_mid) & (mx <= cap)
    capped = mx > cap
    A = np.sum(np.where(middle, p[..., None, :] * v[..., None, :], 0.0), axis=-1)
    C = np.sum(np.where(capped, p[..., None, :], 0.0), axis=-1) / Mk
    C = C * cap
    valid = np.isfinite(lo_e)
    with np.errstate(invalid="ignore"):
        e_hi = np.where(np.isfinite(hi_e), A * hi_e + C, np.where(A > 0, np.inf, C))
    exceeds = valid & (e_hi > 1.0)
    any_ex = exceeds.any(axis=-1)
    j = np.argmax(exceeds, axis=-1)
    take = lambda arr: np.take_along_axis(arr, j[..., None], axis=-1)[..., 0]
    lo_j, A_j, C_j = take(lo_e), take(A), take(C)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.where(A_j > 0, (1.0 - C_j) / A_j, lo_j)
    e_lo_plus = A_j * lo_j + C_j
    b = np.where(e_lo_plus > 1.0, lo_j, np.maximum(root, lo_j))
    b = np.where(any_ex, b, np.inf)
    return b


def _verify(model, b, M, alpha, nu_fixed, nu_rate):
    return _expect(model, b, M, alpha, _nu(b, nu_fixed, nu_rate, alpha))


def boost_batch(model: FactorModel, M, alpha, nu=0.0, nu_rate=0.0, rtol=SOLVER_RTOL) -> BoostBatch:
    """Boosting factors for a batch of wealth values ``M``.

    Elements with ``M <= 0`` (an underflowed or futile process) get ``b = 1``.
    Every returned factor has been plugged back in; if the recomputed
    expectation exceeds ``1 + 1e-7`` the factor is replaced by 1.
    """
    check_alpha(alpha)
    M, nu_fixed, nu_rate = _broadcast(M, nu, nu_rate)
    shape = M.shape
    M, nu_fixed, nu_rate = M.ravel(), nu_fixed.ravel(), nu_rate.ravel()
    if np.any(M >= 1.0 / alpha):
        raise ValueError("boosting needs M < 1/alpha")
    live = M > 0
    Ms = np.where(live, M, 0.5 / alpha)
    if model.continuous:
        b, iters = _solve_continuous(model, Ms, alpha, nu_fixed, nu_rate, rtol)
    else:
        b = _solve_discrete(model, Ms, alpha, nu_fixed, nu_rate)
        iters = np.ones(M.size, dtype=int)
        # left-continuity can be lost to rounding at a jump; back off a few ulps
        for _ in range(4):
            e = _verify(model, b, Ms, alpha, nu_fixed, nu_rate)
            over = np.isfinite(b) & (e > 1.0 + 1e-12) & (b > 1.0)
            if not over.any():
                break
            b = np.where(over, np.maximum(np.nextafter(b, 0.0) * (1 - 1e-15), 1.0), b)
    b = np.where(live, b, 1.0)
    e = _verify(model, b, Ms, alpha, nu_fixed, nu_rate)
    bad = live & ~(e <= 1.0 + GUARD)
    b = np.where(bad, 1.0, b)
    e = np.where(bad, _verify(model, b, Ms, alpha, nu_fixed, nu_rate), e)
    e = np.where(live, e, np.nan)
    return BoostBatch(b.reshape(shape), e.reshape(shape), iters.reshape(shape), bad.reshape(shape))


def _scalar(batch: BoostBatch, method: str) -> BoostResult:
    fell = bool(batch.fallback.reshape(-1)[0])
    return BoostResult(
        b=float(batch.b.reshape(-1)[0]),
        verified_expectation=float(batch.expectation.reshape(-1)[0]),
        iterations=int(batch.iterations.reshape(-1)[0]),
        method="fallback_one" if fell else method,
    )


def _check_M(M, alpha):
    check_alpha(alpha)
    if not 0.0 < M < 1.0 / alpha:
        raise ValueError(f"M must lie in (0, 1/alpha), got {M}")


def solve_boost_one_sided(model: FactorModel, M: float, alpha: float, tol: float = SOLVER_RTOL) -> BoostResult:
    """Largest ``b`` with ``E_0[T_alpha(b L; M)] <= 1`` (equality for continuous models)."""
    _check_M(M, alpha)
    method = "root_bisection" if model.continuous else "largest_feasible_discrete"
    return _scalar(boost_batch(model, np.array([M]), alpha, rtol=tol), method)


def solve_boost_two_sided(
    model: FactorModel, M: float, nu: float, alpha: float, tol: float = SOLVER_RTOL, nu_rate: float = 0.0
) -> BoostResult:
    """Largest feasible boost under the futility-floored truncation.

    ``nu_rate > 0`` makes the floor grow with the boost, ``nu(b) = min(nu + nu_rate b, 1/alpha)``.
    """
    _check_M(M, alpha)
    if not 0.0 <= nu <= 1.0 / alpha:
        raise ValueError("nu must lie in [0, 1/alpha]")
    method = "root_bisection" if model.continuous else "largest_feasible_discrete"
    return _scalar(boost_batch(model, np.array([M]), alpha, nu=nu, nu_rate=nu_rate, rtol=tol), method)


@dataclass
class CoupledBatch:
    b: np.ndarray
    b_inv: np.ndarray
    nu: np.ndarray
    nu_inv: np.ndarray
    expectation: np.ndarray
    expectation_inv: np.ndarray
    sweeps: np.ndarray
    fallback: np.ndarray


def coupled_boost_batch(
    model: FactorModel,
    M,
    M_inv,
    alpha: float,
    beta: float,
    cum_b,
    cum_binv,
    inv_model: FactorModel = None,
    tol: float = 1e-8,
    max_sweeps: int = 100,
) -> CoupledBatch:
    """Forward and inverse boosts for simultaneous type I / type II control.

    Maximises ``b + b_inv`` subject to both truncated expectations being at
    most one, where the forward floor is ``min(beta * B * b * B_inv * b_inv, 1/alpha)``
    and the inverse floor ``min(alpha * B * b * B_inv * b_inv, 1/beta)``
    (``B``, ``B_inv`` the cumulative products so far). Raising ``b`` only
    loosens the inverse constraint and vice versa, so alternating
    one-dimensional maximisation climbs monotonically to a fixed point while
    every iterate stays feasible.
    """
    check_alpha(alpha)
    check_alpha(beta)
    inv_model = model.inverse() if inv_model is None else inv_model
    M, M_inv, cum_b, cum_binv = (np.asarray(a, dtype=float) for a in np.broadcast_arrays(M, M_inv, cum_b, cum_binv))
    M, M_inv, cum_b, cum_binv = (a.ravel() for a in (M, M_inv, cum_b, cum_binv))
    n = M.size
    b = np.ones(n)
    binv = np.ones(n)
    sweeps = np.zeros(n, dtype=int)
    act = np.arange(n)
    for _ in range(max_sweeps):
        if not act.size:
            break
        fwd = boost_batch(model.subset(act), M[act], alpha, nu=0.0, nu_rate=beta * cum_b[act] * cum_binv[act] * binv[act])
        b_new = np.where(np.isfinite(fwd.b), fwd.b, 1e12)
        inv = boost_batch(inv_model.subset(act), M_inv[act], beta, nu=0.0, nu_rate=alpha * cum_b[act] * b_new * cum_binv[act])
        binv_new = np.where(np.isfinite(inv.b), inv.b, 1e12)
        conv = (np.abs(b_new - b[act]) <= tol * b[act]) & (np.abs(binv_new - binv[act]) <= tol * binv[act])
        b[act], binv[act] = b_new, binv_new
        sweeps[act] += 1
        act = act[~conv]

    def floors(b, binv):
        prod = cum_b * b * cum_binv * binv
        return np.minimum(beta * prod, 1.0 / alpha), np.minimum(alpha * prod, 1.0 / beta)

    nu, nu_inv = floors(b, binv)
    e = _expect(model, b, M, alpha, nu)
    e_inv = _expect(inv_model, binv, M_inv, beta, nu_inv)
    bad = ~((e <= 1.0 + GUARD) & (e_inv <= 1.0 + GUARD))
    if bad.any():
        b = np.where(bad, 1.0, b)
        binv = np.where(bad, 1.0, binv)
        nu, nu_inv = floors(b, binv)
        e = _expect(model, b, M, alpha, nu)
        e_inv = _expect(inv_model, binv, M_inv, beta, nu_inv)
    return CoupledBatch(b, binv, nu, nu_inv, e, e_inv, sweeps, bad)


def solve_boost_coupled(
    model: FactorModel,
    M: float,
    M_inv: float,
    alpha: float,
    beta: float,
    cum_b: float = 1.0,
    cum_binv: float = 1.0,
    tol: float = 1e-8,
) -> CoupledBoostResult:
    _check_M(M, alpha)
    if beta <= 0:
        raise ValueError("the coupled system needs beta > 0")
    _check_M(M_inv, beta)
    r = coupled_boost_batch(model, np.array([M]), np.array([M_inv]), alpha, beta, cum_b, cum_binv, tol=tol)
    fell = bool(r.fallback[0])
    return CoupledBoostResult(
        b=float(r.b[0]),
        b_inv=float(r.b_inv[0]),
        nu=float(r.nu[0]),
        nu_inv=float(r.nu_inv[0]),
        verified_expectation=float(r.expectation[0]),
        verified_expectation_inv=float(r.expectation_inv[0]),
        iterations=int(r.sweeps[0]),
        method="fallback_one" if fell else "coupled_constrained",
    )


def closed_form_binary_boost(C: float, lambda_bet: float, M: float, alpha: float) -> BoostResult:
    """Exact boost for the two-atom factor ``1 + lambda (X - C)`` with ``P_0(X = 1) = C``.

    Only the up-move can hit the cap; once it does, the expectation is linear
    in ``b`` and the root is explicit.
    """
    _check_M(M, alpha)
    if not 0.0 < C < 1.0 + 1e-15 or lambda_bet < 0 or lambda_bet * C > 1.0 + 1e-12:
        raise ValueError("need C in (0, 1] and lambda in [0, 1/C]")
    up = 1.0 + lambda_bet * (1.0 - C)
    down = 1.0 - lambda_bet * C
    if M * up < 1.0 / alpha:
        b = 1.0
    else:
        denom = (1.0 - C) * down
        if denom == 0.0:
            raise ValueError("degenerate bet: C = 1 or lambda * C = 1")
        b = max((1.0 - C / (M * alpha)) / denom, 1.0)
    model = two_atom_model(C, lambda_bet)
    e = float(truncated_expectation(model, b, M, alpha))
    if not e <= 1.0 + GUARD:
        return BoostResult(1.0, float(truncated_expectation(model, 1.0, M, alpha)), 0, "fallback_one")
    return BoostResult(b, e, 0, "closed_form")


def closed_form_binary_boost_batch(C, lambda_bet, M, alpha):
    """Vectorised closed form; degenerate bets (zero down-move) get ``b = 1``."""
    C, lam, M = (np.asarray(a, dtype=float) for a in np.broadcast_arrays(C, lambda_bet, M))
    up = 1.0 + lam * (1.0 - C)
    denom = (1.0 - C) * (1.0 - lam * C)
    hit = M * up >= 1.0 / alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(hit & (denom > 0), (1.0 - C / (M * alpha)) / denom, 1.0)
    return np.maximum(b, 1.0)


def two_atom_model(C, lambda_bet):
    """Null law of the betting factor ``1 + lambda (X - C)`` for binary ``X`` with mean ``C``."""
    C = np.asarray(C, dtype=float)
    lam = np.asarray(lambda_bet, dtype=float)
    return DiscreteFactorModel(
        values=np.stack([1.0 + lam * (1.0 - C), 1.0 - lam * C], axis=-1),
        null_probs=np.stack([C, 1.0 - C], axis=-1),
    )
