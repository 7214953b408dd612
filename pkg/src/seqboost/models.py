"""Null/alternative distributions of the next multiplicative factor ``L_t``.

A boosting factor can only be computed when the conditional null law of the
next factor is known. Continuous models expose it through three functions of a
threshold ``y``:

* ``null_cdf(y)``      -- ``P_0(L <= y)``
* ``null_sf(y)``       -- ``P_0(L > y)``
* ``partial_mean(y)``  -- ``E_0[L; L <= y]``

For likelihood-ratio factors the partial mean is the alternative CDF,
``E_0[L; L <= y] = P_1(L <= y)``. Discrete models list their atoms instead.
All methods broadcast over numpy arrays so whole batches of paths can be
solved at once.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .process import check_alpha, truncate_two_sided


def _log(y):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(y, dtype=float))


class FactorModel(abc.ABC):
    continuous = True
    mlr = False

    def factor(self, x):
        """Map an observation to its multiplicative factor."""
        raise NotImplementedError

    def inverse(self) -> "FactorModel":
        """Model of ``1/L`` under the alternative (the inverse test)."""
        raise NotImplementedError

    def subset(self, idx) -> "FactorModel":
        """The model restricted to paths ``idx`` (a no-op for shared parameters)."""
        return self


class ContinuousFactorModel(FactorModel):
    @abc.abstractmethod
    def null_cdf(self, y): ...

    @abc.abstractmethod
    def null_sf(self, y): ...

    @abc.abstractmethod
    def partial_mean(self, y): ...


class LikelihoodRatioModel(ContinuousFactorModel):
    mlr = True

    @abc.abstractmethod
    def alt_cdf(self, y): ...

    def partial_mean(self, y):
        return self.alt_cdf(y)


@dataclass(frozen=True)
class GaussianLRModel(LikelihoodRatioModel):
    """N(mu0, 1) against N(mu0 + delta, 1).

    ``delta`` may be an array (one alternative per path, e.g. a predictable
    plugin); ``delta == 0`` gives the degenerate factor ``L = 1``.
    """

    mu0: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.delta) < 0):
            raise ValueError("delta must be nonnegative")

    @property
    def mu1(self):
        return self.mu0 + self.delta

    def factor(self, x):
        d = np.asarray(self.delta, dtype=float)
        return np.exp(d * (np.asarray(x, dtype=float) - self.mu0) - d * d / 2)

    def log_factor(self, x):
        d = np.asarray(self.delta, dtype=float)
        return d * (np.asarray(x, dtype=float) - self.mu0) - d * d / 2

    def factor_inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise ValueError("the likelihood ratio inverse needs y > 0")
        d = np.asarray(self.delta, dtype=float)
        return (d * d / 2 + np.log(y)) / d + self.mu0

    def _z(self, y, shift):
        # P(lambda <= y) = Phi(log(y)/delta + shift) with shift = +delta/2 (null) or -delta/2 (alt)
        d = np.asarray(self.delta, dtype=float)
        ly = _log(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = ly / d + shift * d / 2
        # degenerate delta = 0: L == 1
        return np.where(d > 0, z, np.where(ly >= 0, np.inf, -np.inf))

    def null_cdf(self, y):
        return ndtr(self._z(y, +1.0))

    def null_sf(self, y):
        return ndtr(-self._z(y, +1.0))

    def alt_cdf(self, y):
        return ndtr(self._z(y, -1.0))

    def inverse(self):
        # 1/lambda(X) under N(mu1, 1) has the law of lambda(-X) under N(-mu1, 1)
        return GaussianLRModel(mu0=-(self.mu0 + self.delta), delta=self.delta)

    def subset(self, idx):
        mu0, d = np.asarray(self.mu0), np.asarray(self.delta)
        if mu0.ndim == 0 and d.ndim == 0:
            return self
        return GaussianLRModel(mu0=mu0[idx] if mu0.ndim else self.mu0, delta=d[idx] if d.ndim else self.delta)

    def sample_null(self, rng, size=None):
        return self.mu0 + rng.standard_normal(size)

    def sample_alt(self, rng, size=None):
        return self.mu1 + rng.standard_normal(size)


@dataclass(frozen=True)
class DiscreteFactorModel(FactorModel):
    """Finitely many factor values with null and alternative probabilities.

    Arrays have shape ``(..., K)``; the leading axes index paths.
    ``alt_probs`` may be omitted when no inverse test is needed.
    """

    values: np.ndarray
    null_probs: np.ndarray
    alt_probs: np.ndarray = None

    continuous = False

    def atoms(self):
        return (
            np.asarray(self.values, dtype=float),
            np.asarray(self.null_probs, dtype=float),
            None if self.alt_probs is None else np.asarray(self.alt_probs, dtype=float),
        )

    def null_cdf(self, y):
        v, p, _ = self.atoms()
        y = np.asarray(y, dtype=float)[..., None]
        return np.sum(np.where(v <= y, p, 0.0), axis=-1)

    def null_sf(self, y):
        return 1.0 - self.null_cdf(y)

    def partial_mean(self, y):
        v, p, _ = self.atoms()
        y = np.asarray(y, dtype=float)[..., None]
        return np.sum(np.where(v <= y, p * v, 0.0), axis=-1)

    def null_mean(self):
        v, p, _ = self.atoms()
        return np.sum(p * v, axis=-1)

    def subset(self, idx):
        v, p, q = self.atoms()
        if v.ndim < 2 and p.ndim < 2 and (q is None or q.ndim < 2):
            return self
        shape = np.broadcast_shapes(v.shape, p.shape)
        v, p = np.broadcast_to(v, shape)[idx], np.broadcast_to(p, shape)[idx]
        q = None if q is None else np.broadcast_to(q, shape)[idx]
        return DiscreteFactorModel(values=v, null_probs=p, alt_probs=q)

    def inverse(self):
        v, p, q = self.atoms()
        if q is None:
            raise ValueError("the inverse model needs alternative probabilities")
        with np.errstate(divide="ignore"):
            return DiscreteFactorModel(values=1.0 / v, null_probs=q, alt_probs=p)


class BernoulliLRModel(DiscreteFactorModel):
    """Bernoulli(p0) against Bernoulli(p1); atoms ordered as (X=1, X=0)."""

    mlr = True

    def __init__(self, p0: float, p1: float):
        if not (0 < p0 < 1 and 0 < p1 < 1) or p0 == p1:
            raise ValueError("need p0, p1 in (0, 1) with p0 != p1")
        super().__init__(
            values=np.array([p1 / p0, (1 - p1) / (1 - p0)]),
            null_probs=np.array([p0, 1 - p0]),
            alt_probs=np.array([p1, 1 - p1]),
        )
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    def factor(self, x):
        x = np.asarray(x)
        v = self.values
        return np.where(x == 1, v[0], v[1])

    def sample_null(self, rng, size=None):
        return (rng.random(size) < self.p0).astype(float)

    def sample_alt(self, rng, size=None):
        return (rng.random(size) < self.p1).astype(float)


def _cap_and_floor(b, M, nu, alpha):
    b = np.asarray(b, dtype=float)
    M = np.asarray(M, dtype=float)
    nu = np.asarray(nu, dtype=float)
    check_alpha(alpha)
    if np.any(M <= 0) or np.any(M >= 1.0 / alpha):
        raise ValueError("the boosting expectation needs M in (0, 1/alpha)")
    if np.any(b < 1):
        raise ValueError("boosting factors must be >= 1")
    if np.any(nu < 0) or np.any(nu > 1.0 / alpha):
        raise ValueError("nu must lie in [0, 1/alpha]")
    return b, M, nu


def truncated_expectation(model: FactorModel, b, M, alpha, nu=0.0):
    """``E_0[T_alpha(b * L; M, nu)]`` -- closed form or atom enumeration."""
    b, M, nu = _cap_and_floor(b, M, nu, alpha)
    cap = 1.0 / (M * alpha)
    if not model.continuous:
        v, p, _ = model.atoms()
        bb, MM, nn = (np.asarray(a)[..., None] for a in (b, M, nu))
        with np.errstate(invalid="ignore"):
            x = np.where(v == 0, 0.0, bb * v)
        terms = truncate_two_sided(x, MM, nn, alpha)
        out = np.sum(p * terms, axis=-1)
        return float(out) if np.ndim(out) == 0 else out
    finite = np.isfinite(b)
    bf = np.where(finite, b, 1.0)
    hi = cap / bf
    lo = nu / (M * bf)
    middle = model.partial_mean(hi) - model.partial_mean(lo)
    out = np.where(
        finite,
        bf * np.maximum(middle, 0.0) + cap * model.null_sf(hi),
        cap * model.null_sf(0.0),
    )
    return float(out) if np.ndim(out) == 0 else out


def truncated_expectation_one_sided(model, b, M, alpha):
    return truncated_expectation(model, b, M, alpha, 0.0)


def truncated_expectation_two_sided(model, b, M, nu, alpha):
    return truncated_expectation(model, b, M, alpha, nu)


def gaussian_lr(x, model: GaussianLRModel):
    return model.factor(x)


def gaussian_lr_inverse(y, model: GaussianLRModel):
    return model.factor_inverse(y)


def plugin_theta(t: int, prefix_sum: float, theta0: float) -> float:
    """Smoothed maximum-likelihood plugin, floored at the null value."""
    if t < 1:
        raise ValueError("plugin estimates start at t = 1")
    return max((theta0 + prefix_sum) / t, theta0)
