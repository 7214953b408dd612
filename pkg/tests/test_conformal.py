import math

import numpy as np
import pytest
from scipy import integrate, stats

from seqboost.conformal import (
    ConformalConfig,
    DistanceToMean,
    PowerBetModel,
    conformal_p,
    conformal_p_batch,
    power_bet,
    run_conformal_boosted,
    simulate_conformal,
    solve_conformal_boost,
)
from seqboost.sprt import Decision


def test_conformal_p_examples():
    assert conformal_p([3.0], 0.37) == pytest.approx(0.37)
    assert conformal_p([1.0, 2.0, 5.0, 4.0], 0.6) == pytest.approx(0.6 / 4 + 1 / 4)
    assert conformal_p([1.0, 0.5, 9.0], 0.6) == pytest.approx(0.2)
    assert conformal_p([2.0] * 5, 0.3) == pytest.approx(0.3)
    z = np.array([[1.0, 2.0, 0.5], [2.0, 2.0, 2.0]])
    assert conformal_p_batch(z, np.array([0.5, 0.5])) == pytest.approx([(2 + 0.5) / 3, 0.5])
    with pytest.raises(ValueError):
        conformal_p([], 0.5)


def test_power_bet_examples():
    assert power_bet(1.0, 0.3) == pytest.approx(0.3)
    assert power_bet(0.25, 0.5) == pytest.approx(1.0)
    assert power_bet(0.0, 0.5) == np.inf
    for k in (0.1, 0.5, 0.9):
        val, _ = integrate.quad(lambda u: power_bet(u, k), 0, 1)
        assert val == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        power_bet(0.5, 1.0)
    with pytest.raises(ValueError):
        power_bet(1.5, 0.5)


def boost_equation(b, kappa, M, alpha):
    """E[min(b f(U), 1/(alpha M))] for U uniform, written out directly."""
    c = 1 / (alpha * M)
    u0 = min((c / (b * kappa)) ** (1 / (kappa - 1)), 1.0)
    return b * (1 - u0**kappa) + c * u0


def test_boost_examples_and_plug_back():
    r5 = solve_conformal_boost(0.5, 1.0, 0.05)
    r1 = solve_conformal_boost(0.1, 1.0, 0.05)
    assert r5.b == pytest.approx(1.013, abs=1e-3)
    assert r1.b == pytest.approx(2.199, abs=1e-3)
    assert boost_equation(r5.b, 0.5, 1.0, 0.05) == pytest.approx(1.0, abs=1e-9)
    assert boost_equation(r1.b, 0.1, 1.0, 0.05) == pytest.approx(1.0, abs=1e-9)


def test_boost_monotone_in_kappa_and_wealth():
    ks = np.linspace(0.05, 0.95, 19)
    bk = [solve_conformal_boost(k, 2.0, 0.05).b for k in ks]
    assert np.all(np.diff(bk) <= 1e-9)
    Ms = np.linspace(0.1, 19.9, 40)
    bm = [solve_conformal_boost(0.3, M, 0.05).b for M in Ms]
    assert np.all(np.diff(bm) >= -1e-9)


def test_power_model_law():
    m = PowerBetModel(0.4)
    u = np.random.default_rng(0).random(200_000)
    L = power_bet(u, 0.4)
    for y in (0.5, 1.0, 3.0):
        assert m.null_cdf(y) == pytest.approx(np.mean(L <= y), abs=5e-3)
        assert m.partial_mean(y) == pytest.approx(np.mean(np.where(L <= y, L, 0)), abs=1e-2)


def test_distance_to_mean_equivariant():
    rng = np.random.default_rng(1)
    A = DistanceToMean()
    for _ in range(20):
        x = rng.standard_normal(9)
        perm = rng.permutation(9)
        assert A(x[perm]) == pytest.approx(A(x)[perm])
    assert A(np.array([4.0])) == pytest.approx([0.0])


def test_pvalues_uniform_under_exchangeability():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((200, 50))
    sim = simulate_conformal(X, rng.random((200, 50)), 0.5, 0.05)
    # with a single path the p-values are i.i.d. uniform; pooling independent paths keeps that
    assert stats.kstest(sim.pvalues.ravel(), "uniform").pvalue > 0.01


def test_scalar_matches_batch():
    rng = np.random.default_rng(3)
    X = np.r_[rng.standard_normal(30), 3 + rng.standard_normal(70)][None, :]
    tie = rng.random((1, 100))
    sim = simulate_conformal(X, tie, 0.5, 0.05)
    out = run_conformal_boosted(X[0], tie_breaks=tie[0], max_samples=100)
    assert out.stopping_time == sim.methods["boosted"].tau[0]
    plain = run_conformal_boosted(X[0], config=ConformalConfig(boost=False), tie_breaks=tie[0], max_samples=100)
    assert plain.stopping_time == sim.methods["plain"].tau[0]


def test_null_validity_and_dominance():
    n, T = 10_000, 100
    rng = np.random.default_rng(4)
    sim = simulate_conformal(rng.standard_normal((n, T)), rng.random((n, T)), 0.5, 0.05)
    rate = np.mean(sim.methods["boosted"].decision == 1)
    assert rate <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / n)
    w = sim.final_wealth
    assert w.mean() <= 1 + 3 * w.std() / math.sqrt(n)
    assert sim.violations == {"tau_boost_gt_tau_plain": 0, "overshoot": 0, "wealth_below_plain": 0}
    assert sim.fallbacks == 0


def test_changepoint_rejects_more_often_than_null():
    n, T = 1000, 200
    rng = np.random.default_rng(5)
    null = rng.standard_normal((n, T))
    # an early shift: the bets lose wealth steadily before any evidence arrives
    shift = null + np.where(np.arange(T) >= 20, 3.0, 0.0)
    tie = rng.random((n, T))
    r0 = np.mean(simulate_conformal(null, tie, 0.5, 0.05).methods["boosted"].decision == 1)
    r1 = np.mean(simulate_conformal(shift, tie, 0.5, 0.05).methods["boosted"].decision == 1)
    assert r1 > r0 + 3 * math.sqrt(0.05 * 0.95 / n)


def test_kappa_schedule_and_errors():
    x = np.random.default_rng(6).standard_normal(30)
    out = run_conformal_boosted(x, config=ConformalConfig(kappa=lambda t: 0.5 / math.sqrt(t) + 0.1), log_steps=True)
    assert out.decision is Decision.UNDECIDED or out.decision is Decision.REJECT_NULL
    assert all(s.b >= 1 for s in out.log)
    with pytest.raises(ValueError):
        run_conformal_boosted(x, config=ConformalConfig(kappa=1.5))
