import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from erwlab import diffusion
from erwlab.diffusion import (estimate_ab, euler_path, exact_bessel_marginal, sample_functionals,
                              sample_marginal, sample_marginal_below, sample_unstopped,
                              scaling_check, simulate_functionals, stopped_mean_gap)
from erwlab.stats import ks_two_sample, wilson_interval


def test_zero_start_stays_zero():
    p = euler_path(0.0, 0.0, 1e-3, 1.0, seed=1)
    assert (p.values == 0).all()
    assert p.absorbed_at == 0.0


def test_degenerate_continuation():
    p = euler_path(-1.0, 1.0, 1e-4, 5.0, seed=2, mode=diffusion.DEGENERATE)
    s = p.absorbed_at
    assert s is not None
    after = p.times > s
    assert after.any()
    assert np.allclose(p.values[after], -(p.times[after] - s), atol=1e-12)
    assert (p.values[~after] >= 0).all()


def test_frozen_after_absorption():
    p = euler_path(0.3, 0.2, 1e-4, 3.0, seed=3)
    if p.absorbed_at is not None:
        assert (p.values[p.times > p.absorbed_at + 1e-4] == 0).all()
    assert (p.values >= 0).all()


def test_path_argument_checks():
    with pytest.raises(ValueError):
        euler_path(0.5, 1.0, 1e-4, 1.0, mode=diffusion.DEGENERATE)
    with pytest.raises(ValueError):
        euler_path(0.5, 1.0, 0.01, 1.0)  # dt too coarse for x0 = 1
    with pytest.raises(ValueError):
        euler_path(0.5, -1.0, 1e-4, 1.0)
    with pytest.raises(ValueError):
        euler_path(0.5, 1.0, 1e-4, 1.0, mode="reflect")


def test_euler_mean_without_absorption():
    v = sample_marginal(2.0, 1.0, 1.0, 10**4, dt=1e-4, seed=4, method="euler")
    se = v.std(ddof=1) / math.sqrt(len(v))
    assert abs(v.mean() - 3.0) < 3 * se


def test_exact_marginal_small_time():
    v = exact_bessel_marginal(0.5, 2.0, 1e-6, 10**4, seed=5)
    assert abs(v.mean() - 2.0) < 1e-2


def test_exact_marginal_dimension_one():
    # delta = 1/2: 2Y is a one-dimensional squared Bessel process, 2Y(t) = (sqrt(2 x0) + W(t))^2
    x0, t = 0.5, 1.0
    v = exact_bessel_marginal(0.5, x0, t, 10**4, seed=6)
    z = np.random.default_rng(7).standard_normal(10**4)
    ref = (math.sqrt(2 * x0) + math.sqrt(t) * z) ** 2 / 2
    assert ks_two_sample(v, ref).pvalue > 0.01


@pytest.mark.parametrize("d", [0.0, 0.5, 2.0, 3.5])
def test_exact_marginal_mean(d):
    v = exact_bessel_marginal(d, 1.0, 1.5, 2 * 10**4, seed=8)
    se = v.std(ddof=1) / math.sqrt(len(v))
    assert abs(v.mean() - (1.0 + 1.5 * d)) < 3 * se


def test_exact_marginal_rejects():
    with pytest.raises(ValueError):
        exact_bessel_marginal(-0.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        sample_marginal(0.5, 1.0, 1.0, 10, method="exact")
    assert isinstance(exact_bessel_marginal(1.0, 1.0, 1.0, seed=1), float)


def test_exact_absorption_delta_zero():
    # P[Y(t) = 0] = exp(-x0 / t) in dimension 0
    v = exact_bessel_marginal(0.0, 1.0, 2.0, 10**5, seed=9)
    k = int((v == 0).sum())
    lo, hi = wilson_interval(k, len(v), z=3.29)
    assert lo <= math.exp(-0.5) <= hi


@pytest.mark.parametrize("d", [0.5, 2.0])
def test_euler_unstopped_matches_exact(d):
    a = sample_unstopped(d, 1.0, 1.0, 10**4, 1e-4, seed=10)
    b = exact_bessel_marginal(d, 1.0, 1.0, 10**4, seed=11)
    assert ks_two_sample(a, b).statistic < 0.02


def test_euler_stopped_matches_exact_delta_zero():
    a = sample_marginal(0.0, 1.0, 1.0, 10**4, 1e-4, seed=12, method="euler")
    b = sample_marginal(0.0, 1.0, 1.0, 10**4, 1e-4, seed=13, method="exact")
    assert ks_two_sample(a, b).statistic < 0.03


def test_first_passage_delta_half():
    # delta = 1/2 from x0 = 1: P[sigma0 > t] = erf(1 / sqrt(t))
    b = simulate_functionals(0.5, 1.0, 1e-4, 4.0, 10**4, seed=14)
    for t in (0.5, 1.0, 2.0, 4.0):
        k = int(np.count_nonzero(b.censored | (b.sigma0 > t)))
        lo, hi = wilson_interval(k, len(b), z=3.29)
        p = special.erf(1 / math.sqrt(t))
        assert lo - 0.01 <= p <= hi + 0.01


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_stopped_mean_identity(t):
    mean, se = stopped_mean_gap(0.5, 1.0, t, 10**4, seed=15)
    assert abs(mean) < 3 * se + 2e-3


def test_absorption_monotone():
    b = simulate_functionals(0.3, 1.0, 1e-4, 3.0, 5000, seed=16)
    st_ = b.stopped_times()
    frac = [np.mean(st_ <= t) for t in (0.5, 1.0, 2.0, 3.0)]
    assert all(x <= y for x, y in zip(frac, frac[1:]))
    c = simulate_functionals(0.3, 2.0, 1e-4, 3.0, 5000, seed=16)
    assert c.censored.mean() > b.censored.mean()


def test_functional_tails_delta_zero():
    r = sample_functionals(0.0, 1.0, 5e-4, 50.0, 10**4, seed=17, sigma_window=(4.0, None))
    assert abs(r.sigma_fit.exponent - 1.0) < 0.1


def test_functionals_reject_delta_above_one():
    with pytest.raises(ValueError):
        sample_functionals(1.5, 1.0, runs=10)


def test_scaling_identity_case():
    r = scaling_check(0.0, 1.0, 1.0, 1e-4, 500, seed=18, horizon=10.0)
    assert r.ks.statistic < 0.15


@pytest.mark.parametrize("d,x2", [(0.0, 2.0), (0.5, 4.0)])
def test_scaling(d, x2):
    r = scaling_check(d, 1.0, x2, 5e-4, 4000, seed=19, horizon=2.0)
    assert r.ks.statistic < 0.05


@pytest.mark.parametrize("dt", [1e-3, 5e-4])
def test_ab_delta_zero(dt):
    # P[sigma0 > t] = 1 - exp(-1/t) ~ 1/t, so a(0) = x0 = 1 at every step size
    r = estimate_ab(0.0, dt, 10**5, seed=20, horizon=100.0)
    assert r.a_ci[0] * 0.95 <= 1.0 <= r.a_ci[1] * 1.05
    assert r.flatness_a < 0.1
    assert r.b_hat > 0


def test_ab_delta_half():
    # P[sigma0 > t] = erf(1/sqrt(t)) ~ 2 / sqrt(pi t)
    r = estimate_ab(0.5, 1e-3, 10**4, seed=21, horizon=100.0)
    assert r.a_ci[0] * 0.95 <= 2 / math.sqrt(math.pi) <= r.a_ci[1] * 1.05


def test_marginal_below_barrier():
    v, attempts = sample_marginal_below(0.0, 1.0, 1.0, 500, 2.0, 5e-4, seed=22, horizon=10.0)
    assert len(v) == 500 and attempts > 500
    assert (v < 2.0).all() and (v >= 0).all()


def test_functionals_deterministic_across_workers():
    a = simulate_functionals(0.5, 1.0, 5e-4, 1.0, 600, seed=23, workers=1)
    b = simulate_functionals(0.5, 1.0, 5e-4, 1.0, 600, seed=23, workers=2)
    assert np.array_equal(a.sigma0, b.sigma0, equal_nan=True)
    assert np.array_equal(a.area, b.area)


@given(st.integers(0, 2**32), st.floats(-1.0, 0.9), st.floats(0.05, 3.0))
def test_functional_invariants(seed, d, x0):
    b = simulate_functionals(d, x0, 1e-4, 0.5, 20, seed=seed)
    done = ~b.censored
    assert (b.sigma0[done] > 0).all() and (b.sigma0[done] <= 0.5 + 1e-12).all()
    assert np.isnan(b.sigma0[b.censored]).all()
    assert (b.area >= 0).all()
    st_ = b.stopped_times()
    assert (st_ <= 0.5 + 1e-12).all()


def test_sigma_tail_oracle_slope():
    # local slope of erf(1/sqrt(t)) approaches -1/2
    t = np.array([10.0, 30.0])
    s = special.erf(1 / np.sqrt(t))
    slope = np.diff(np.log(s)) / np.diff(np.log(t))
    assert -0.5 < slope[0] < -0.45
