import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from erwlab.cookies import fair_law
from erwlab.stats import (ConcentrationViolation, TailFitWarning, build_survival,
                          concentration_bound_check, fit_samples, fit_tail, geometric_grid,
                          ks_two_sample, marginal_distance_bp_vs_sde, nb_half_tail_exact,
                          wilson_interval)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 10)
    assert lo == 0.0
    z2 = 1.959963984540054**2
    assert hi == pytest.approx((z2 / 10) / (1 + z2 / 10))
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(1 - hi)
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_geometric_grid():
    assert list(geometric_grid(2, 8)) == [1, 2, 4, 8]
    assert list(geometric_grid(2**0.5, 8)) == [1, 2, 3, 4, 6, 8]
    g = geometric_grid(2, 1.0, start=0.25, integer=False)
    assert list(g) == [0.25, 0.5, 1.0]
    with pytest.raises(ValueError):
        geometric_grid(1.0, 10)


def test_survival_example():
    t = build_survival([1, 2, 4, 8], grid_base=2)
    assert list(t.thresholds) == [1, 2, 4, 8]
    assert list(t.exceed) == [3, 2, 1, 0]
    assert np.allclose(t.survival, [0.75, 0.5, 0.25, 0.0])
    assert t.n_total == 4
    rows = list(t.rows())
    assert rows[0] == {"n": 1, "at_risk": 4, "survivors": 3, "censored": 0, "survival": 0.75}


def test_kaplan_meier_with_censoring():
    t = build_survival([1, 2, 3, 4], [False, True, False, False], n_max=4)
    assert list(t.thresholds) == [1, 2, 3, 4]
    assert np.allclose(t.survival, [0.75, 0.75, 0.375, 0.0])
    # a value censored at c counts as exceeding every threshold up to c
    assert list(t.exceed) == [3, 3, 1, 0]
    assert list(t.censored_below) == [0, 0, 1, 1]
    assert list(t.at_risk) == [4, 4, 3, 3]


def test_pair_input_and_errors():
    a = build_survival([(1, 0), (5, 1), (3, 0)])
    b = build_survival([1, 5, 3], [False, True, False])
    assert np.array_equal(a.survival, b.survival)
    with pytest.raises(ValueError):
        build_survival([])
    with pytest.raises(ValueError):
        build_survival([1, 2], [True, True])
    with pytest.raises(ValueError):
        build_survival([1, 2], [True])


def test_censoring_above_grid_is_inert():
    rng = np.random.default_rng(1)
    v = rng.integers(1, 100, 5000).astype(float)
    base = build_survival(v, n_max=64)
    more = build_survival(np.concatenate([v, np.full(50, 1e6)]),
                          np.concatenate([np.zeros(5000, bool), np.ones(50, bool)]), n_max=64)
    # censored far above every event: each factor 1 - d/at_risk changes, but only slightly
    assert np.allclose(base.survival, more.survival, atol=0.011)
    assert (more.exceed - base.exceed == 50).all()
    assert (more.censored_below == 0).all()


def test_quantile_sample_survival():
    # x_k = N / k gives P[X > n] close to 1/n
    n = 10**5
    x = n / np.arange(1, n + 1)
    t = build_survival(x, n_max=1000)
    assert np.allclose(t.survival * t.thresholds, 1.0, rtol=0.02)
    f = fit_tail(t)
    assert abs(f.exponent - 1.0) < 0.01


def pareto(alpha, size, seed):
    return np.random.default_rng(seed).random(size) ** (-1.0 / alpha)


def test_pareto_fit():
    f = fit_samples(pareto(0.5, 10**5, 2))
    assert abs(f.exponent - 0.5) < 0.02
    assert f.ci_exponent[0] <= f.exponent <= f.ci_exponent[1]
    assert f.stable and f.warning == ""
    assert f.n_points >= 8
    assert 0.5 < f.prefactor < 2.0


def test_pareto_fit_with_censoring():
    v = pareto(0.5, 10**5, 3)
    c = v > 10**6
    f = fit_samples(np.minimum(v, 10**6), c)
    assert abs(f.exponent - 0.5) < 0.02


def test_perturbed_power_law():
    # P[X > x] = (1 + 10/x) / (11 x) on x >= 1
    u = np.random.default_rng(4).random(10**6)
    x = (1 + np.sqrt(1 + 440 * u)) / (22 * u)
    f = fit_samples(x, n_lo=100, n_boot=20)
    assert f.stable
    assert abs(f.exponent - 1.0) < 0.05


def test_explicit_window():
    t = build_survival(pareto(1.0, 10**5, 5))
    f = fit_tail(t, n_lo=4, n_hi=256)
    assert f.fit_window[0] >= 4 and f.fit_window[1] <= 256
    assert abs(f.exponent - 1.0) < 0.05


def test_exponential_tail_warns():
    x = np.random.default_rng(6).exponential(50.0, 10**5)
    with pytest.warns(TailFitWarning):
        f = fit_samples(x)
    assert not f.stable


def test_too_few_points():
    with pytest.raises(ValueError):
        fit_samples([1, 2, 3, 4, 5])


def test_fit_to_dict():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d = fit_samples(pareto(1.0, 2000, 7)).to_dict()
    assert set(d) >= {"exponent", "prefactor", "ci_exponent", "fit_window", "r2", "n_points"}


def test_ks_examples():
    a = np.arange(100.0)
    assert ks_two_sample(a, a).statistic == 0.0
    assert ks_two_sample(a, a + 1000).statistic == 1.0
    r = ks_two_sample(np.array([1.0, np.inf]), np.array([1.0, np.inf]))
    assert r.statistic == 0.0
    assert ks_two_sample([0.0, 1.0, 2.0], [0.5]).statistic == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        ks_two_sample([], [1.0])


def test_nb_half_tail_small():
    nums, den = nb_half_tail_exact(1, 1)
    assert nums[0] / den == 0.75


@pytest.mark.parametrize("x", [1, 2, 5, 17])
def test_nb_half_tail_matches_scipy(x):
    nums, den = nb_half_tail_exact(x, 10)
    dist = sps.nbinom(x, 0.5)
    for y, nm in enumerate(nums, start=1):
        ref = (dist.cdf(x - y) if x - y >= 0 else 0.0) + dist.sf(x + y - 1)
        assert nm / den == pytest.approx(ref, rel=1e-10, abs=1e-300)


def test_concentration_check():
    r = concentration_bound_check(40, 40)
    assert r.pairs_checked == 1600
    assert r.min_slack >= 0
    assert r.min_ratio > 1
    with pytest.raises(ValueError):
        concentration_bound_check(0, 5)
    assert issubclass(ConcentrationViolation, AssertionError)


def test_marginal_distance_small():
    r = marginal_distance_bp_vs_sde(fair_law(), n=200, runs=3000, dt=5e-4, seed=8)
    assert r.ks.statistic < 0.06
    assert r.acceptance == 1.0 and not r.conditioned
    assert r.to_dict()["n"] == 200


@given(st.lists(st.tuples(st.integers(1, 10**4), st.booleans()), min_size=1, max_size=60))
def test_survival_invariants(pairs):
    vals = np.array([p[0] for p in pairs], float)
    cens = np.array([p[1] for p in pairs])
    if cens.all():
        cens[0] = False
    t = build_survival(vals, cens)
    assert (np.diff(t.survival) <= 1e-15).all()
    assert ((t.survival >= 0) & (t.survival <= 1)).all()
    assert (t.not_exceed >= 0).all()
    assert (t.exceed + t.censored_below + t.not_exceed == len(vals)).all()
    assert (np.diff(t.exceed) <= 0).all()
    if not cens.any():
        emp = [(vals > n).mean() for n in t.thresholds]
        assert np.allclose(t.survival, emp)
    assert math.isfinite(float(t.thresholds[-1]))
