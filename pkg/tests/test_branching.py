import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from erwlab import branching
from erwlab.branching import (CENSOR_GEN, CENSOR_HEIGHT, CENSOR_PROGENY, LowAcceptanceError,
                              bp_batch, bp_step, conditioned_bp_batch, estimate_h,
                              martingale_check, modified_arrays, offspring_moments,
                              offspring_sample, overshoot_decay, overshoot_stat, progeny_tail,
                              simulate_bp, simulate_conditioned_bp, simulate_modified_bp)
from erwlab.cookies import CookieLaw, SiteStack, equal_strength_law, fair_law
from erwlab.stats import build_survival, fit_tail, wilson_interval

MIX = CookieLaw(3, (((0.9, 0.2, 0.7), 0.4), ((0.5, 0.95, 0.1), 0.6)))


def gof_pvalue(sample, pmf, kmax):
    """Chi-square goodness of fit on {0..kmax-1} plus a pooled tail cell."""
    counts = np.bincount(np.minimum(sample, kmax), minlength=kmax + 1)
    p = np.array([pmf(k) for k in range(kmax)])
    p = np.append(p, 1.0 - p.sum())
    return sps.chisquare(counts, p * len(sample)).pvalue


# offspring law


@pytest.mark.parametrize("lw", [fair_law(), fair_law(3), equal_strength_law(2.0),
                                equal_strength_law(-1.2), MIX])
def test_offspring_moments(lw):
    mean, var = offspring_moments(lw)
    assert mean - lw.m == pytest.approx(lw.delta, abs=1e-12)
    x = offspring_sample(lw, lw.m, 2 * 10**5, seed=1)
    se = math.sqrt(var / len(x))
    assert abs(x.mean() - mean) < 4 * se
    assert x.var() == pytest.approx(var, rel=0.03)


def test_offspring_moments_beyond_m():
    lw = equal_strength_law(2.0)
    mean, var = offspring_moments(lw, 10)
    assert mean == pytest.approx(10 + lw.delta)
    assert offspring_moments(lw, 0) == (0.0, 0.0)


def test_bp_step_zero():
    assert bp_step(0, SiteStack((0.5,)), seed=1) == 0


def test_bp_step_matches_batch_and_moves_cursor():
    lw = equal_strength_law(1.0)
    batch = offspring_sample(lw, 4, 20, seed=3, site=1)
    for p in range(20):
        s = SiteStack(lw.stacks[0][0])
        assert bp_step(4, s, seed=3, path=p) == batch[p]
        assert s.cursor == batch[p] + 4
    s = SiteStack((0.5,), cursor=1)
    with pytest.raises(ValueError):
        bp_step(1, s)


def test_fair_one_failure_geometric():
    x = offspring_sample(fair_law(), 1, 10**5, seed=4)
    assert gof_pvalue(x, lambda j: 2.0 ** -(j + 1), 12) > 0.01


def test_fair_three_failures_negative_binomial():
    x = offspring_sample(fair_law(), 3, 10**5, seed=5)
    pmf = lambda j: math.comb(j + 2, j) * 2.0 ** -(j + 3)  # noqa: E731
    assert gof_pvalue(x, pmf, 15) > 0.01


@pytest.mark.parametrize("coupled", [False, True])
def test_forced_successes(coupled):
    lw = CookieLaw(2, (((1.0, 1.0), 1.0),), check_wel=False)
    x = offspring_sample(lw, 1, 5000, seed=6, coupled=coupled)
    assert (x >= 2).all()


def test_coupled_and_fast_path_agree_in_law():
    lw = equal_strength_law(1.5)
    a = offspring_sample(lw, 7, 40000, seed=7, coupled=False)
    b = offspring_sample(lw, 7, 40000, seed=8, coupled=True)
    assert sps.ks_2samp(a, b).pvalue > 0.001


def test_trials_after_cookies_are_fair():
    # with zero-probability cookies, the first m trials are failures, so the
    # successes before the (m + r)-th failure come from fair coins only
    lw = CookieLaw(2, (((0.0, 0.0), 1.0),), check_wel=False)
    x = offspring_sample(lw, 2 + 5, 50000, seed=9, coupled=True)
    mean_trials = x.mean() / (x.mean() + 5)
    lo, hi = wilson_interval(int(x.sum()), int(x.sum()) + 5 * len(x), z=3.29)
    assert lo <= 0.5 <= hi
    assert abs(mean_trials - 0.5) < 0.01


# paths


def test_simulate_bp_edge_cases():
    p = simulate_bp(fair_law(), 0, 100, seed=1)
    assert p.extinction_time == 0 and p.total_progeny == 0 and not p.censored
    with pytest.raises(ValueError):
        simulate_bp(fair_law(), -1)


def test_single_path_matches_batch():
    lw = MIX
    b = bp_batch(lw, 2, 100, 500, seed=3)
    for i in (0, 33, 99):
        p = simulate_bp(lw, 2, 500, seed=3, path=i)
        assert p.censored == (not b.extinct[i])
        if not p.censored:
            assert p.extinction_time == b.extinction_time[i]
            assert p.total_progeny == b.progeny[i]


def test_fair_extinction_at_one():
    b = bp_batch(fair_law(), 1, 40000, 100, seed=2)
    k = int((b.extinction_time == 1).sum())
    lo, hi = wilson_interval(k, 40000, z=3.29)
    assert lo <= 0.5 <= hi


def test_fair_survival_is_exactly_one_over_n_plus_one():
    # linear fractional offspring law f(s) = 1/(2 - s): P[sigma > n] = 1/(n + 1)
    runs = 2 * 10**5
    b = bp_batch(fair_law(), 1, runs, 10**5, seed=10)
    for n in (1, 3, 10, 30, 100):
        k = int(np.count_nonzero(b.censored | (b.extinction_time > n)))
        lo, hi = wilson_interval(k, runs, z=3.29)
        assert lo <= 1 / (n + 1) <= hi


def test_fair_depth_exponent():
    b = bp_batch(fair_law(), 1, 10**6, 10**6, seed=11)
    f = fit_tail(build_survival(b.extinction_time, b.censored))
    assert abs(f.exponent - 1.0) < 0.1


def test_zero_is_absorbing_and_caps():
    lw = equal_strength_law(2.5)
    for path in range(30):
        traj = simulate_bp(lw, 3, 200, seed=12, path=path).trajectory
        zeros = [i for i, v in enumerate(traj) if v == 0]
        if zeros:
            assert zeros[0] == len(traj) - 1
    b = bp_batch(lw, 3, 500, 50, seed=12, height_cap=100)
    assert set(np.unique(b.censor_code[b.censored])) <= {CENSOR_GEN, CENSOR_HEIGHT}
    assert (b.max_height[b.censor_code == CENSOR_HEIGHT] >= 100).all()
    b = bp_batch(lw, 3, 500, 10**4, seed=12, progeny_cap=300)
    assert (b.censor_code[b.censored] == CENSOR_PROGENY).all()


# modified process and martingales


def test_modified_forced_success():
    lw = CookieLaw(1, (((1.0,), 1.0),), check_wel=False)
    for path in range(20):
        p = simulate_modified_bp(lw, 1, 5, seed=2, path=path)
        assert p.trajectory[1] >= 1


def test_modified_arrays():
    mart, comp = modified_arrays([3, 5, 0, 2], delta=1.0, v=2.0, m=2)
    assert list(mart) == [3, 4, -2, -1]
    assert list(comp) == [0.0, 2 + 2 * 1, 4 + 2 * (1 + 3), 6 + 2 * (1 + 3 + 0)]


def test_modified_trajectory_martingale():
    lw = equal_strength_law(2.0)
    p = simulate_modified_bp(lw, 1, 50, seed=4)
    assert len(p.trajectory) == 51
    assert p.martingale_m[0] == 1
    assert (np.asarray(p.trajectory) >= 0).all()


@pytest.mark.parametrize("d", [0.0, 0.5, 2.0])
def test_martingale_increments(d):
    rows = martingale_check(equal_strength_law(d), n=10**5, seed=int(10 * d) + 1)
    assert rows[-1].state == "pooled"
    assert rows[-1].passed(3.0), rows[-1]
    # 14 per-state z-scores: Bonferroni level for a family-wise rate near 0.1%
    for r in rows[:-1]:
        assert r.passed(4.0), r


def test_martingale_detects_wrong_drift():
    lw = equal_strength_law(1.0)
    x = branching.one_step_increments(lw, 20, 10**5, seed=3)
    dm, _ = branching._martingale_terms(lw, 20, x, branching.offspring_variance(lw), 0.8)
    assert abs(dm.mean() / (dm.std() / math.sqrt(len(dm)))) > 5


# conditioning


def test_conditioned_equals_raw_below_one():
    lw = equal_strength_law(0.5)
    a = conditioned_bp_batch(lw, 1, 500, 1000, seed=5)
    b = bp_batch(lw, 1, 500, 1000, seed=5)
    assert np.array_equal(a.extinction_time, b.extinction_time)
    p = simulate_conditioned_bp(lw, 1, 1000, seed=5, path=7)
    assert p == simulate_bp(lw, 1, 1000, seed=5, path=7)


def test_conditioned_batch_keeps_first_extinct_paths():
    lw = equal_strength_law(2.0)
    c = conditioned_bp_batch(lw, 1, 300, 10**4, seed=6, height_cap=500)
    raw = bp_batch(lw, 1, c.attempts, 10**4, seed=6, height_cap=500)
    assert np.array_equal(c.paths, raw.paths[raw.extinct][:300])
    assert c.extinct.all()
    assert 0 < c.acceptance < 1
    first = simulate_conditioned_bp(lw, 1, 10**4, seed=6, height_cap=500)
    assert first.path == c.paths[0] and not first.censored


def test_conditioned_workers_deterministic():
    lw = equal_strength_law(2.0)
    a = conditioned_bp_batch(lw, 2, 400, 10**4, seed=7, height_cap=300, workers=1)
    b = conditioned_bp_batch(lw, 2, 400, 10**4, seed=7, height_cap=300, workers=2)
    assert np.array_equal(a.paths, b.paths)
    assert np.array_equal(a.progeny, b.progeny)


def test_low_acceptance_raises():
    lw = equal_strength_law(6.0)
    with pytest.raises(LowAcceptanceError):
        conditioned_bp_batch(lw, 400, 10, 10**4, seed=8, height_cap=10**4, max_attempts=2000)


def test_conditioned_drift_is_zero_at_delta_two():
    # V conditioned on extinction has drift 1 - |delta - 1| = 0 at delta = 2; the
    # height cap at 40 * 50 adds a drift of about -2x/cap, within the tolerance
    lw = equal_strength_law(2.0)
    b = conditioned_bp_batch(lw, 50, 300, 10**5, seed=9, height_cap=2000)
    incs = []
    for p in b.paths:
        traj = np.asarray(simulate_bp(lw, 50, 10**5, seed=9, path=int(p),
                                      height_cap=2000).trajectory)
        sel = (traj[:-1] >= 50) & (traj[:-1] <= 200)
        incs.append(np.diff(traj)[sel])
    inc = np.concatenate(incs)
    se = inc.std(ddof=1) / math.sqrt(len(inc))
    assert abs(inc.mean()) < 3 * se + 0.15


def test_conditioned_extinction_exponent_delta_two():
    lw = equal_strength_law(2.0)
    b = conditioned_bp_batch(lw, 1, 3 * 10**4, 10**6, seed=10, height_cap=10**4)
    f = fit_tail(build_survival(b.extinction_time, b.censored))
    assert abs(f.exponent - 1.0) < 0.15


@pytest.mark.parametrize("d,target,tol,runs", [(0.0, 0.5, 0.07, 10**5), (2.0, 0.5, 0.07, 4 * 10**4)])
def test_progeny_tail(d, target, tol, runs):
    f = progeny_tail(equal_strength_law(d), runs, 10**6, seed=11)
    assert abs(f.exponent - target) < tol


def test_progeny_tail_lighter_at_delta_four():
    # the target 3/2 sits behind a pre-asymptotic hump (local slopes near 2 for n < 20),
    # so at this scale only the ordering against delta = 2 is checked
    f = progeny_tail(equal_strength_law(4.0), 2 * 10**4, 10**6, seed=11, height_cap=10**3)
    assert f.exponent > 1.0


def test_progeny_tail_rejects_delta_one():
    with pytest.raises(ValueError):
        progeny_tail(equal_strength_law(1.0), 100)


# harmonic function


def test_h_is_one_below_threshold():
    with pytest.warns(RuntimeWarning):
        h = estimate_h(equal_strength_law(0.5), [1, 4, 16], 1000, seed=1)
    assert h.degenerate
    assert all(e.h_hat == 1.0 for e in h.estimates)


def test_h_monotone_and_decaying():
    h = estimate_h(equal_strength_law(2.0), [2, 4, 8, 16, 32, 64], 20000, seed=2,
                   height_factor=10)
    hs = [e.h_hat for e in h.estimates]
    for a, b in zip(h.estimates, h.estimates[1:]):
        assert b.ci[0] <= a.ci[1]
    assert hs[0] > 3 * hs[-1]
    assert 0.8 < h.exponent < 1.2


def test_h_small_grid_matches_single_runs():
    lw = equal_strength_law(2.0)
    h = estimate_h(lw, [3], 200, 10**5, seed=3, height_factor=20)
    ext = sum(not simulate_bp(lw, 3, 10**5, seed=3, path=p, height_cap=60).censored
              for p in range(200))
    assert h.estimates[0].extinct == ext


# overshoot


def test_overshoot_empty_at_one():
    r = overshoot_stat(fair_law(), 1, 100, seed=1)
    assert r.hits == 0 and math.isnan(r.tail_prob)
    with pytest.raises(ValueError):
        overshoot_stat(fair_law(), 0, 10)


def test_overshoot_tail_decreases():
    res = overshoot_decay(fair_law(), [10, 100], 2 * 10**4, seed=2)
    t10, t100 = (lv["tail_prob"] for lv in res["levels"])
    assert t100 < t10
    assert res["decreasing"]


def test_overshoot_mean_is_sqrt_scale():
    # the overshoot of a sum of x geometric variables has spread ~ sqrt(x); its
    # mean over sqrt(x) stays bounded while the mean itself grows
    res = overshoot_decay(fair_law(), [16, 64, 256, 1024], 10**4, seed=3)
    ratios = [lv["mean_over_sqrt_x"] for lv in res["levels"]]
    assert max(ratios) < 2.0
    assert max(ratios) / min(ratios) < 2.0


def test_overshoot_positive():
    r = overshoot_stat(equal_strength_law(0.5), 50, 5000, seed=4)
    assert r.hits > 0
    assert (r.overshoot >= 0).all()


# properties


@given(st.integers(0, 2**32), st.integers(0, 6), st.floats(-2.0, 3.0))
def test_bp_path_invariants(seed, v0, d):
    lw = equal_strength_law(d)
    b = bp_batch(lw, v0, 40, 300, seed=seed, height_cap=10**4)
    e = b.extinct
    assert (b.progeny[e] >= b.extinction_time[e]).all()
    assert (b.progeny[e] >= v0).all()
    assert (b.max_height >= v0).all()
    assert (b.extinction_time[e] >= (1 if v0 else 0)).all()
    if v0 == 0:
        assert e.all() and (b.progeny == 0).all()


@given(st.integers(0, 2**32), st.integers(1, 40))
def test_offspring_beyond_cookies_mean(seed, r):
    mean, var = offspring_moments(fair_law(), r)
    assert mean == pytest.approx(r)
    assert var == pytest.approx(2 * r)


@given(st.integers(1, 4), st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4),
       st.integers(1, 12))
def test_offspring_mean_identity(m, probs, r):
    lw = CookieLaw(m, ((tuple(probs[:m]), 1.0),), check_wel=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mean, var = offspring_moments(lw, max(r, m))
    if r >= m:
        assert mean - r == pytest.approx(lw.delta, abs=1e-9)
    assert var >= -1e-9
