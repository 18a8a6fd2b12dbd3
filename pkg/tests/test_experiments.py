import math

import numpy as np
import pytest

from erwlab.cookies import equal_strength_law, fair_law
from erwlab.experiments import (censored_mean_R, phase_point, phase_sweep, phase_targets,
                                return_times, verdict_from_ci)
from erwlab.stats import ks_two_sample


def test_phase_targets():
    assert phase_targets(0.0) == (1.0, 0.5, 0.5)
    assert phase_targets(2.0) == (1.0, 0.5, 0.5)
    assert phase_targets(4.0) == (3.0, 1.5, 1.5)
    assert phase_targets(-3.0) == (4.0, 2.0, 1.0)


def test_verdicts():
    assert verdict_from_ci((1.2, 1.6)) == "strongly transient"
    assert verdict_from_ci((0.3, 0.7)) == "not strongly transient"
    assert verdict_from_ci((0.9, 1.1)) == "inconclusive"


@pytest.mark.parametrize("d", [0.0, 2.0, -2.0])
def test_bp_and_walk_return_times_agree(d):
    lw = equal_strength_law(d)
    a = return_times(lw, 4000, 10**4, seed=1, method="bp")
    b = return_times(lw, 4000, 10**4, seed=2, method="walk")
    assert (a.R[a.returned] % 2 == 0).all()
    assert ks_two_sample(a.R[a.returned], b.R[b.returned]).pvalue > 0.001
    assert abs(a.returned.mean() - b.returned.mean()) < 0.05


def test_return_times_same_side_as_walk():
    lw = equal_strength_law(0.5)
    a = return_times(lw, 2000, 10**3, seed=3, method="bp")
    b = return_times(lw, 2000, 10**3, seed=3, method="walk")
    assert np.array_equal(a.side, b.side)


def test_return_times_bad_method():
    with pytest.raises(ValueError):
        return_times(fair_law(), 10, 10, method="exact")


def test_mean_r_fair_grows():
    t = censored_mean_R(0.0, (10**2, 10**4), 20000, seed=4)
    assert t.ratio >= 2
    assert [r.cap for r in t.rows] == [100, 10**4]
    assert t.rows[0].mean <= t.rows[1].mean


def test_mean_r_strongly_transient_flat():
    t = censored_mean_R(4.0, (10**2, 10**4), 20000, seed=5)
    assert t.ratio <= 1.1
    d = t.to_dict()
    assert d["delta"] == pytest.approx(4.0)
    assert len(d["rows"]) == 2


def test_mean_r_walk_method_matches_bp():
    a = censored_mean_R(2.0, (100, 1000), 20000, seed=6, method="bp")
    b = censored_mean_R(2.0, (100, 1000), 20000, seed=7, method="walk")
    for ra, rb in zip(a.rows, b.rows):
        assert abs(ra.mean - rb.mean) < 4 * math.hypot(ra.se, rb.se)


def test_phase_point_fair():
    r = phase_point(0.0, 20000, seed=8, gen_cap=10**5, return_cap=10**5)
    assert not r.errors
    assert abs(r.depth.exponent - 1.0) < 0.15
    assert abs(r.duration.exponent - 0.5) < 0.1
    assert r.verdict == "not strongly transient"


def test_phase_sweep_rows():
    rows = phase_sweep([0.0, 4.0], budget=5000, seed=9, gen_cap=10**4, height_cap=10**3,
                       return_cap=10**5)
    assert [r.delta for r in rows] == [0.0, 4.0]
    for r in rows:
        d = r.to_dict()
        assert set(d["targets"]) == {"depth", "duration", "return"}
        assert isinstance(d["errors"], list)
    assert rows[1].acceptance < 1.0
