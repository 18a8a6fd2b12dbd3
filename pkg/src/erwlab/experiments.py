"""Composite experiments: return times from 0, censored mean return time,
and the sweep of tail exponents over delta.

Depths and durations of excursions come from the branching process.  The
depth of an excursion above 0 is the extinction time of V started from 1,
and its duration is ``2 * progeny - 1``.  A walk from 0 returns at time
``R = 1 + T_0`` measured from the first site it visits.  A left excursion is
a right excursion of the mirrored environment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import branching, parallel, streams
from ._backend import kernels
from .branching import CENSOR_NONE
from .cookies import CookieLaw, equal_strength_law, mirror
from .stats import TailFit, build_survival, fit_tail
from .walk import WalkConfig, simulate_walks


@dataclass
class ReturnSample:
    """Return times from 0.  ``R`` is exact where ``returned``; otherwise it is
    a lower bound (censored) or the walk escaped."""

    side: np.ndarray
    R: np.ndarray
    returned: np.ndarray
    censored: np.ndarray
    runs: int
    cap: int


def return_times(law: CookieLaw, runs: int, cap: int, seed=None, path_start: int = 0,
                 method: str = "bp", height_cap=None, workers=None) -> ReturnSample:
    """Return times R from 0, exact up to ``cap``.

    With ``method="bp"`` the first step is read from the walk's own coins
    and each excursion is a branching-process path of the matching side,
    stopped once ``2 * progeny`` exceeds ``cap``.  ``method="walk"`` runs
    the walk directly with step cap ``cap``.
    """
    seed = streams.resolve_seed(seed)
    paths = parallel.path_range(path_start, runs)
    if method == "walk":
        b = simulate_walks(WalkConfig(law, 0, cap, cap), runs, seed, path_start, workers)
        return ReturnSample(b.side, b.duration, b.returned, ~b.returned, runs, cap)
    if method != "bp":
        raise ValueError(f"unknown method {method!r}")
    probs, cumw = law.kernel_args()
    side = parallel.map_paths(kernels.first_step_batch, paths, (probs, cumw, seed),
                              workers=workers).astype(np.int64)
    R = np.zeros(runs, dtype=np.int64)
    returned = np.zeros(runs, dtype=bool)
    censored = np.zeros(runs, dtype=bool)
    for s, lw in ((1, law), (-1, mirror(law))):
        sel = side == s
        if not sel.any():
            continue
        b = branching._bp_kernel(lw, 1, paths[sel], cap, seed, height_cap, cap // 2, False, -1,
                                 workers)
        R[sel] = 2 * b.progeny
        returned[sel] = b.extinct
        censored[sel] = ~b.extinct & (b.censor_code != CENSOR_NONE)
    return ReturnSample(side, R, returned, censored, runs, cap)


@dataclass
class MeanRRow:
    cap: int
    mean: float
    se: float
    returned_below_cap: int


@dataclass
class MeanRTable:
    delta: float
    rows: list
    ratio: float
    runs: int
    method: str

    def to_dict(self) -> dict:
        return {
            "delta": self.delta, "ratio": self.ratio, "runs": self.runs, "method": self.method,
            "rows": [r.__dict__ for r in self.rows],
        }


def censored_mean_R(delta, caps=(10**4, 10**6), budget: int = 10**5, seed=None,
                    method: str = "bp", law=None, workers=None) -> MeanRTable:
    """Truncated means ``E[R; R <= cap]`` from one shared sample of ``budget`` walks from 0.

    ``ratio`` is the largest cap's mean over the smallest cap's.  It stays
    near 1 when the mean return time given return is finite and grows with
    the caps otherwise.
    """
    law = equal_strength_law(delta) if law is None else law
    caps = sorted(int(c) for c in caps)
    rs = return_times(law, budget, caps[-1], seed, method=method, workers=workers)
    rows = []
    for c in caps:
        x = np.where(rs.returned & (rs.R <= c), rs.R, 0).astype(float)
        rows.append(MeanRRow(c, float(x.mean()), float(x.std(ddof=1) / math.sqrt(budget)),
                             int(np.count_nonzero(x))))
    ratio = rows[-1].mean / rows[0].mean if rows[0].mean > 0 else math.inf
    return MeanRTable(float(law.delta), rows, ratio, budget, method)


# phase sweep


def verdict_from_ci(ci) -> str:
    lo, hi = ci
    if lo > 1:
        return "strongly transient"
    if hi < 1:
        return "not strongly transient"
    return "inconclusive"


@dataclass
class PhaseRow:
    delta: float
    depth: TailFit | None
    duration: TailFit | None
    ret: TailFit | None
    verdict: str
    targets: tuple
    acceptance: float = 1.0
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def fit(f):
            return None if f is None else f.to_dict()

        return {
            "delta": self.delta,
            "targets": {"depth": self.targets[0], "duration": self.targets[1],
                        "return": self.targets[2]},
            "depth": fit(self.depth), "duration": fit(self.duration), "return": fit(self.ret),
            "verdict": self.verdict, "acceptance": self.acceptance, "errors": self.errors,
        }


def phase_targets(delta: float) -> tuple:
    return abs(delta - 1), abs(delta - 1) / 2, abs(abs(delta) - 1) / 2


def phase_point(delta: float, runs: int, seed=None, gen_cap: int = 10**6,
                height_cap: int = 10**4, return_cap: int = 10**7, workers=None,
                **fit_kw) -> PhaseRow:
    """Depth, duration and return-time exponents at one delta (equal-strength law)."""
    seed = streams.resolve_seed(seed)
    law = equal_strength_law(delta)
    row = PhaseRow(float(delta), None, None, None, "inconclusive", phase_targets(delta))
    try:
        b = branching.conditioned_bp_batch(law, 1, runs, gen_cap, seed,
                                           height_cap if law.delta > 1 else None,
                                           workers=workers)
        row.acceptance = b.acceptance
        row.depth = fit_tail(build_survival(b.extinction_time, b.censored), **fit_kw)
        row.duration = fit_tail(build_survival(2 * b.progeny - 1, b.censored), **fit_kw)
    except Exception as exc:  # recorded per row, the sweep goes on
        row.errors.append(f"excursion: {exc}")
    try:
        hc = height_cap if abs(law.delta) > 1 else None
        rs = return_times(law, runs, return_cap, seed, height_cap=hc, workers=workers)
        if abs(law.delta) <= 1:
            vals, cens = rs.R, rs.censored
        else:
            # beyond |delta| = 1 a capped run is treated as a non-return
            vals, cens = rs.R[rs.returned], np.zeros(int(rs.returned.sum()), dtype=bool)
        row.ret = fit_tail(build_survival(vals, cens), **fit_kw)
        row.verdict = verdict_from_ci(row.ret.ci_exponent)
    except Exception as exc:
        row.errors.append(f"return: {exc}")
    return row


def phase_sweep(deltas, budget: int = 10**5, seed=None, workers=None, **kw) -> list:
    """One PhaseRow per delta; failures are recorded on the row."""
    return [phase_point(d, budget, seed, workers=workers, **kw) for d in deltas]
