"""Acceptance suite: exponent recovery, exact oracles and path-exact identities.

Each criterion runs at fixed sample sizes with a pinned seed and reports its
measured values, the target range and its runtime against a wall-clock
budget.  A criterion passes only if every check holds within the budget.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import branching, diffusion, experiments, streams
from .cookies import CookieLaw, equal_strength_law, fair_law
from .stats import (ConcentrationViolation, build_survival, concentration_bound_check, fit_tail,
                    marginal_distance_bp_vs_sde)
from .walk import WalkConfig, simulate_walks

SUITE_SEED = 20140601


@dataclass
class CriterionResult:
    number: int
    key: str
    title: str
    passed: bool
    values: dict
    targets: dict
    runtime: float
    budget: float
    detail: str = ""
    checks: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.values.items())
        return (f"[{status}] {self.number:2d} {self.key}: {shown} "
                f"({self.runtime:.1f} s of {self.budget:.0f} s)")

    def to_dict(self) -> dict:
        return asdict(self)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


@dataclass(frozen=True)
class Target:
    """Closed range ``[lo, hi]``, or ``[lo, hi)`` with ``open_hi``."""

    lo: float = -math.inf
    hi: float = math.inf
    open_hi: bool = False

    def holds(self, x) -> bool:
        if x != x or x < self.lo:  # nan fails
            return False
        return x < self.hi if self.open_hi else x <= self.hi

    def __str__(self):
        return f"[{self.lo:g}, {self.hi:g}{')' if self.open_hi else ']'}"


Z3 = Target(-3.0, 3.0)
ZERO = Target(0, 0)

TARGETS = {
    "duration": {"exponent": Target(0.43, 0.57)},
    "depth": {"exponent": Target(0.85, 1.15)},
    "conditioned": {"extinction": Target(0.85, 1.15), "progeny": Target(0.40, 0.60)},
    "harmonic": {"exponent": Target(0.85, 1.15)},
    "transience": {"ratio_delta2": Target(2.0), "ratio_delta4": Target(hi=1.1)},
    "martingale": {f"{q}[{d}]": Z3 for d in ("0", "0.5", "2") for q in ("z_dm", "z_dq")},
    "concentration": {"violations": ZERO},
    "diffusion": {"ks_fair": Target(0, 0.05, True), "ks_conditioned": Target(0, 0.07, True)},
    "sde-tails": {"sigma": Target(0.43, 0.57), "area": Target(0.20, 0.30)},
    "scaling": {"ks": Target(0, 0.05, True)},
    "coupling": {"mismatches[0]": ZERO, "mismatches[0.5]": ZERO,
                 "returned[0]": Target(1), "returned[0.5]": Target(1)},
}


# criteria; each returns (values, detail)


def duration_tail(seed, workers):
    b = simulate_walks(WalkConfig(fair_law(), 1, 10**6, 10**6), 10**6, seed, workers=workers)
    f = fit_tail(b.duration_survival(), seed=seed)
    return ({"exponent": f.exponent},
            f"ci={f.ci_exponent} window={f.fit_window} censored={int(b.censored.sum())}")


def depth_tail(seed, workers):
    b = branching.bp_batch(fair_law(), 1, 10**6, 10**6, seed, workers=workers)
    f = fit_tail(build_survival(b.extinction_time, b.censored), seed=seed)
    return {"exponent": f.exponent}, f"ci={f.ci_exponent} window={f.fit_window}"


def conditioned_tails(seed, workers):
    r = branching.conditioned_tails(equal_strength_law(2.0), 10**5, 10**6, seed,
                                    height_cap=10**4, workers=workers)
    return ({"extinction": r.extinction.exponent, "progeny": r.progeny.exponent,
             "acceptance": r.acceptance},
            f"attempts={r.attempts} windows={r.extinction.fit_window},{r.progeny.fit_window}")


def harmonic(seed, workers):
    grid = [2**k for k in range(3, 11)]
    h = branching.estimate_h(equal_strength_law(2.0), grid, 10**5, 10**6, seed,
                             height_factor=10, workers=workers)
    return ({"exponent": h.exponent},
            f"ci={h.ci_exponent} h={[round(e.h_hat, 5) for e in h.estimates]}")


def transience(seed, workers):
    a = experiments.censored_mean_R(2.0, (10**4, 10**6), 10**5, seed, workers=workers)
    b = experiments.censored_mean_R(4.0, (10**4, 10**6), 10**5, seed, workers=workers)
    return ({"ratio_delta2": a.ratio, "ratio_delta4": b.ratio},
            f"means2={[r.mean for r in a.rows]} means4={[r.mean for r in b.rows]}")


def martingale(seed, workers):
    values = {}
    for j, d in enumerate((0.0, 0.5, 2.0)):
        pooled = branching.martingale_check(equal_strength_law(d), n=10**5, seed=seed + j,
                                            workers=workers)[-1]
        values[f"z_dm[{d:g}]"] = pooled.z_dm
        values[f"z_dq[{d:g}]"] = pooled.z_dq
    return values, ""


def concentration(seed, workers):
    try:
        r = concentration_bound_check(300, 300)
    except ConcentrationViolation as exc:
        return {"violations": 1}, str(exc)
    return ({"violations": 0, "pairs": r.pairs_checked, "min_ratio": r.min_ratio},
            f"min_slack={r.min_slack} at {r.argmin}")


def diffusion_marginal(seed, workers):
    u = marginal_distance_bp_vs_sde(fair_law(), 1000, 1.0, 10**4, seed=seed, workers=workers)
    c = marginal_distance_bp_vs_sde(equal_strength_law(2.0), 100, 1.0, 10**4, seed=seed,
                                    conditioned=True, height_factor=4, workers=workers)
    return ({"ks_fair": u.ks.statistic, "ks_conditioned": c.ks.statistic},
            f"sde={u.sde_method},{c.sde_method} acceptance={c.acceptance:.4g}")


def sde_tails(seed, workers):
    r = diffusion.sample_functionals(0.5, 1.0, 1e-4, 40.0, 10**5, seed, workers=workers,
                                     sigma_window=(4.0, None), area_window=(2.0, None))
    return ({"sigma": r.sigma_fit.exponent, "area": r.area_fit.exponent,
             "censored": r.censored_fraction},
            f"windows={r.sigma_fit.fit_window},{r.area_fit.fit_window}")


def scaling(seed, workers):
    r = diffusion.scaling_check(0.0, 1.0, 2.0, 1e-4, 10**4, seed, horizon=100.0,
                                workers=workers)
    return {"ks": r.ks.statistic}, f"censored={r.censored_1:.3f},{r.censored_2:.3f}"


def coupling_laws() -> dict:
    """A fair law and a two-stack mixture with delta = 1/2."""
    mix = CookieLaw(2, (((0.9, 0.6), 0.5), ((0.5, 0.5), 0.5)))
    return {0.0: fair_law(), 0.5: mix}


def coupling_mismatches(law, runs, cap, seed, workers=None) -> dict:
    """Compare walk excursions from 1 with coupled BP paths on the same streams."""
    w = simulate_walks(WalkConfig(law, 1, cap, cap), runs, seed, workers=workers)
    b = branching.bp_batch(law, 1, runs, cap, seed, height_cap=cap, progeny_cap=cap,
                           coupled=True, workers=workers)
    r = w.returned
    return {
        "returned": int(r.sum()),
        "depth": int(np.count_nonzero(w.depth[r] != b.extinction_time[r])),
        "duration": int(np.count_nonzero(w.duration[r] != 2 * b.progeny[r] - 1)),
        "not_extinct": int(np.count_nonzero(~b.extinct[r])),
    }


def coupling(seed, workers):
    values = {}
    for d, law in coupling_laws().items():
        mm = coupling_mismatches(law, 10**4, 10**4, seed, workers)
        values[f"returned[{d:g}]"] = mm["returned"]
        values[f"mismatches[{d:g}]"] = mm["depth"] + mm["duration"] + mm["not_extinct"]
    return values, ""


CRITERIA = [
    (1, "duration", "excursion duration tail at delta=0", duration_tail, 600),
    (2, "depth", "excursion depth tail at delta=0", depth_tail, 300),
    (3, "conditioned", "conditioned BP tails at delta=2", conditioned_tails, 900),
    (4, "harmonic", "decay of h(n) at delta=2", harmonic, 600),
    (5, "transience", "censored mean return time ratio", transience, 1200),
    (6, "martingale", "one-step martingale diagnostics", martingale, 120),
    (7, "concentration", "negative-binomial concentration bound", concentration, 60),
    (8, "diffusion", "BP marginal against the SDE", diffusion_marginal, 600),
    (9, "sde-tails", "SDE first-passage and area tails", sde_tails, 900),
    (10, "scaling", "Brownian scaling of sigma0", scaling, 300),
    (11, "coupling", "walk/BP coupling identity", coupling, 120),
]

KEYS = [c[1] for c in CRITERIA]


def criterion_seed(seed, number: int) -> int:
    return int(seed) + 1000 * number


def run_criterion(which, seed=None, workers=None) -> CriterionResult:
    """Run one criterion, by number or key."""
    for number, key, title, func, budget in CRITERIA:
        if which in (number, key, str(number)):
            break
    else:
        raise KeyError(f"unknown criterion {which!r}")
    seed = SUITE_SEED if seed is None else streams.resolve_seed(seed)
    t0 = time.perf_counter()
    values, detail = func(criterion_seed(seed, number), workers)
    runtime = time.perf_counter() - t0
    targets = TARGETS[key]
    checks = {name: t.holds(values[name]) for name, t in targets.items()}
    checks["runtime"] = runtime < budget
    return CriterionResult(number, key, title, all(checks.values()), values,
                           {k: str(t) for k, t in targets.items()}, runtime, budget, detail,
                           checks)


def run_suite(selected=None, seed=None, workers=None, report=None) -> list:
    """Run the selected criteria (all by default); ``report`` gets each result as it lands."""
    out = []
    for number, key, *_ in CRITERIA:
        if selected and number not in selected and key not in selected \
                and str(number) not in selected:
            continue
        res = run_criterion(number, seed, workers)
        if report is not None:
            report(res)
        out.append(res)
    return out
