"""Censored survival tables, power-law tail fits, KS tests and the exact
negative-binomial concentration oracle.

A sample is a pair ``(value, censored)``.  ``censored`` means the quantity
was only observed to exceed ``value`` (the run hit a cap).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import streams

DEFAULT_GRID_BASE = 2**0.5
MIN_EXCEED = 30
MIN_POINTS = 8
SLOPE_TOL = 0.1
N_BOOT = 200


class TailFitWarning(UserWarning):
    pass


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        return (0.0, 1.0)
    p = k / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, mid - half), min(1.0, mid + half))


# survival tables


def geometric_grid(base: float, top: float, start: float = 1.0,
                   integer: bool = True) -> np.ndarray:
    """Grid ``start * base**j`` up to ``top``; rounded up to distinct integers if ``integer``."""
    if base <= 1:
        raise ValueError("grid base must exceed 1")
    out = []
    j = 0
    while True:
        # round first so exact powers are not pushed up by float error
        g = round(start * base**j, 9)
        if integer:
            g = math.ceil(g)
        if g > top:
            break
        if not out or g != out[-1]:
            out.append(g)
        j += 1
    return np.array(out, dtype=np.float64)


def _km_at(values, events, weights, thresholds):
    """Weighted Kaplan-Meier P[X > t] and Greenwood variance of log S at ``thresholds``.

    ``values`` sorted unique atoms; ``events`` and ``weights`` are the
    event and total weights per atom.  A censored atom at c stays at risk at c.
    """
    at_risk = np.cumsum(weights[::-1])[::-1]
    d = events
    mask = d > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(mask, 1.0 - d / at_risk, 1.0)
        gw = np.where(mask & (at_risk > d), d / (at_risk * (at_risk - d)), 0.0)
        gw = np.where(mask & (at_risk <= d), np.inf, gw)
    surv = np.cumprod(factor)
    var = np.cumsum(gw)
    idx = np.searchsorted(values, thresholds, side="right") - 1
    s = np.where(idx >= 0, surv[np.maximum(idx, 0)], 1.0)
    v = np.where(idx >= 0, var[np.maximum(idx, 0)], 0.0)
    return s, v


def _atoms(values, censored):
    """Collapse samples to unique (value, censored) atoms with multiplicities."""
    key = np.stack([values, censored.astype(np.float64)], axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    return uniq[:, 0], uniq[:, 1].astype(bool), counts.astype(np.float64)


def _km_from_atoms(av, ac, aw, thresholds):
    vals, inv = np.unique(av, return_inverse=True)
    total = np.bincount(inv, weights=aw, minlength=len(vals))
    ev = np.bincount(inv, weights=aw * (~ac), minlength=len(vals))
    return _km_at(vals, ev, total, thresholds)


@dataclass
class SurvivalTable:
    """Survival counts and Kaplan-Meier estimates on a geometric grid.

    ``exceed[j]`` counts samples known to exceed ``thresholds[j]`` (uncensored
    values above it, or censored at or above it); ``censored_below[j]``
    counts samples censored below it, whose status is unknown.
    """

    thresholds: np.ndarray
    at_risk: np.ndarray
    exceed: np.ndarray
    censored_below: np.ndarray
    survival: np.ndarray
    log_var: np.ndarray
    n_total: int
    grid_base: float
    _atoms: tuple = field(repr=False, default=None)

    @property
    def not_exceed(self) -> np.ndarray:
        return self.n_total - self.exceed - self.censored_below

    def rows(self):
        for j in range(len(self.thresholds)):
            n = float(self.thresholds[j])
            yield {
                "n": int(n) if n.is_integer() else n,
                "at_risk": int(self.at_risk[j]),
                "survivors": int(self.exceed[j]),
                "censored": int(self.censored_below[j]),
                "survival": float(self.survival[j]),
            }


def build_survival(values, censored=None, grid_base: float = DEFAULT_GRID_BASE,
                   n_max=None, start: float = 1.0, integer: bool = True) -> SurvivalTable:
    """Survival table of right-censored samples on the grid ``ceil(grid_base**j)``.

    ``values`` may also be a sequence of ``(value, censored)`` pairs.  The grid
    runs up to ``n_max`` (default: the largest sample).  For continuous data
    pass ``integer=False`` to use ``start * grid_base**j`` without rounding.
    """
    if censored is None:
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 2:
            values, censored = arr[:, 0], arr[:, 1].astype(bool)
        else:
            values, censored = arr, np.zeros(arr.shape, dtype=bool)
    values = np.asarray(values, dtype=np.float64)
    censored = np.asarray(censored, dtype=bool)
    if values.size == 0:
        raise ValueError("no samples")
    if values.shape != censored.shape:
        raise ValueError("values and censored flags differ in shape")
    if censored.all():
        raise ValueError("all samples are censored")
    finite_top = values[np.isfinite(values)].max()
    top = finite_top if n_max is None else n_max
    thresholds = geometric_grid(grid_base, max(top, start), start, integer)

    sv_unc = np.sort(values[~censored])
    sv_cen = np.sort(values[censored])
    unc_gt = len(sv_unc) - np.searchsorted(sv_unc, thresholds, side="right")
    cen_ge = len(sv_cen) - np.searchsorted(sv_cen, thresholds, side="left")
    exceed = (unc_gt + cen_ge).astype(np.int64)
    censored_below = (len(sv_cen) - cen_ge).astype(np.int64)
    atoms = _atoms(values, censored)
    surv, var = _km_from_atoms(*atoms, thresholds)
    return SurvivalTable(
        thresholds=thresholds,
        at_risk=values.size - censored_below,
        exceed=exceed,
        censored_below=censored_below,
        survival=surv,
        log_var=var,
        n_total=int(values.size),
        grid_base=grid_base,
        _atoms=atoms,
    )


# tail fits


@dataclass
class TailFit:
    """``P[X > n] ~ prefactor * n**(-exponent)`` fitted on ``fit_window``."""

    exponent: float
    prefactor: float
    ci_exponent: tuple
    fit_window: tuple
    r2: float
    se: float
    n_points: int
    stable: bool = True
    warning: str = ""

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "ci_exponent": list(self.ci_exponent),
            "fit_window": list(self.fit_window),
            "r2": self.r2,
            "se": self.se,
            "n_points": self.n_points,
            "stable": self.stable,
            "warning": self.warning,
        }


def _wls(x, y, w):
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    icpt = ym - slope * xm
    resid = y - icpt - slope * x
    syy = (w * (y - ym) ** 2).sum()
    r2 = 1.0 - (w * resid**2).sum() / syy if syy > 0 else 1.0
    return slope, icpt, math.sqrt(1.0 / sxx), r2


def _window_stable(lx, ly, se, slope, lo, hi, tol):
    """Local slopes over roughly one octave stay within ``tol`` of ``slope`` (plus noise)."""
    step = math.log(2.0)
    j = lo
    while j < hi:
        k = j + 1
        while k < hi and lx[k] - lx[j] < step - 1e-9:
            k += 1
        dx = lx[k] - lx[j]
        if dx <= 0:
            break
        local = (ly[k] - ly[j]) / dx
        noise = 2.0 * math.sqrt(se[j] ** 2 + se[k] ** 2) / dx
        if abs(local - slope) > tol * abs(slope) + noise:
            return False
        j = k
    return True


def fit_tail(table: SurvivalTable, n_lo=None, n_hi=None, min_exceed: int = MIN_EXCEED,
             n_boot: int = N_BOOT, seed=0, tol: float = SLOPE_TOL,
             min_points: int = MIN_POINTS) -> TailFit:
    """Weighted log-log regression of the Kaplan-Meier survival.

    Usable grid points have at least ``min_exceed`` samples known to exceed
    them.  Unless ``n_lo``/``n_hi`` are given, the window is the widest run
    of at least ``min_points`` consecutive usable points whose octave-scale
    local slopes agree with the fitted slope to within ``tol``.  Weights are
    inverse Greenwood variances.  The exponent CI comes from a bootstrap
    over samples with the window held fixed.
    """
    n = table.thresholds
    ok = (table.exceed >= min_exceed) & (table.survival > 0) & np.isfinite(table.log_var)
    if n_lo is not None:
        ok &= n >= n_lo
    if n_hi is not None:
        ok &= n <= n_hi
    idx = np.flatnonzero(ok)
    if idx.size < 3:
        raise ValueError(f"only {idx.size} usable grid points; need at least 3")
    lx = np.log(n[idx])
    ly = np.log(table.survival[idx])
    var = np.maximum(table.log_var[idx], 1e-300)
    se = np.sqrt(var)
    w = 1.0 / np.maximum(var, 1e-12)

    warn = ""
    stable = True
    best = None
    if n_lo is None and n_hi is None and idx.size >= min_points:
        k = idx.size
        for width in range(k, min_points - 1, -1):
            cands = []
            for lo in range(0, k - width + 1):
                hi = lo + width
                slope, icpt, sse, _ = _wls(lx[lo:hi], ly[lo:hi], w[lo:hi])
                if slope < 0 and _window_stable(lx, ly, se, slope, lo, hi - 1, tol):
                    cands.append((sse, lo, hi))
            if cands:
                best = min(cands)[1:]
                break
        if best is None:
            stable = False
            warn = "no window with stable local slope; fitted on all usable points"
    elif idx.size < min_points:
        stable = False
        warn = f"only {idx.size} usable grid points (< {min_points})"
    if best is None:
        best = (0, idx.size)
    lo, hi = best
    slope, icpt, sse_analytic, r2 = _wls(lx[lo:hi], ly[lo:hi], w[lo:hi])
    if n_lo is not None or n_hi is not None:
        if not _window_stable(lx, ly, se, slope, lo, hi - 1, tol):
            stable = False
            warn = "local slope varies by more than the tolerance in the requested window"
    window = (float(n[idx[lo]]), float(n[idx[hi - 1]]))

    boot = _bootstrap_exponents(table, idx[lo:hi], n_boot, seed)
    exponent = -slope
    if boot.size:
        q = np.quantile(boot, [0.025, 0.975])
        ci = (float(min(q[0], exponent)), float(max(q[1], exponent)))
        se_out = float(boot.std(ddof=1))
    else:
        ci = (exponent - 1.96 * sse_analytic, exponent + 1.96 * sse_analytic)
        se_out = sse_analytic
    if warn:
        warnings.warn(warn, TailFitWarning, stacklevel=2)
    return TailFit(
        exponent=float(exponent),
        prefactor=float(math.exp(icpt)),
        ci_exponent=ci,
        fit_window=window,
        r2=float(r2),
        se=se_out,
        n_points=int(hi - lo),
        stable=stable,
        warning=warn,
    )


def _bootstrap_exponents(table, sel, n_boot, seed):
    if n_boot <= 0 or table._atoms is None:
        return np.empty(0)
    av, ac, aw = table._atoms
    rng = streams.generator(streams.resolve_seed(seed), 0, 0, streams.AUX)
    thresholds = table.thresholds[sel]
    lx = np.log(thresholds)
    p = aw / aw.sum()
    out = []
    for _ in range(n_boot):
        wb = rng.multinomial(table.n_total, p).astype(np.float64)
        s, v = _km_from_atoms(av, ac, wb, thresholds)
        good = (s > 0) & np.isfinite(v)
        if good.sum() < 3:
            continue
        slope, _, _, _ = _wls(lx[good], np.log(s[good]), 1.0 / np.maximum(v[good], 1e-12))
        out.append(-slope)
    return np.asarray(out)


def fit_samples(values, censored=None, grid_base=DEFAULT_GRID_BASE, **kw) -> TailFit:
    """``fit_tail(build_survival(values, censored))``."""
    return fit_tail(build_survival(values, censored, grid_base), **kw)


# distribution distances


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    n_a: int
    n_b: int

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "pvalue": self.pvalue, "n_a": self.n_a, "n_b": self.n_b}


def ks_two_sample(a, b) -> KSResult:
    """Two-sample Kolmogorov-Smirnov statistic with asymptotic p-value.

    Infinite values are allowed (e.g. never-absorbed paths).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    res = sps.ks_2samp(a, b, method="asymp")
    return KSResult(float(res.statistic), float(res.pvalue), a.size, b.size)


# concentration oracle


class ConcentrationViolation(AssertionError):
    pass


@dataclass(frozen=True)
class ConcentrationReport:
    x_max: int
    y_max: int
    pairs_checked: int
    min_slack: float
    argmin: tuple
    min_ratio: float
    argmin_ratio: tuple


def nb_half_tail_exact(x: int, y_max: int):
    """Exact ``P[|S_x - x| >= y]`` for y = 1..y_max as (numerators, denominator).

    ``S_x`` is the number of successes before the x-th failure with fair
    trials, so ``P[S_x = k] = C(k+x-1, k) / 2**(k+x)``.
    """
    top = x + y_max
    den = 1 << (x + top)
    # numerators of P[S = k] over the common denominator 2**(x+top)
    num = []
    c = 1
    for k in range(top + 1):
        if k > 0:
            c = c * (k + x - 1) // k
        num.append(c << (top - k))
    cdf = []
    acc = 0
    for v in num:
        acc += v
        cdf.append(acc)
    out = []
    for y in range(1, y_max + 1):
        lower = cdf[x - y] if x - y >= 0 else 0
        upper = den - cdf[x + y - 1]
        out.append(lower + upper)
    return out, den


def concentration_bound_check(x_max: int, y_max: int) -> ConcentrationReport:
    """Verify ``P[|S_x - x| >= y] <= 2 exp(-y^2 / (6 max(x, y)))`` exhaustively.

    Probabilities are computed exactly with integer arithmetic and rounded
    once to float.  Raises ``ConcentrationViolation`` at the first failure.
    """
    if not (1 <= x_max <= 2000 and 1 <= y_max <= 2000):
        raise ValueError("x_max and y_max must lie in [1, 2000]")
    min_slack = math.inf
    argmin = None
    min_ratio = math.inf
    argmin_ratio = None
    for x in range(1, x_max + 1):
        nums, den = nb_half_tail_exact(x, y_max)
        for y, nm in enumerate(nums, start=1):
            bound = 2.0 * math.exp(-y * y / (6.0 * max(x, y)))
            lhs = nm / den
            if lhs > bound:
                raise ConcentrationViolation(f"bound violated at x={x}, y={y}: {lhs} > {bound}")
            slack = bound - lhs
            if slack < min_slack:
                min_slack, argmin = slack, (x, y)
            if lhs > 0:
                ratio = bound / lhs
                if ratio < min_ratio:
                    min_ratio, argmin_ratio = ratio, (x, y)
    return ConcentrationReport(x_max, y_max, x_max * y_max, min_slack, argmin,
                               min_ratio, argmin_ratio)


# diffusion approximation of the branching process


@dataclass(frozen=True)
class MarginalReport:
    ks: KSResult
    n: int
    t: float
    drift: float
    conditioned: bool
    bp_runs: int
    acceptance: float
    sde_method: str

    def to_dict(self) -> dict:
        return {
            "ks": self.ks.to_dict(), "n": self.n, "t": self.t, "drift": self.drift,
            "conditioned": self.conditioned, "bp_runs": self.bp_runs,
            "acceptance": self.acceptance, "sde_method": self.sde_method,
        }


def marginal_distance_bp_vs_sde(law, n: int = 1000, t: float = 1.0, runs: int = 10**4,
                                dt: float = 1e-4, seed=None, conditioned: bool = False,
                                sde_method: str = "auto", height_factor: int = 4,
                                matched_barrier: bool = True,
                                workers=None) -> MarginalReport:
    """KS distance between ``V_floor(nt)/n`` from ``V_0 = n`` and the stopped SDE at time t.

    The SDE starts at 1 with drift ``delta``, or ``1 - |delta - 1|`` when
    ``conditioned``.  Conditioned paths come from rejection sampling, and a
    path reaching ``height_factor * n`` counts as surviving.  That cap
    removes the extinct paths that climb past it.  With ``matched_barrier``
    the SDE side is conditioned the same way, on reaching 0 before
    ``height_factor``, which is the scaling limit of the capped process.
    Otherwise the plain stopped SDE is used and the cap costs a KS bias of
    roughly ``0.5 / (height_factor - 1)``.  ``sde_method`` selects the
    sampler for the unconditioned case.
    """
    from . import branching, diffusion

    if n < 1:
        raise ValueError("n must be positive")
    seed = streams.resolve_seed(seed)
    delta = law.delta
    gen = int(math.floor(n * t))
    if conditioned:
        drift = 1.0 - abs(delta - 1.0)
        batch = branching.conditioned_bp_batch(
            law, n, runs, gen_cap=10**8, seed=seed, height_cap=height_factor * n,
            observe_gen=gen, workers=workers,
        )
        acceptance = batch.acceptance
    else:
        drift = delta
        batch = branching.bp_batch(law, n, runs, gen_cap=gen, seed=seed, observe_gen=gen,
                                   workers=workers)
        acceptance = 1.0
    bp_vals = batch.observed / n
    if conditioned and matched_barrier and delta > 1:
        sde_method = "euler-barrier"
        sde, _ = diffusion.sample_marginal_below(drift, 1.0, t, runs, float(height_factor),
                                                 dt=dt, seed=seed, path_start=10**9,
                                                 workers=workers)
    else:
        if sde_method == "auto":
            sde_method = "exact" if diffusion.stopped_marginal_exact_ok(drift) else "euler"
        sde = diffusion.sample_marginal(drift, 1.0, t, runs, dt=dt, seed=seed,
                                        method=sde_method, path_start=runs, workers=workers)
    return MarginalReport(ks_two_sample(bp_vals, sde), n, t, drift, conditioned, len(bp_vals),
                          acceptance, sde_method)
