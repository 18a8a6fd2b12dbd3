"""The diffusion dY = delta dt + sqrt(2 Y+) dB: Euler paths, exact marginals,
first-passage and area functionals.

2Y is a squared Bessel process of dimension 2 delta.  Euler paths are
stopped at the first grid crossing of 0, with the crossing time found by
linear interpolation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import parallel, streams
from ._backend import kernels
from .stats import (KSResult, TailFit, build_survival, fit_tail, ks_two_sample)

DEFAULT_DT = 1e-4
DEFAULT_HORIZON = 1e3
FROZEN = "frozen"
DEGENERATE = "degenerate_drift"


def _n_steps(horizon: float, dt: float) -> int:
    return int(math.ceil(horizon / dt - 1e-9))


def _check_dt(dt, x0):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > 1e-3 * max(1.0, x0) * (1 + 1e-12):
        raise ValueError(f"dt={dt} too coarse; need dt <= 1e-3 * max(1, x0)")


@dataclass
class DiffusionPath:
    times: np.ndarray
    values: np.ndarray
    absorbed_at: float | None
    post_absorption_mode: str
    delta: float
    x0: float
    dt: float


def euler_path(delta: float, x0: float, dt: float = DEFAULT_DT, horizon: float = 1.0,
               seed=None, path: int = 0, mode: str = FROZEN) -> DiffusionPath:
    """One Euler-Maruyama path on the grid ``j * dt`` up to ``horizon``.

    After the first crossing of 0 the path stays at 0 (``mode="frozen"``) or,
    for delta < 0, continues as ``delta * (t - sigma)`` (``"degenerate_drift"``).
    """
    if mode not in (FROZEN, DEGENERATE):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == DEGENERATE and delta >= 0:
        raise ValueError("degenerate continuation needs delta < 0")
    if x0 < 0:
        raise ValueError("x0 must be nonnegative")
    _check_dt(dt, x0)
    if horizon < dt:
        raise ValueError("horizon must be at least dt")
    n = _n_steps(horizon, dt)
    times = np.arange(n + 1) * dt
    values, sigma = kernels.euler_trajectory(float(delta), float(x0), float(dt), n,
                                             streams.resolve_seed(seed), int(path))
    if not np.isfinite(values).all():
        raise FloatingPointError("non-finite value in Euler path")
    absorbed = None if math.isnan(sigma) else float(sigma)
    if absorbed is not None and mode == DEGENERATE:
        after = times > absorbed
        values[after] = delta * (times[after] - absorbed)
    return DiffusionPath(times, values, absorbed, mode, float(delta), float(x0), float(dt))


def exact_bessel_marginal(delta: float, x0: float, t: float, size=None, seed=None,
                          path: int = 0):
    """Exact draws of Y(t) from Y(0) = x0, for delta >= 0.

    Uses the Poisson mixture of gammas: ``Y(t) = t * Gamma(delta + N)`` with
    ``N ~ Poisson(x0 / t)`` and ``Gamma(0) = 0``.  For delta = 0 the point 0
    is absorbing and for delta >= 1 it is never reached, so in those cases
    this is also the law of the stopped process.
    """
    if delta < 0:
        raise ValueError("exact sampler needs delta >= 0")
    if t <= 0 or x0 < 0:
        raise ValueError("need t > 0 and x0 >= 0")
    rng = streams.generator(streams.resolve_seed(seed), path, 1, streams.AUX)
    shape = delta + rng.poisson(x0 / t, size=size)
    safe = np.where(shape > 0, shape, 1.0)
    g = rng.standard_gamma(safe)
    out = t * np.where(shape > 0, g, 0.0)
    return float(out) if size is None else out


def stopped_marginal_exact_ok(delta: float) -> bool:
    """True when the exact sampler also gives the law stopped at 0."""
    return delta == 0 or delta >= 1


def sample_marginal(delta: float, x0: float, t: float, runs: int, dt: float = DEFAULT_DT,
                    seed=None, method: str = "auto", path_start: int = 0,
                    workers=None) -> np.ndarray:
    """``runs`` draws of the stopped value Y(t ^ sigma_0).

    ``method`` is "euler", "exact", or "auto" (exact when it is valid for
    the stopped process, Euler otherwise).
    """
    if method == "auto":
        method = "exact" if stopped_marginal_exact_ok(delta) else "euler"
    if method == "exact":
        if not stopped_marginal_exact_ok(delta):
            raise ValueError("exact sampling of the stopped process needs delta = 0 or delta >= 1")
        return exact_bessel_marginal(delta, x0, t, runs, seed, path_start)
    if method != "euler":
        raise ValueError(f"unknown method {method!r}")
    _check_dt(dt, x0)
    n = _n_steps(t, dt)
    _, _, _, obs = parallel.map_paths(
        kernels.euler_batch, parallel.path_range(path_start, runs),
        (float(delta), float(x0), float(dt), n, streams.resolve_seed(seed)),
        (np.array([n], dtype=np.int64),), workers=workers,
    )
    return obs[:, 0]


def sample_unstopped(delta: float, x0: float, t: float, runs: int, dt: float = DEFAULT_DT,
                     seed=None, path: int = 0) -> np.ndarray:
    """Euler draws of Y(t) without stopping at 0, truncating at 0 after each step.

    For delta > 0 this follows the squared Bessel process through 0, the law
    that ``exact_bessel_marginal`` samples.  All paths advance together on
    one stream addressed by ``path``.
    """
    if delta < 0:
        raise ValueError("the unstopped process needs delta >= 0")
    _check_dt(dt, x0)
    rng = streams.generator(streams.resolve_seed(seed), path, 0, streams.SDE)
    y = np.full(runs, float(x0))
    sdt = math.sqrt(dt)
    for _ in range(_n_steps(t, dt)):
        y += delta * dt + np.sqrt(2.0 * y) * sdt * rng.standard_normal(runs)
        np.maximum(y, 0.0, out=y)
    return y


def sample_marginal_below(delta: float, x0: float, t: float, runs: int, upper: float,
                          dt: float = DEFAULT_DT, seed=None, horizon=None, path_start: int = 0,
                          workers=None):
    """Draws of Y(t ^ sigma0) for Euler paths that reach 0 before ``upper``.

    Path indices are scanned in order and the first ``runs`` accepted paths
    are kept.  Paths still inside (0, upper) at ``horizon`` (default
    ``50 * upper``) are rejected.  Returns (values, attempts).
    """
    if not x0 < upper:
        raise ValueError("x0 must lie below the barrier")
    _check_dt(dt, x0)
    horizon = 50.0 * upper if horizon is None else horizon
    n = _n_steps(max(horizon, t), dt)
    obs = np.array([_n_steps(t, dt)], dtype=np.int64)
    seed = streams.resolve_seed(seed)
    kept = []
    n_kept = 0
    start = path_start
    attempts = 0
    while n_kept < runs:
        chunk = max(1000, int(1.3 * (runs - n_kept) / (n_kept / attempts if n_kept else 0.5)))
        sigma, _, cens, val = parallel.map_paths(
            kernels.euler_batch, parallel.path_range(start, chunk),
            (float(delta), float(x0), float(dt), n, seed), (obs, float(upper)), workers=workers,
        )
        ok = np.flatnonzero(cens == 0)[: runs - n_kept]
        kept.append(val[ok, 0])
        n_kept += ok.size
        attempts += chunk if n_kept < runs else int(ok[-1]) + 1
        start += chunk
    return np.concatenate(kept), attempts


# functionals


@dataclass(frozen=True)
class FunctionalSample:
    sigma0: float | None
    area: float
    censored: bool


@dataclass
class FunctionalBatch:
    """First-passage times and areas; censored paths carry sigma0 = nan."""

    sigma0: np.ndarray
    area: np.ndarray
    censored: np.ndarray
    horizon: float
    delta: float
    x0: float
    dt: float

    def __len__(self):
        return len(self.area)

    def samples(self) -> list:
        return [
            FunctionalSample(None if c else float(s), float(a), bool(c))
            for s, a, c in zip(self.sigma0, self.area, self.censored)
        ]

    def sigma_values(self):
        """Survival input for sigma0: censored paths enter at the horizon."""
        return np.where(self.censored, self.horizon, self.sigma0), self.censored

    def area_values(self):
        return self.area, self.censored

    def stopped_times(self) -> np.ndarray:
        return np.where(self.censored, self.horizon, self.sigma0)


def simulate_functionals(delta: float, x0: float, dt: float, horizon: float, runs: int,
                         seed=None, path_start: int = 0, workers=None) -> FunctionalBatch:
    _check_dt(dt, x0)
    n = _n_steps(horizon, dt)
    sigma, area, cens, _ = parallel.map_paths(
        kernels.euler_batch, parallel.path_range(path_start, runs),
        (float(delta), float(x0), float(dt), n, streams.resolve_seed(seed)),
        (np.empty(0, dtype=np.int64),), workers=workers,
    )
    return FunctionalBatch(sigma, area, cens.astype(bool), n * dt, float(delta), float(x0),
                           float(dt))


@dataclass
class FunctionalResult:
    batch: FunctionalBatch
    sigma_fit: TailFit | None
    area_fit: TailFit | None
    censored_fraction: float
    warning: str = ""


def _safe_fit(values, censored, fit_kw, **table_kw):
    table = build_survival(values, censored, integer=False, **table_kw)
    return fit_tail(table, **fit_kw)


def fit_functionals(batch: FunctionalBatch, sigma_window=(None, None), area_window=(None, None),
                    start: float = 0.25, **fit_kw):
    """Tail fits of sigma0 (target 1 - delta) and the area (target (1 - delta)/2).

    The area fit never extends past the smallest censored area, above which
    censoring depends on the path and product-limit estimates are biased.
    """
    sv, sc = batch.sigma_values()
    sfit = _safe_fit(sv, sc, dict(fit_kw, n_lo=sigma_window[0], n_hi=sigma_window[1]),
                     start=start)
    av, ac = batch.area_values()
    a_hi = area_window[1]
    if ac.any():
        top = float(av[ac].min())
        a_hi = top if a_hi is None else min(a_hi, top)
    afit = _safe_fit(av, ac, dict(fit_kw, n_lo=area_window[0], n_hi=a_hi), start=start)
    return sfit, afit


def sample_functionals(delta: float, x0: float = 1.0, dt: float = DEFAULT_DT,
                       horizon: float = DEFAULT_HORIZON, runs: int = 10**4, seed=None,
                       workers=None, fit: bool = True, **fit_kw) -> FunctionalResult:
    """First-passage times and areas of ``runs`` Euler paths, with tail fits."""
    if delta >= 1:
        raise ValueError("functional tails need delta < 1")
    batch = simulate_functionals(delta, x0, dt, horizon, runs, seed, workers=workers)
    frac = float(batch.censored.mean())
    warn = ""
    if frac > 0.5:
        warn = f"{frac:.0%} of paths censored at the horizon"
        warnings.warn(warn, RuntimeWarning, stacklevel=2)
    sfit = afit = None
    if fit:
        sfit, afit = fit_functionals(batch, **fit_kw)
    return FunctionalResult(batch, sfit, afit, frac, warn)


@dataclass
class ScalingReport:
    ks: KSResult
    delta: float
    x1: float
    x2: float
    censored_1: float
    censored_2: float


def scaling_check(delta: float, x1: float, x2: float, dt: float = DEFAULT_DT, runs: int = 10**4,
                  seed=None, horizon: float = 100.0, workers=None) -> ScalingReport:
    """KS test of sigma0 from x1 against ``(x1/x2) * sigma0`` from x2.

    The x2 runs use horizon ``horizon * x2 / x1`` so both samples are
    censored at the same scaled time; censored values enter as +inf.
    """
    if x1 <= 0 or x2 <= 0:
        raise ValueError("starting points must be positive")
    seed = streams.resolve_seed(seed)
    a = simulate_functionals(delta, x1, dt, horizon, runs, seed, path_start=0, workers=workers)
    b = simulate_functionals(delta, x2, dt, horizon * x2 / x1, runs, seed, path_start=runs,
                             workers=workers)
    sa = np.where(a.censored, np.inf, a.sigma0)
    sb = np.where(b.censored, np.inf, b.sigma0 * (x1 / x2))
    return ScalingReport(ks_two_sample(sa, sb), delta, x1, x2, float(a.censored.mean()),
                         float(b.censored.mean()))


@dataclass
class ABEstimate:
    a_hat: float
    a_ci: tuple
    b_hat: float
    b_ci: tuple
    flatness_a: float
    flatness_b: float
    reliable: bool


def _plateau(table, power, min_exceed=30):
    ok = (table.exceed >= min_exceed) & (table.survival > 0)
    t = table.thresholds[ok]
    if t.size < 3:
        return math.nan, (math.nan, math.nan), math.inf
    top = t[-1]
    sel = t >= top / 10.0
    tt = t[sel]
    s = table.survival[ok][sel]
    lv = table.log_var[ok][sel]
    g = tt**power * s
    lg = np.log(g)
    lt = np.log(tt)
    slope = np.polyfit(lt, lg, 1)[0] if tt.size >= 2 else math.inf
    flat = abs(slope) * math.log(10.0)
    mid = tt.size // 2
    val = float(np.exp(lg.mean()))
    half = 1.96 * math.sqrt(lv[mid])
    return val, (val * math.exp(-half), val * math.exp(half)), float(flat)


def estimate_ab(delta: float, dt: float = DEFAULT_DT, runs: int = 10**4, seed=None,
                horizon: float = 100.0, x0: float = 1.0, workers=None) -> ABEstimate:
    """Plateaus of ``t^(1-delta) P[sigma0 > t]`` and ``t^((1-delta)/2) P[area > t]``.

    Each plateau is the geometric mean over the top decade of usable grid
    points.  The flatness is the change in log over that decade, and values
    above 0.1 mark the estimate unreliable.
    """
    if delta >= 1:
        raise ValueError("a and b are defined for delta < 1")
    batch = simulate_functionals(delta, x0, dt, horizon, runs, seed, workers=workers)
    sv, sc = batch.sigma_values()
    ta = build_survival(sv, sc, integer=False, start=0.25)
    av, ac = batch.area_values()
    top = float(av[ac].min()) if ac.any() else None
    tb = build_survival(av, ac, integer=False, start=0.25, n_max=top)
    a, aci, fa = _plateau(ta, 1.0 - delta)
    b, bci, fb = _plateau(tb, (1.0 - delta) / 2.0)
    reliable = fa < 0.1 and fb < 0.1
    if not reliable:
        warnings.warn("no plateau detected (flatness > 0.1)", RuntimeWarning, stacklevel=2)
    return ABEstimate(a, aci, b, bci, fa, fb, reliable)


def stopped_mean_gap(delta: float, x0: float, t: float, runs: int, dt: float = DEFAULT_DT,
                     seed=None, workers=None) -> tuple:
    """Sample mean and SE of ``Y(t ^ sigma0) - x0 - delta * (t ^ sigma0)`` (zero in expectation)."""
    _check_dt(dt, x0)
    n = _n_steps(t, dt)
    sigma, _, cens, obs = parallel.map_paths(
        kernels.euler_batch, parallel.path_range(0, runs),
        (float(delta), float(x0), float(dt), n, streams.resolve_seed(seed)),
        (np.array([n], dtype=np.int64),), workers=workers,
    )
    stopped = np.where(cens.astype(bool), n * dt, sigma)
    gap = obs[:, 0] - x0 - delta * stopped
    return float(gap.mean()), float(gap.std(ddof=1) / math.sqrt(runs))
