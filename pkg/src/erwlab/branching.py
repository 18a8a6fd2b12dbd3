"""Forward branching process of upcrossings and its relatives.

Generation k reads the trial sequence of site k: cookie trials first, then
fair coins.  ``V_k`` is the number of successes before the ``V_{k-1}``-th
failure.  With ``coupled=True`` every trial comes from the site's coin
stream, the same one the walk reads, so a BP path and a walk path with the
same (seed, path) describe the same excursion.  Otherwise the fair part
after the cookies is drawn in one negative-binomial step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import parallel, streams
from ._backend import kernels
from .cookies import CookieLaw, SiteStack
from .stats import TailFit, build_survival, fit_tail, wilson_interval

CENSOR_NONE, CENSOR_GEN, CENSOR_HEIGHT, CENSOR_PROGENY = 0, 1, 2, 3
PROGENY_GUARD = 2**62
HEIGHT_NONE = 2**62
DEFAULT_GEN_CAP = 10**6
MIN_ACCEPTANCE = 1e-4


class LowAcceptanceError(RuntimeError):
    """Rejection sampling accepted too few paths within its budget."""


# offspring law


def offspring_moments(law: CookieLaw, failures=None) -> tuple:
    """Exact mean and variance of the successes before the ``failures``-th failure.

    ``failures`` defaults to ``m``.  The cookie prefix is handled by dynamic
    programming over the failure count, and the fair remainder with
    ``r`` failures left has mean ``r`` and variance ``2r``.
    """
    r = law.m if failures is None else int(failures)
    if r <= 0:
        return 0.0, 0.0
    m1 = m2 = 0.0
    for probs, w in law.stacks:
        if w == 0:
            continue
        # dist[f] = P[f failures after i trials, not yet stopped]; successes = i - f
        dist = np.zeros(r)
        dist[0] = 1.0
        e1 = e2 = 0.0
        for i, p in enumerate(probs):
            stop = dist[r - 1] * (1.0 - p)
            s_stop = i - (r - 1)
            e1 += stop * s_stop
            e2 += stop * s_stop * s_stop
            new = dist * p
            new[1:] += dist[:-1] * (1.0 - p)
            dist = new
        n_trials = len(probs)
        for f in range(r):
            q = dist[f]
            if q == 0.0:
                continue
            s0 = n_trials - f
            rem = r - f
            mean = s0 + rem
            e1 += q * mean
            e2 += q * (2.0 * rem + mean * mean)
        m1 += w * e1
        m2 += w * e2
    return m1, m2 - m1 * m1


def offspring_variance(law: CookieLaw) -> float:
    """``v``: variance of the successes before the m-th failure."""
    return offspring_moments(law)[1]


def offspring_sample(law: CookieLaw, failures: int, n: int, seed=None, site: int = 1,
                     path_start: int = 0, coupled: bool = False, workers=None) -> np.ndarray:
    """``n`` independent offspring counts (successes before ``failures`` failures)."""
    probs, cumw = law.kernel_args()
    return parallel.map_paths(
        kernels.offspring_batch, parallel.path_range(path_start, n),
        (probs, cumw, streams.resolve_seed(seed)), (int(failures), int(site), coupled),
        workers=workers,
    )


def bp_step(v: int, stack: SiteStack, seed=None, path: int = 0, site: int = 1) -> int:
    """Successes before the ``v``-th failure in the trial sequence of ``stack``."""
    if stack.cursor != 0:
        raise ValueError("bp_step needs a fresh stack (cursor 0)")
    if v <= 0:
        return 0
    probs = np.ascontiguousarray([stack.probs], dtype=np.float64)
    out = kernels.offspring_batch(probs, np.ones(1), streams.resolve_seed(seed),
                                  parallel.path_range(path, 1), int(v), int(site), False)
    s = int(out[0])
    stack.cursor = s + v
    return s


# single paths


@dataclass
class BpPath:
    """One trajectory ``V_0, V_1, ...``; times and progeny are None when censored."""

    trajectory: list
    extinction_time: int | None
    total_progeny: int | None
    censored: bool
    attempts: int = 1
    path: int = 0

    @property
    def depth(self):
        return self.extinction_time


def _path_from_traj(traj, path=0, attempts=1) -> BpPath:
    values = [int(v) for v in traj]
    extinct = values[-1] == 0
    return BpPath(
        trajectory=values,
        extinction_time=len(values) - 1 if extinct else None,
        total_progeny=sum(values) if extinct else None,
        censored=not extinct,
        attempts=attempts,
        path=path,
    )


def simulate_bp(law: CookieLaw, v0: int, gen_cap: int = DEFAULT_GEN_CAP, seed=None,
                path: int = 0, height_cap=None, coupled: bool = False) -> BpPath:
    """One path of V from ``v0`` until extinction or a cap."""
    if v0 < 0:
        raise ValueError("v0 must be nonnegative")
    probs, cumw = law.kernel_args()
    traj = kernels.bp_trajectory(probs, cumw, streams.resolve_seed(seed), int(path), int(v0),
                                 int(gen_cap), int(height_cap or HEIGHT_NONE), coupled, False)
    return _path_from_traj(traj, path)


@dataclass
class ModifiedBpPath:
    """Modified process with its martingale ``M_k`` and compensator ``A_k``."""

    trajectory: np.ndarray
    martingale_m: np.ndarray
    compensator_a: np.ndarray
    v: float
    delta: float
    m: int

    @property
    def quadratic_martingale(self) -> np.ndarray:
        return self.martingale_m.astype(float) ** 2 - self.compensator_a


def modified_arrays(traj, delta: float, v: float, m: int):
    traj = np.asarray(traj, dtype=np.int64)
    k = np.arange(len(traj))
    mart = traj - k * delta
    excess = np.maximum(traj[:-1] - m, 0).astype(float)
    comp = v * k + 2.0 * np.concatenate([[0.0], np.cumsum(excess)])
    return mart, comp


def simulate_modified_bp(law: CookieLaw, v0: int, gen_cap: int, seed=None,
                         path: int = 0) -> ModifiedBpPath:
    """``gen_cap`` steps of the modified process, which always reads at least m failures."""
    if v0 < 1:
        raise ValueError("v0 must be >= 1")
    probs, cumw = law.kernel_args()
    traj = kernels.bp_trajectory(probs, cumw, streams.resolve_seed(seed), int(path), int(v0),
                                 int(gen_cap), HEIGHT_NONE, False, True)
    delta = law.delta
    v = offspring_variance(law)
    mart, comp = modified_arrays(traj, delta, v, law.m)
    return ModifiedBpPath(traj, mart, comp, v, delta, law.m)


# batches


@dataclass
class BpBatch:
    """Per-path summaries.  ``observed`` is V at the requested generation
    (0 after extinction, -1 if censored earlier)."""

    paths: np.ndarray
    extinct: np.ndarray
    extinction_time: np.ndarray
    progeny: np.ndarray
    censor_code: np.ndarray
    max_height: np.ndarray
    observed: np.ndarray
    v0: int
    attempts: int = 0
    warning: str = ""

    def __len__(self):
        return len(self.paths)

    @property
    def censored(self) -> np.ndarray:
        return ~self.extinct

    @property
    def acceptance(self) -> float:
        return len(self.paths) / self.attempts if self.attempts else 1.0

    def subset(self, mask) -> "BpBatch":
        return BpBatch(self.paths[mask], self.extinct[mask], self.extinction_time[mask],
                       self.progeny[mask], self.censor_code[mask], self.max_height[mask],
                       self.observed[mask], self.v0, self.attempts, self.warning)


def _bp_kernel(law, v0, paths, gen_cap, seed, height_cap, progeny_cap, coupled, observe_gen,
               workers):
    probs, cumw = law.kernel_args()
    extinct, t, prog, code, maxv, obs = parallel.map_paths(
        kernels.bp_batch, paths, (probs, cumw, streams.resolve_seed(seed)),
        (int(v0), int(gen_cap), int(height_cap or HEIGHT_NONE),
         int(progeny_cap or PROGENY_GUARD), coupled, int(observe_gen)),
        workers=workers,
    )
    return BpBatch(np.asarray(paths, dtype=np.int64), extinct.astype(bool), t, prog, code, maxv,
                   obs, int(v0), len(paths))


def bp_batch(law: CookieLaw, v0: int, runs: int, gen_cap: int = DEFAULT_GEN_CAP, seed=None,
             height_cap=None, progeny_cap=None, coupled: bool = False, observe_gen: int = -1,
             path_start: int = 0, workers=None) -> BpBatch:
    """``runs`` independent paths of V on consecutive path indices.

    A path is censored when it reaches ``gen_cap`` generations, a generation
    of size >= ``height_cap``, or more than ``progeny_cap`` individuals (the
    default guards against int64 overflow).
    """
    if v0 < 0:
        raise ValueError("v0 must be nonnegative")
    return _bp_kernel(law, v0, parallel.path_range(path_start, runs), gen_cap, seed, height_cap,
                      progeny_cap, coupled, observe_gen, workers)


def conditioned_bp_batch(law: CookieLaw, v0: int, accepted: int,
                         gen_cap: int = DEFAULT_GEN_CAP, seed=None, height_cap=None,
                         progeny_cap=None, observe_gen: int = -1, path_start: int = 0,
                         max_attempts=None, coupled: bool = False, workers=None) -> BpBatch:
    """Paths of V conditioned on extinction.

    For delta <= 1 extinction is almost sure and this is ``bp_batch``.  For
    delta > 1 path indices are scanned in order from ``path_start`` and the
    first ``accepted`` extinct paths are kept.  Paths stopped by a cap count
    as surviving, which is the censoring bias of the method.  ``attempts``
    and ``acceptance`` on the result report the cost.
    """
    if v0 < 1:
        raise ValueError("v0 must be >= 1")
    if law.delta <= 1:
        return bp_batch(law, v0, accepted, gen_cap, seed, height_cap, progeny_cap, coupled,
                        observe_gen, path_start, workers)
    if max_attempts is None:
        max_attempts = max(10**6, int(accepted / MIN_ACCEPTANCE))
    kept = []
    n_kept = 0
    next_path = path_start
    attempts = 0
    rate = None
    while n_kept < accepted:
        need = accepted - n_kept
        chunk = int(min(max(2000, 1.2 * need / rate if rate else 4 * need), 10**6))
        chunk = min(chunk, max_attempts - attempts)
        if chunk <= 0:
            break
        b = _bp_kernel(law, v0, parallel.path_range(next_path, chunk), gen_cap, seed,
                       height_cap, progeny_cap, coupled, observe_gen, workers)
        next_path += chunk
        attempts += chunk
        sel = b.subset(b.extinct)
        if len(sel) > need:
            cut = sel.paths[need - 1]
            sel = sel.subset(sel.paths <= cut)
            attempts -= int(next_path - 1 - cut)
        kept.append(sel)
        n_kept += len(sel)
        rate = max(n_kept / attempts, 0.5 / attempts)
        if attempts >= min(max_attempts, 10**6) and n_kept / attempts < MIN_ACCEPTANCE:
            raise LowAcceptanceError(
                f"acceptance {n_kept}/{attempts} below {MIN_ACCEPTANCE}; raise the attempt "
                "budget or the caps"
            )
    out = BpBatch(
        *(np.concatenate([getattr(k, f) for k in kept]) for f in
          ("paths", "extinct", "extinction_time", "progeny", "censor_code", "max_height",
           "observed")),
        v0=int(v0), attempts=attempts,
    )
    if n_kept < accepted:
        out.warning = f"attempt budget exhausted with {n_kept} of {accepted} accepted"
        warnings.warn(out.warning, RuntimeWarning, stacklevel=2)
    return out


def simulate_conditioned_bp(law: CookieLaw, v0: int, gen_cap: int = DEFAULT_GEN_CAP,
                            seed=None, path: int = 0, height_cap=None,
                            max_attempts: int = 10**6) -> BpPath:
    """One path of V conditioned on extinction.

    For delta <= 1 this is ``simulate_bp`` with the same (seed, path).  For
    delta > 1 it is the first extinct path at index >= ``path``;
    ``attempts`` on the result counts the indices scanned.
    """
    if law.delta <= 1:
        return simulate_bp(law, v0, gen_cap, seed, path, height_cap)
    b = conditioned_bp_batch(law, v0, 1, gen_cap, seed, height_cap, path_start=path,
                             max_attempts=max_attempts, workers=1)
    if len(b) == 0:
        raise LowAcceptanceError(f"no extinct path within {max_attempts} attempts")
    p = int(b.paths[0])
    out = simulate_bp(law, v0, gen_cap, seed, p, height_cap)
    out.attempts = b.attempts
    return out


# harmonic function


@dataclass(frozen=True)
class HarmonicEstimate:
    n: int
    h_hat: float
    ci: tuple
    cap_used: int
    extinct: int = 0
    runs: int = 0


@dataclass
class HarmonicFit:
    estimates: list
    exponent: float
    ci_exponent: tuple
    prefactor: float
    degenerate: bool = False
    warning: str = ""

    def to_dict(self) -> dict:
        return {
            "estimates": [e.__dict__ for e in self.estimates],
            "exponent": self.exponent,
            "ci_exponent": list(self.ci_exponent),
            "prefactor": self.prefactor,
            "degenerate": self.degenerate,
            "warning": self.warning,
        }


def _fit_h(ns, counts, runs, n_boot=200, seed=0):
    ns = np.asarray(ns, dtype=float)
    counts = np.asarray(counts, dtype=float)

    def slope_of(c):
        h = np.clip(c / runs, 0.5 / runs, 1.0)
        w = runs * h / np.maximum(1.0 - h, 1.0 / runs)
        x = np.log(ns)
        y = np.log(h)
        xm = (w * x).sum() / w.sum()
        ym = (w * y).sum() / w.sum()
        b = (w * (x - xm) * (y - ym)).sum() / (w * (x - xm) ** 2).sum()
        return b, ym - b * xm

    slope, icpt = slope_of(counts)
    rng = streams.generator(streams.resolve_seed(seed), 0, 0, streams.AUX)
    boot = [slope_of(rng.binomial(runs, np.clip(counts / runs, 0, 1)))[0] for _ in range(n_boot)]
    q = np.quantile(-np.asarray(boot), [0.025, 0.975])
    return -slope, (float(min(q[0], -slope)), float(max(q[1], -slope))), math.exp(icpt)


def estimate_h(law: CookieLaw, n_grid, runs: int, gen_cap: int = DEFAULT_GEN_CAP, seed=None,
               height_factor: int = 20, workers=None) -> HarmonicFit:
    """Extinction probabilities ``h(n)`` from each start in ``n_grid`` and their power-law fit.

    A path reaching ``height_factor * n`` is counted as surviving.  Since h
    decays like a power, this lowers every estimate by about the same
    factor and leaves the fitted exponent (target delta - 1) intact.
    """
    seed = streams.resolve_seed(seed)
    n_grid = [int(n) for n in n_grid]
    if law.delta <= 1:
        msg = "delta <= 1: extinction is almost sure, h = 1"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        est = [HarmonicEstimate(n, 1.0, (1.0, 1.0), 0, runs, runs) for n in n_grid]
        return HarmonicFit(est, 0.0, (0.0, 0.0), 1.0, True, msg)
    est = []
    counts = []
    for n in n_grid:
        cap = height_factor * n
        b = bp_batch(law, n, runs, gen_cap, seed, height_cap=cap, path_start=0,
                     workers=workers)
        k = int(b.extinct.sum())
        counts.append(k)
        est.append(HarmonicEstimate(n, k / runs, wilson_interval(k, runs), cap, k, runs))
    if len(n_grid) >= 2:
        exponent, ci, pref = _fit_h(n_grid, counts, runs, seed=seed)
    else:
        exponent, ci, pref = math.nan, (math.nan, math.nan), math.nan
    return HarmonicFit(est, exponent, ci, pref)


# tails of the conditioned process


@dataclass
class ConditionedTails:
    extinction: TailFit
    progeny: TailFit
    acceptance: float
    attempts: int
    accepted: int


def _tail_samples(batch: BpBatch, kind: str):
    vals = batch.extinction_time if kind == "extinction" else batch.progeny
    return vals.astype(float), batch.censored


def conditioned_tails(law: CookieLaw, runs: int, gen_cap: int = DEFAULT_GEN_CAP, seed=None,
                      height_cap=None, v0: int = 1, workers=None, **fit_kw) -> ConditionedTails:
    """Fits of the extinction-time and total-progeny tails of V conditioned on extinction.

    Targets are ``|delta - 1|`` and ``|delta - 1| / 2``.
    """
    if law.delta > 1 and height_cap is None:
        height_cap = 10**4
    b = conditioned_bp_batch(law, v0, runs, gen_cap, seed, height_cap, workers=workers)
    ext = fit_tail(build_survival(*_tail_samples(b, "extinction")), **fit_kw)
    prog = fit_tail(build_survival(*_tail_samples(b, "progeny")), **fit_kw)
    return ConditionedTails(ext, prog, b.acceptance, b.attempts, len(b))


def progeny_tail(law: CookieLaw, runs: int, gen_cap: int = DEFAULT_GEN_CAP, seed=None,
                 height_cap=None, workers=None, **fit_kw) -> TailFit:
    """Tail fit of the total progeny of conditioned paths (target ``|delta - 1| / 2``)."""
    if law.delta == 1:
        raise ValueError("delta = 1 has no power-law target")
    return conditioned_tails(law, runs, gen_cap, seed, height_cap, workers=workers,
                             **fit_kw).progeny


# martingale diagnostics


@dataclass(frozen=True)
class MartingaleCheck:
    state: object
    n: int
    mean_dm: float
    se_dm: float
    mean_dq: float
    se_dq: float

    @property
    def z_dm(self) -> float:
        return self.mean_dm / self.se_dm if self.se_dm > 0 else 0.0

    @property
    def z_dq(self) -> float:
        return self.mean_dq / self.se_dq if self.se_dq > 0 else 0.0

    def passed(self, z: float = 3.0) -> bool:
        return abs(self.z_dm) <= z and abs(self.z_dq) <= z


def one_step_increments(law: CookieLaw, x: int, n: int, seed=None, path_start: int = 0,
                        workers=None) -> np.ndarray:
    """``n`` independent one-step increments of the modified process from state ``x``."""
    need = max(int(x), law.m)
    return offspring_sample(law, need, n, seed, site=1, path_start=path_start,
                            workers=workers) - need


def _martingale_terms(law, x, inc, v, delta):
    x = np.asarray(x, dtype=float)
    inc = inc.astype(float)
    dm = inc - delta
    dq = (x + dm) ** 2 - x**2 - v - 2.0 * np.maximum(x - law.m, 0.0)
    return dm, dq


def martingale_check(law: CookieLaw, states=(0, 1, 2, 5, 20, 100, 1000), n: int = 10**5,
                     seed=None, workers=None) -> list:
    """One-step martingale checks of ``M_k`` and ``M_k^2 - A_k``.

    Draws ``n`` increments at each state, plus a pooled row ("pooled") with
    ``n`` increments spread evenly over the states.  Each row reports the
    sample means of both martingale differences and their standard errors.
    """
    seed = streams.resolve_seed(seed)
    delta = law.delta
    v = offspring_variance(law)
    rows = []
    for j, x in enumerate(states):
        inc = one_step_increments(law, x, n, seed, path_start=(j + 1) * n, workers=workers)
        dm, dq = _martingale_terms(law, x, inc, v, delta)
        rows.append(MartingaleCheck(x, n, dm.mean(), dm.std(ddof=1) / math.sqrt(n), dq.mean(),
                                    dq.std(ddof=1) / math.sqrt(n)))
    per = np.array_split(np.arange(n), len(states))
    dms, dqs = [], []
    base = (len(states) + 1) * n
    for j, (x, idx) in enumerate(zip(states, per)):
        inc = one_step_increments(law, x, len(idx), seed, path_start=base + int(idx[0]),
                                  workers=workers)
        dm, dq = _martingale_terms(law, x, inc, v, delta)
        dms.append(dm)
        dqs.append(dq)
    dm = np.concatenate(dms)
    dq = np.concatenate(dqs)
    rows.append(MartingaleCheck("pooled", n, dm.mean(), dm.std(ddof=1) / math.sqrt(n),
                                dq.mean(), dq.std(ddof=1) / math.sqrt(n)))
    return rows


# overshoot


@dataclass
class OvershootResult:
    x: int
    z: int
    runs: int
    hits: int
    overshoot: np.ndarray = field(repr=False)

    @property
    def threshold(self) -> float:
        return self.x ** (2.0 / 3.0)

    @property
    def tail_prob(self) -> float:
        return float((self.overshoot > self.threshold).mean()) if self.hits else math.nan

    @property
    def mean(self) -> float:
        return float(self.overshoot.mean()) if self.hits else math.nan

    @property
    def se(self) -> float:
        return float(self.overshoot.std(ddof=1) / math.sqrt(self.hits)) if self.hits > 1 else math.nan


def overshoot_stat(law: CookieLaw, x: int, runs: int, seed=None, gen_cap: int = 10**6,
                   workers=None) -> OvershootResult:
    """Overshoot ``V_{tau_x} - x`` started from ``z = ceil(x/2)``, given ``tau_x < sigma_0``.

    Empty when no start strictly between 0 and x exists (x = 1).
    """
    if x < 1:
        raise ValueError("x must be >= 1")
    z = math.ceil(x / 2)
    if not 0 < z < x:
        return OvershootResult(x, z, 0, 0, np.empty(0, dtype=np.int64))
    b = bp_batch(law, z, runs, gen_cap, seed, height_cap=x, workers=workers)
    hit = b.censor_code == CENSOR_HEIGHT
    return OvershootResult(x, z, runs, int(hit.sum()), b.max_height[hit] - x)


def overshoot_decay(law: CookieLaw, xs, runs: int, seed=None, workers=None) -> dict:
    """Overshoot tails at several levels and whether ``P[overshoot > x^(2/3)]`` decreases."""
    res = [overshoot_stat(law, x, runs, seed, workers=workers) for x in xs]
    tails = [r.tail_prob for r in res]
    return {
        "levels": [
            {"x": r.x, "z": r.z, "hits": r.hits, "tail_prob": r.tail_prob, "mean": r.mean,
             "mean_over_sqrt_x": r.mean / math.sqrt(r.x) if r.hits else math.nan}
            for r in res
        ],
        "decreasing": bool(all(a >= b for a, b in zip(tails, tails[1:]))),
    }
