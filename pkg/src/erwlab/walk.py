"""Direct simulation of the excited random walk under the averaged measure.

Each path lives in its own random stream, and each site's environment is
drawn lazily on the first visit.  A run stops at the first return to 0, or
when it is censored by the step cap or range cap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import parallel, streams
from ._backend import kernels
from .cookies import CookieLaw
from .stats import SurvivalTable, build_survival, wilson_interval

DEFAULT_STEP_CAP = 10**6
DEFAULT_RANGE_CAP = 10**6


@dataclass(frozen=True)
class WalkConfig:
    law: CookieLaw
    start: int = 1
    step_cap: int = DEFAULT_STEP_CAP
    range_cap: int = DEFAULT_RANGE_CAP

    def __post_init__(self):
        if self.step_cap < 1 or self.range_cap < 1:
            raise ValueError("step_cap and range_cap must be >= 1")
        if abs(self.start) >= self.range_cap:
            raise ValueError("start must lie strictly inside the range cap")


@dataclass(frozen=True)
class ExcursionOutcome:
    """One run: ``depth`` is the running maximum on the side of the excursion
    (its absolute value for a leftward excursion); ``side`` is +1 or -1."""

    returned: bool
    duration: int
    depth: int
    censored: bool
    side: int = 1


@dataclass
class ExcursionBatch:
    """Per-path arrays for a batch of runs."""

    returned: np.ndarray
    duration: np.ndarray
    depth: np.ndarray
    side: np.ndarray
    max_site: np.ndarray
    min_site: np.ndarray
    step_cap: int
    range_cap: int
    seed: int

    @property
    def censored(self) -> np.ndarray:
        return ~self.returned

    def __len__(self):
        return len(self.returned)

    def outcome(self, i: int) -> ExcursionOutcome:
        return ExcursionOutcome(
            bool(self.returned[i]),
            int(self.duration[i]),
            int(self.depth[i]),
            not bool(self.returned[i]),
            int(self.side[i]),
        )

    def duration_survival(self, grid_base=2**0.5) -> SurvivalTable:
        """Survival of the duration; censored runs enter as ``T > duration``."""
        return build_survival(self.duration, self.censored, grid_base)


def _run(cfg: WalkConfig, seed, paths, workers=None):
    probs, cumw = cfg.law.kernel_args()
    seed = streams.resolve_seed(seed)
    returned, duration, xmax, xmin, first = parallel.map_paths(
        kernels.walk_batch,
        paths,
        (probs, cumw, seed),
        (cfg.start, cfg.step_cap, cfg.range_cap),
        workers=workers,
    )
    if cfg.start == 0:
        side = first.astype(np.int64)
        depth = np.where(side > 0, xmax, -xmin)
    else:
        side = np.full(len(returned), 1 if cfg.start > 0 else -1, dtype=np.int64)
        depth = xmax if cfg.start > 0 else -xmin
    return ExcursionBatch(
        returned.astype(bool), duration, depth.astype(np.int64), side, xmax, xmin,
        cfg.step_cap, cfg.range_cap, seed,
    )


def simulate_walks(cfg: WalkConfig, runs: int, seed=None, path_start: int = 0,
                   workers=None) -> ExcursionBatch:
    """Run ``runs`` independent walks on path indices ``path_start, path_start + 1, ...``."""
    return _run(cfg, seed, parallel.path_range(path_start, runs), workers)


def run_excursion(cfg: WalkConfig, seed=None, path: int = 0) -> ExcursionOutcome:
    """One excursion from ``cfg.start`` (>= 1) until it hits 0 or is censored."""
    if cfg.start < 1:
        raise ValueError("excursions above 0 need start >= 1")
    return _run(cfg, seed, parallel.path_range(path, 1), 1).outcome(0)


def run_return(cfg: WalkConfig, seed=None, path: int = 0) -> ExcursionOutcome:
    """One walk from 0 until its return time R, on either side."""
    if cfg.start != 0:
        raise ValueError("return runs need start = 0")
    return _run(cfg, seed, parallel.path_range(path, 1), 1).outcome(0)


@dataclass(frozen=True)
class EscapeEstimate:
    p_hat: float
    ci: tuple
    escaped: int
    runs: int
    step_cap: int
    range_cap: int


def estimate_escape(cfg: WalkConfig, runs: int, seed=None, path_start: int = 0,
                    workers=None) -> EscapeEstimate:
    """Fraction of excursions that neither returned nor stayed below the range cap.

    A run counts as escaped when it is censored with depth >= range_cap.
    This estimates P_1[T_0 = infinity] from above as the caps grow.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    b = simulate_walks(cfg, runs, seed, path_start, workers)
    escaped = int(np.count_nonzero(~b.returned & (b.depth >= cfg.range_cap)))
    return EscapeEstimate(escaped / runs, wilson_interval(escaped, runs), escaped, runs,
                          cfg.step_cap, cfg.range_cap)
