"""Cookie environments: laws of one site's cookie stack and the drift parameter.

A law is a finite mixture of deterministic stacks.  Each stack holds ``m``
probabilities; the i-th visit to a site steps right with the i-th entry and
every visit after the m-th is a fair coin.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import streams

WEIGHT_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid environment definition."""


@dataclass(frozen=True)
class CookieLaw:
    """Law of the cookie stack ``(w(0,1), ..., w(0,m))`` as a finite mixture.

    ``stacks`` is a sequence of ``(probs, weight)`` pairs.  Construction checks
    probabilities, weights and the ellipticity condition that both "all
    cookies < 1" and "all cookies > 0" carry positive weight.  Pass
    ``check_wel=False`` only for degenerate test environments with forced
    steps.
    """

    m: int
    stacks: tuple
    check_wel: bool = field(default=True, compare=False)

    def __post_init__(self):
        if isinstance(self.m, bool) or int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"m must be a positive integer, got {self.m!r}")
        if len(self.stacks) == 0:
            raise ConfigError("at least one stack is required")
        norm = []
        for entry in self.stacks:
            try:
                probs, weight = entry
            except (TypeError, ValueError):
                raise ConfigError(f"stack entry must be (probs, weight), got {entry!r}") from None
            probs = tuple(float(p) for p in probs)
            weight = float(weight)
            if len(probs) != self.m:
                raise ConfigError(f"stack {probs} has length {len(probs)}, expected m={self.m}")
            if not all(0.0 <= p <= 1.0 for p in probs):
                raise ConfigError(f"cookie probabilities must lie in [0, 1]: {probs}")
            if not (weight >= 0.0 and math.isfinite(weight)):
                raise ConfigError(f"weights must be nonnegative: {weight}")
            norm.append((probs, weight))
        total = math.fsum(w for _, w in norm)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ConfigError(f"weights sum to {total!r}, expected 1")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "stacks", tuple(norm))
        if self.check_wel:
            below_one = any(w > 0 and all(p < 1.0 for p in s) for s, w in norm)
            above_zero = any(w > 0 and all(p > 0.0 for p in s) for s, w in norm)
            if not (below_one and above_zero):
                raise ConfigError(
                    "ellipticity violated: need positive weight on stacks with all "
                    "cookies < 1 and on stacks with all cookies > 0"
                )

    @property
    def delta(self) -> float:
        return delta_of(self)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.stacks])

    def probs_array(self) -> np.ndarray:
        """Stack probabilities as a C-contiguous (K, m) array for the kernels."""
        return np.ascontiguousarray([s for s, _ in self.stacks], dtype=np.float64)

    def cum_weights(self) -> np.ndarray:
        """Cumulative weights with the last entry pinned to exactly 1."""
        cw = np.cumsum(self.weights)
        cw[-1] = 1.0
        return np.ascontiguousarray(cw, dtype=np.float64)

    def kernel_args(self):
        return self.probs_array(), self.cum_weights()

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "stacks": [{"probs": list(s), "weight": w} for s, w in self.stacks],
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SiteStack:
    """Realized cookie stack of one site, with a visit cursor."""

    probs: tuple
    cursor: int = 0

    def __post_init__(self):
        if self.cursor < 0:
            raise ValueError("cursor must be nonnegative")
        self.probs = tuple(float(p) for p in self.probs)

    def probability(self, visit: int) -> float:
        """Step-right probability at the ``visit``-th visit (1-based)."""
        return self.probs[visit - 1] if visit <= len(self.probs) else 0.5

    def next_probability(self) -> float:
        self.cursor += 1
        return self.probability(self.cursor)


def delta_of(law: CookieLaw) -> float:
    """Expected total drift ``E[sum_i (2 w(0,i) - 1)]``."""
    return math.fsum(w * math.fsum(2.0 * p - 1.0 for p in s) for s, w in law.stacks)


def mirror(law: CookieLaw) -> CookieLaw:
    """Law of the reflected stack ``1 - w``; its drift is ``-delta_of(law)``."""
    return CookieLaw(
        law.m,
        tuple((tuple(1.0 - p for p in s), w) for s, w in law.stacks),
        check_wel=law.check_wel,
    )


def mean_first_cookie(law: CookieLaw) -> float:
    """``E[w(0,1)]``, the probability that the first step from a fresh site is to the right."""
    return math.fsum(w * s[0] for s, w in law.stacks)


def stack_index(law: CookieLaw, seed=None, path: int = 0, site: int = 0) -> int:
    """Index of the stack drawn at (path, site); matches the compiled kernels."""
    if len(law.stacks) == 1:
        return 0
    word = streams.philox(streams.resolve_seed(seed), path, site, streams.STACK).random_raw()
    u = (int(word) >> 11) * 2.0 ** -53
    return int(np.searchsorted(law.cum_weights(), u, side="right").clip(max=len(law.stacks) - 1))


def sample_stack(law: CookieLaw, seed=None, path: int = 0, site: int = 0) -> SiteStack:
    """Draw the stack of ``site`` on ``path``.  Distinct (path, site) pairs are independent."""
    return SiteStack(law.stacks[stack_index(law, seed, path, site)][0])


def equal_strength_law(delta: float) -> CookieLaw:
    """Law with ``m = max(1, ceil(2|delta|))`` identical cookies realizing ``delta``."""
    m = max(1, math.ceil(2.0 * abs(delta)))
    p = 0.5 + delta / (2.0 * m)
    if not 0.0 < p < 1.0:
        raise ConfigError(f"cannot realize delta={delta} with equal cookies")
    return CookieLaw(m, (((p,) * m, 1.0),))


def fair_law(m: int = 1) -> CookieLaw:
    return CookieLaw(m, (((0.5,) * m, 1.0),))


def law_from_dict(data: dict) -> CookieLaw:
    if not isinstance(data, dict) or "m" not in data or "stacks" not in data:
        raise ConfigError("environment config needs keys 'm' and 'stacks'")
    try:
        stacks = tuple((tuple(s["probs"]), s.get("weight", 1.0)) for s in data["stacks"])
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed stacks entry: {exc}") from None
    return CookieLaw(data["m"], stacks)


def load_law(path) -> CookieLaw:
    """Read an environment file (YAML or JSON; JSON is valid YAML)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return law_from_dict(data)


def dump_law(law: CookieLaw, path) -> None:
    Path(path).write_text(yaml.safe_dump(law.to_dict(), sort_keys=False))


def mixture(components: Sequence[CookieLaw], weights: Sequence[float]) -> CookieLaw:
    """Weighted mixture of laws sharing the same ``m``."""
    ms = {c.m for c in components}
    if len(ms) != 1:
        raise ConfigError("mixture components must share m")
    stacks = tuple((s, w * cw) for c, w in zip(components, weights) for s, cw in c.stacks)
    return CookieLaw(ms.pop(), stacks)
