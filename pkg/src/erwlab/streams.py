"""Counter-based random streams.

Every random word used by a simulation is addressed by
``key = (seed, path)`` and ``counter = (block, site, purpose, 0)`` of a
Philox4x64-10 generator.  A path's numbers therefore depend only on the
master seed and the path index, never on how paths are scheduled across
workers, and the walk and the branching process read the same coin tosses
at a given site.
"""

import os

import numpy as np

COIN = 0
STACK = 1
NB = 2
SDE = 3
AUX = 4

SEED_ENV = "ERWLAB_SEED"
DEFAULT_SEED = 20140601
_MASK64 = (1 << 64) - 1


def resolve_seed(seed=None):
    """Explicit seed, else ``$ERWLAB_SEED``, else the package default; reduced mod 2**64."""
    if seed is None:
        env = os.environ.get(SEED_ENV)
        seed = int(env) if env not in (None, "") else DEFAULT_SEED
    return int(seed) & _MASK64


def philox(seed, path=0, site=0, purpose=AUX):
    key = (int(seed) & _MASK64) | ((int(path) & _MASK64) << 64)
    counter = ((int(site) & _MASK64) << 64) | (int(purpose) << 128)
    return np.random.Philox(key=key, counter=counter)


def generator(seed, path=0, site=0, purpose=AUX):
    """A numpy Generator on one addressed stream (for Python-level sampling)."""
    return np.random.Generator(philox(seed, path, site, purpose))
