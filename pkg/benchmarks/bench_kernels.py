"""Compiled kernels against the pure-Python fallback.

Runs each kernel on the same inputs under both backends, checks that the
outputs agree bit for bit and prints the time per unit of work.

    python benchmarks/bench_kernels.py [--scale 1.0] [--json out.json]
"""

import argparse
import json
import time

import numpy as np

from erwlab import _pure
from erwlab.cookies import equal_strength_law, fair_law

try:
    from erwlab import _core
except ImportError:
    _core = None

SEED = 12345


def _cases(scale):
    fair = fair_law().kernel_args()
    d2 = equal_strength_law(2.0).kernel_args()
    n = lambda k: max(1, int(k * scale))  # noqa: E731
    return [
        # name, kernel, args, work units, unit name
        ("walk_batch", "walk_batch",
         (*fair, SEED, np.arange(n(2000), dtype=np.int64), 1, 10**4, 10**4), "steps"),
        ("bp_batch", "bp_batch",
         (*d2, SEED, np.arange(n(2000), dtype=np.int64), 1, 10**4, 10**3, 2**62, False, -1),
         "generations"),
        ("bp_batch_coupled", "bp_batch",
         (*fair, SEED, np.arange(n(2000), dtype=np.int64), 1, 10**4, 10**3, 2**62, True, -1),
         "generations"),
        ("offspring_batch", "offspring_batch",
         (*d2, SEED, np.arange(n(20000), dtype=np.int64), 50, 1, False), "draws"),
        ("euler_batch", "euler_batch",
         (0.5, 1.0, 1e-3, n(2000), SEED, np.arange(200, dtype=np.int64),
          np.empty(0, dtype=np.int64)), "steps"),
    ]


def _units(name, out, args):
    if name == "walk_batch":
        return int(out[1].sum())
    if name.startswith("bp_batch"):
        return int(out[1].sum() + (~out[0].astype(bool)).sum())
    if name == "offspring_batch":
        return len(args[3])
    return len(args[5]) * args[3]


def _same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.array_equal(x, y, equal_nan=True) for x, y in zip(a, b))


def run(scale=1.0, repeat=3):
    rows = []
    for name, kernel, args, unit in _cases(scale):
        row = {"kernel": name, "unit": unit}
        outs = {}
        for label, mod in (("compiled", _core), ("pure", _pure)):
            if mod is None:
                continue
            best = np.inf
            for _ in range(repeat if label == "compiled" else 1):
                t0 = time.perf_counter()
                out = getattr(mod, kernel)(*args)
                best = min(best, time.perf_counter() - t0)
            outs[label] = out
            units = max(1, _units(name, out, args))
            row[f"{label}_ns_per_{unit}"] = 1e9 * best / units
        if len(outs) == 2:
            row["identical"] = _same(outs["compiled"], outs["pure"])
            row["speedup"] = row[f"pure_ns_per_{unit}"] / row[f"compiled_ns_per_{unit}"]
        rows.append(row)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="multiply the path counts")
    ap.add_argument("--json", default=None, help="also write the rows to this file")
    args = ap.parse_args()
    if _core is None:
        print("compiled core not built; timing the fallback only")
    rows = run(args.scale)
    for r in rows:
        unit = r["unit"]
        comp = r.get(f"compiled_ns_per_{unit}", np.nan)
        pure = r[f"pure_ns_per_{unit}"]
        print(f"{r['kernel']:18s} compiled {comp:10.1f} ns/{unit:11s} pure {pure:10.1f} "
              f"ns/{unit:11s} speedup {r.get('speedup', np.nan):7.1f}x "
              f"identical={r.get('identical', 'n/a')}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
