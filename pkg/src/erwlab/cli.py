"""Command-line interface.

Every artifact starts with a metadata block: tool version, experiment kind,
seed, config hash, delta, caps and ``spec_version``, the git blob hash of the
canonical experiment spec.  Tables are CSV with ``# key: value`` header
lines, summaries are JSON objects with a ``meta`` key, and raw samples are
JSON lines whose first line is ``{"meta": ...}``.  Outputs contain no
timings (except ``accept``), so the same spec and seed give byte-identical
files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import __version__, acceptance, branching, diffusion, experiments, parallel, streams
from ._backend import BACKEND
from .cookies import ConfigError, CookieLaw, equal_strength_law, fair_law, load_law
from .stats import build_survival, fit_tail
from .walk import WalkConfig, estimate_escape, simulate_walks

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

KINDS = ("walk-excursion", "walk-return", "escape", "bp", "bp-conditioned", "h", "sde",
         "fit", "phase-sweep", "mean-r", "accept")


@dataclass
class ExperimentSpec:
    """Everything that determines an artifact's numbers."""

    kind: str
    config: dict | None
    runs: int | None
    caps: dict
    seed: int
    params: dict = field(default_factory=dict)
    out: str | None = None
    workers: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")

    def canonical(self) -> bytes:
        """Canonical JSON of the fields that affect results (not out or workers)."""
        core = {k: v for k, v in asdict(self).items() if k not in ("out", "workers")}
        return json.dumps(core, sort_keys=True, separators=(",", ":"), default=_jsonable).encode()

    def version(self) -> str:
        """Git blob hash of the canonical spec."""
        body = self.canonical()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    def meta(self) -> dict:
        cfg_hash = None
        delta = self.params.get("delta")
        if self.config is not None:
            law = CookieLaw(self.config["m"], tuple((s["probs"], s["weight"])
                                                    for s in self.config["stacks"]))
            cfg_hash = law.config_hash()
            delta = law.delta
        return {
            "tool": "erwlab", "version": __version__, "kind": self.kind, "seed": self.seed,
            "config_hash": cfg_hash, "delta": delta, "runs": self.runs, "caps": self.caps,
            "params": self.params, "spec_version": self.version(),
        }


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return _num(float(x))
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (tuple, set)):
        return list(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


def _num(x):
    """JSON has no inf or nan; write them as strings."""
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float):
        return _num(obj)
    return obj


# writers


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def write_csv(rows, columns, meta, path=None) -> None:
    fh, close = _open_out(path)
    try:
        for k, v in meta.items():
            fh.write(f"# {k}: {json.dumps(_clean(v), sort_keys=True)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt_cell(r[c]) for c in columns])
    finally:
        if close:
            fh.close()


def _fmt_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_json(summary, meta, path=None) -> None:
    fh, close = _open_out(path)
    try:
        json.dump(_clean({"meta": meta, **summary}), fh, indent=2, sort_keys=True)
        fh.write("\n")
    finally:
        if close:
            fh.close()


def write_jsonl(records, meta, path=None) -> None:
    fh, close = _open_out(path)
    try:
        fh.write(json.dumps(_clean({"meta": meta}), sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(_clean(r), sort_keys=True) + "\n")
    finally:
        if close:
            fh.close()


SURVIVAL_COLUMNS = ["n", "at_risk", "survivors", "censored", "survival"]


def survival_rows(table) -> list:
    return list(table.rows())


def _safe_fit(table, **kw):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return fit_tail(table, **kw).to_dict()
    except ValueError as exc:
        return {"error": str(exc)}


# law and spec helpers


def resolve_law(args) -> CookieLaw:
    if getattr(args, "config", None):
        return load_law(args.config)
    if getattr(args, "law_delta", None) is not None:
        return equal_strength_law(args.law_delta)
    return fair_law()


def echo_law(law: CookieLaw) -> None:
    print(f"delta = {law.delta:.12g} (m = {law.m}, {len(law.stacks)} stack(s), "
          f"config {law.config_hash()}, backend {BACKEND})", file=sys.stderr)


def make_spec(args, kind, law=None, runs=None, caps=None, **params) -> ExperimentSpec:
    return ExperimentSpec(kind, None if law is None else law.to_dict(), runs, caps or {},
                          args.seed, params, args.out, args.workers)


def _emit(args, spec, default_fmt, table=None, summary=None, records=None):
    """Write ``table`` (rows, columns) as CSV or ``summary``/``records`` as JSON."""
    fmt = args.format or default_fmt
    meta = spec.meta()
    if fmt == "csv" and table is not None:
        write_csv(table[0], table[1], meta, args.out)
    elif records is not None and fmt == "json":
        write_jsonl(records, meta, args.out)
    elif summary is not None:
        write_json(summary, meta, args.out)
    else:
        write_json({"rows": table[0]}, meta, args.out)


# subcommands


def cmd_walk(args) -> int:
    law = resolve_law(args)
    echo_law(law)
    start = args.start if args.start is not None else (0 if args.mode == "return" else 1)
    cfg = WalkConfig(law, start, args.step_cap, args.range_cap)
    caps = {"step_cap": args.step_cap, "range_cap": args.range_cap}
    kind = {"excursion": "walk-excursion", "return": "walk-return", "escape": "escape"}[args.mode]
    spec = make_spec(args, kind, law, args.runs, caps, start=start)
    if args.mode == "escape":
        e = estimate_escape(cfg, args.runs, args.seed)
        _emit(args, spec, "json", summary={"escape": asdict(e)})
        return EXIT_OK
    b = simulate_walks(cfg, args.runs, args.seed)
    if (args.format or "csv") == "json":
        recs = ({"path": i, "returned": bool(b.returned[i]), "duration": int(b.duration[i]),
                 "depth": int(b.depth[i]), "side": int(b.side[i])} for i in range(len(b)))
        _emit(args, spec, "csv", records=recs)
    else:
        table = b.duration_survival(args.grid_base)
        _emit(args, spec, "csv", table=(survival_rows(table), SURVIVAL_COLUMNS))
    return EXIT_OK


def _tails_summary(batch, height_cap=None) -> dict:
    ext = build_survival(batch.extinction_time, batch.censored)
    prog = build_survival(batch.progeny, batch.censored)
    return {
        "paths": len(batch), "attempts": batch.attempts, "acceptance": batch.acceptance,
        "extinct_fraction": float(batch.extinct.mean()) if len(batch) else math.nan,
        "extinction_fit": _safe_fit(ext), "progeny_fit": _safe_fit(prog),
    }, ext


def cmd_bp(args) -> int:
    law = resolve_law(args)
    echo_law(law)
    caps = {"gen_cap": args.gen_cap, "height_cap": args.height_cap}
    spec = make_spec(args, "bp-conditioned" if args.mode == "conditioned" else
                     "h" if args.mode == "h" else "bp", law, args.runs, caps,
                     mode=args.mode, v0=args.v0)
    mode = args.mode
    if mode in ("raw", "conditioned", "progeny"):
        if mode == "raw":
            b = branching.bp_batch(law, args.v0, args.runs, args.gen_cap, args.seed,
                                   args.height_cap)
        else:
            hc = args.height_cap or (10**4 if law.delta > 1 else None)
            b = branching.conditioned_bp_batch(law, args.v0, args.runs, args.gen_cap,
                                               args.seed, hc)
        summary, ext = _tails_summary(b)
        table = ext if mode != "progeny" else build_survival(b.progeny, b.censored)
        _emit(args, spec, "csv", table=(survival_rows(table), SURVIVAL_COLUMNS), summary=summary)
    elif mode == "modified":
        rows = []
        for p in range(args.runs):
            mp = branching.simulate_modified_bp(law, args.v0, args.gen_cap, args.seed, p)
            for k, (v, mk, ak) in enumerate(zip(mp.trajectory, mp.martingale_m,
                                                mp.compensator_a)):
                rows.append({"path": p, "k": k, "V": int(v), "M": float(mk), "A": float(ak)})
        checks = branching.martingale_check(law, n=max(args.runs, 1000), seed=args.seed)
        summary = {"martingale": [dict(asdict(c), z_dm=c.z_dm, z_dq=c.z_dq) for c in checks]}
        _emit(args, spec, "csv", table=(rows, ["path", "k", "V", "M", "A"]), summary=summary)
    elif mode == "h":
        grid = args.n_grid or [2**k for k in range(3, 11)]
        h = branching.estimate_h(law, grid, args.runs, args.gen_cap, args.seed,
                                 args.height_factor)
        rows = [{"n": e.n, "h": e.h_hat, "ci_lo": e.ci[0], "ci_hi": e.ci[1],
                 "height_cap": e.cap_used} for e in h.estimates]
        _emit(args, spec, "csv", table=(rows, ["n", "h", "ci_lo", "ci_hi", "height_cap"]),
              summary=h.to_dict())
    elif mode == "overshoot":
        xs = args.n_grid or [2**k for k in range(4, 11)]
        res = branching.overshoot_decay(law, xs, args.runs, args.seed)
        cols = ["x", "z", "hits", "tail_prob", "mean", "mean_over_sqrt_x"]
        _emit(args, spec, "csv", table=(res["levels"], cols), summary=res)
    return EXIT_OK


def cmd_sde(args) -> int:
    print(f"delta = {args.delta:.12g} (SDE drift, backend {BACKEND})", file=sys.stderr)
    caps = {"dt": args.dt, "horizon": args.horizon}
    spec = make_spec(args, "sde", None, args.runs, caps, mode=args.mode, delta=args.delta,
                     x0=args.x0)
    mode = args.mode
    if mode == "path":
        p = diffusion.euler_path(args.delta, args.x0, args.dt, args.horizon, args.seed)
        stride = max(1, len(p.times) // 10**4)
        rows = [{"t": float(t), "x": float(x)} for t, x in
                zip(p.times[::stride], p.values[::stride])]
        _emit(args, spec, "csv", table=(rows, ["t", "x"]),
              summary={"absorbed_at": p.absorbed_at, "final": float(p.values[-1])})
    elif mode == "functionals":
        r = diffusion.sample_functionals(args.delta, args.x0, args.dt, args.horizon, args.runs,
                                         args.seed)
        b = r.batch
        rows = [{"sigma0": float(s), "area": float(a), "censored": int(c)}
                for s, a, c in zip(b.sigma0, b.area, b.censored)]
        summary = {"censored_fraction": r.censored_fraction,
                   "sigma_fit": r.sigma_fit.to_dict(), "area_fit": r.area_fit.to_dict(),
                   "targets": {"sigma": 1 - args.delta, "area": (1 - args.delta) / 2}}
        _emit(args, spec, "json", table=(rows, ["sigma0", "area", "censored"]),
              summary=summary)
    elif mode == "scaling":
        x2 = args.x2 or 2 * args.x0
        r = diffusion.scaling_check(args.delta, args.x0, x2, args.dt, args.runs, args.seed,
                                    args.horizon)
        _emit(args, spec, "json", summary={"ks": r.ks.to_dict(), "x1": r.x1, "x2": r.x2,
                                           "censored": [r.censored_1, r.censored_2]})
    elif mode == "ab":
        r = diffusion.estimate_ab(args.delta, args.dt, args.runs, args.seed, args.horizon,
                                  args.x0)
        _emit(args, spec, "json", summary={"ab": asdict(r)})
    elif mode == "marginal":
        v = diffusion.sample_marginal(args.delta, args.x0, args.t, args.runs, args.dt, args.seed)
        rows = [{"value": float(x)} for x in v]
        q = np.quantile(v, [0.1, 0.25, 0.5, 0.75, 0.9])
        _emit(args, spec, "json", table=(rows, ["value"]),
              summary={"t": args.t, "mean": float(v.mean()), "absorbed": float((v == 0).mean()),
                       "quantiles": dict(zip(["q10", "q25", "q50", "q75", "q90"], q))})
    return EXIT_OK


def read_samples(path):
    """(value, censored) rows from a CSV file; a header row and '#' lines are skipped."""
    vals, cens = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(line for line in fh if not line.startswith("#")):
            if not row:
                continue
            try:
                v = float(row[0])
            except ValueError:
                if not vals:  # header
                    continue
                raise ConfigError(f"bad value {row[0]!r} in {path}") from None
            vals.append(v)
            cens.append(len(row) > 1 and row[1].strip().lower() in ("1", "true", "yes"))
    if not vals:
        raise ConfigError(f"no samples in {path}")
    return np.asarray(vals), np.asarray(cens, dtype=bool)


def cmd_fit(args) -> int:
    vals, cens = read_samples(args.input)
    integer = bool(np.all(vals == np.round(vals))) and vals.min() >= 1
    table = build_survival(vals, cens, args.grid_base, integer=integer,
                           start=1.0 if integer else float(max(vals.min(), 1e-12)))
    spec = make_spec(args, "fit", None, len(vals), {}, input=os.path.basename(args.input),
                     n_lo=args.n_lo, n_hi=args.n_hi)
    f = fit_tail(table, args.n_lo, args.n_hi, seed=args.seed, tol=args.tol)
    _emit(args, spec, "json", table=(survival_rows(table), SURVIVAL_COLUMNS),
          summary={"fit": f.to_dict()})
    return EXIT_OK


PHASE_COLUMNS = ["delta", "depth", "depth_lo", "depth_hi", "depth_target", "duration",
                 "duration_lo", "duration_hi", "duration_target", "return", "return_lo",
                 "return_hi", "return_target", "verdict", "acceptance", "errors"]


def _phase_flat(row) -> dict:
    out = {"delta": row.delta, "verdict": row.verdict, "acceptance": row.acceptance,
           "errors": "; ".join(row.errors)}
    for name, fit, target in zip(("depth", "duration", "return"),
                                 (row.depth, row.duration, row.ret), row.targets):
        out[name] = fit.exponent if fit else math.nan
        out[f"{name}_lo"] = fit.ci_exponent[0] if fit else math.nan
        out[f"{name}_hi"] = fit.ci_exponent[1] if fit else math.nan
        out[f"{name}_target"] = target
    return out


def cmd_sweep(args) -> int:
    caps = {"gen_cap": args.gen_cap, "height_cap": args.height_cap,
            "return_cap": args.return_cap}
    spec = make_spec(args, "phase-sweep", None, args.budget, caps, deltas=args.deltas)
    for d in args.deltas:
        print(f"delta = {equal_strength_law(d).delta:.12g}", file=sys.stderr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = experiments.phase_sweep(args.deltas, args.budget, args.seed,
                                       gen_cap=args.gen_cap, height_cap=args.height_cap,
                                       return_cap=args.return_cap)
    _emit(args, spec, "csv", table=([_phase_flat(r) for r in rows], PHASE_COLUMNS),
          summary={"rows": [r.to_dict() for r in rows]})
    return EXIT_OK


def cmd_mean_r(args) -> int:
    law = resolve_law(args) if (args.config or args.law_delta is not None) else None
    if law is None:
        law = equal_strength_law(args.delta)
    echo_law(law)
    spec = make_spec(args, "mean-r", law, args.budget, {"caps": args.caps}, method=args.method)
    t = experiments.censored_mean_R(law.delta, args.caps, args.budget, args.seed, args.method,
                                    law=law)
    rows = [asdict(r) for r in t.rows]
    _emit(args, spec, "csv", table=(rows, ["cap", "mean", "se", "returned_below_cap"]),
          summary=t.to_dict())
    return EXIT_OK


def cmd_accept(args) -> int:
    selected = None
    if args.suite and args.suite != "all":
        selected = [s.strip() for s in args.suite.split(",") if s.strip()]
        known = set(acceptance.KEYS) | {str(c[0]) for c in acceptance.CRITERIA}
        bad = [s for s in selected if s not in known]
        if bad:
            raise ConfigError(f"unknown criteria {bad}; choose from {acceptance.KEYS}")
    spec = make_spec(args, "accept", None, None, {}, suite=args.suite)

    def report(r):
        print(r.line(), file=sys.stderr, flush=True)

    results = acceptance.run_suite(selected, args.seed, report=report)
    passed = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed", file=sys.stderr)
    write_json({"passed": passed, "criteria": [r.to_dict() for r in results]}, spec.meta(),
               args.out)
    return EXIT_OK if passed else EXIT_FAIL


# parser


def _int(s: str) -> int:
    """Integers, also written as 1e6 or 10**6."""
    s = s.strip()
    try:
        if "**" in s:
            a, b = s.split("**")
            return int(a) ** int(b)
        v = float(s) if any(c in s for c in ".eE") else int(s)
        if int(v) != v:
            raise ValueError
        return int(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None


def _ints(s: str) -> list:
    return [_int(x) for x in s.split(",") if x.strip()]


def _floats(s: str) -> list:
    return [float(x) for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--seed", type=_int, default=argparse.SUPPRESS,
                      help=f"master seed (default ${streams.SEED_ENV} or {streams.DEFAULT_SEED})")
    glob.add_argument("--workers", type=_int, default=argparse.SUPPRESS,
                      help="worker processes (default: available CPUs)")
    glob.add_argument("--out", default=argparse.SUPPRESS, help="output file (default stdout)")
    glob.add_argument("--format", choices=("csv", "json"), default=argparse.SUPPRESS,
                      help="csv for tables, json for summaries or raw samples")

    p = argparse.ArgumentParser(prog="erwlab", parents=[glob],
                                description="Excited random walk experiments.")
    p.add_argument("--version", action="version", version=f"erwlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def law_flags(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--config", help="YAML cookie environment (m, stacks)")
        g.add_argument("--law-delta", type=float, dest="law_delta",
                       help="equal-strength environment with this delta")

    w = sub.add_parser("walk", parents=[glob], help="walk excursions, returns or escape")
    law_flags(w)
    w.add_argument("--mode", choices=("excursion", "return", "escape"), default="excursion")
    w.add_argument("--runs", type=_int, default=10**4)
    w.add_argument("--start", type=_int, default=None)
    w.add_argument("--step-cap", type=_int, default=10**6)
    w.add_argument("--range-cap", type=_int, default=10**6)
    w.add_argument("--grid-base", type=float, default=2**0.5)
    w.set_defaults(func=cmd_walk)

    b = sub.add_parser("bp", parents=[glob], help="branching process of upcrossings")
    law_flags(b)
    b.add_argument("--mode", choices=("raw", "modified", "conditioned", "h", "progeny",
                                      "overshoot"), default="raw")
    b.add_argument("--v0", type=_int, default=1)
    b.add_argument("--runs", type=_int, default=10**4)
    b.add_argument("--gen-cap", type=_int, default=branching.DEFAULT_GEN_CAP)
    b.add_argument("--height-cap", type=_int, default=None)
    b.add_argument("--height-factor", type=_int, default=20)
    b.add_argument("--n-grid", type=_ints, default=None, help="levels for h or overshoot")
    b.set_defaults(func=cmd_bp)

    s = sub.add_parser("sde", parents=[glob], help="squared Bessel diffusion")
    s.add_argument("--delta", type=float, required=True, help="drift of the SDE")
    s.add_argument("--mode", choices=("path", "functionals", "scaling", "ab", "marginal"),
                   default="functionals")
    s.add_argument("--x0", type=float, default=1.0)
    s.add_argument("--x2", type=float, default=None, help="second start for scaling")
    s.add_argument("--t", type=float, default=1.0, help="time for marginal")
    s.add_argument("--dt", type=float, default=diffusion.DEFAULT_DT)
    s.add_argument("--horizon", type=float, default=diffusion.DEFAULT_HORIZON)
    s.add_argument("--runs", type=_int, default=10**4)
    s.set_defaults(func=cmd_sde)

    f = sub.add_parser("fit", parents=[glob], help="tail fit of (value, censored) samples")
    f.add_argument("input", help="CSV with value and optional censored columns")
    f.add_argument("--n-lo", type=float, default=None)
    f.add_argument("--n-hi", type=float, default=None)
    f.add_argument("--tol", type=float, default=0.1)
    f.add_argument("--grid-base", type=float, default=2**0.5)
    f.set_defaults(func=cmd_fit)

    sw = sub.add_parser("sweep", parents=[glob], help="tail exponents across delta")
    sw.add_argument("--deltas", type=_floats, default=[0.0, 0.5, 2.0, 4.0])
    sw.add_argument("--budget", type=_int, default=10**5)
    sw.add_argument("--gen-cap", type=_int, default=10**6)
    sw.add_argument("--height-cap", type=_int, default=10**4)
    sw.add_argument("--return-cap", type=_int, default=10**7)
    sw.set_defaults(func=cmd_sweep)

    m = sub.add_parser("mean-r", parents=[glob], help="censored mean return time")
    law_flags(m)
    m.add_argument("--delta", type=float, default=2.0)
    m.add_argument("--caps", type=_ints, default=[10**4, 10**6])
    m.add_argument("--budget", type=_int, default=10**5)
    m.add_argument("--method", choices=("bp", "walk"), default="bp")
    m.set_defaults(func=cmd_mean_r)

    a = sub.add_parser("accept", parents=[glob], help="run the acceptance suite")
    a.add_argument("--suite", default="all",
                   help=f"'all' or comma-separated names/numbers: {','.join(acceptance.KEYS)}")
    a.set_defaults(func=cmd_accept)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for k in ("seed", "workers", "out", "format"):
        if not hasattr(args, k):
            setattr(args, k, None)
    try:
        args.seed = streams.resolve_seed(args.seed)
    except ValueError:
        print(f"error: {streams.SEED_ENV} must be an integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers is not None:
        parallel.set_default_workers(args.workers)
    try:
        return args.func(args)
    except (ValueError, yaml.YAMLError, OSError) as exc:  # ConfigError is a ValueError
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
