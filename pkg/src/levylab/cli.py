"""Command-line front end: law tables, path samples, verification suites, stable constants."""
import argparse
import contextlib
import csv
import io
import json
import math
import sys

import numpy as np

from . import __version__
from . import degree_laws as dl
from . import special
from .errors import LevyLabError
from .mechanism import BranchingMechanism, load_mechanism
from .samplers import PathFlag, PathSimConfig, record_summary, simulate_paths
from .verify import SuiteConfigError, builtin_suite, quicken, run_suite

LAWS_FORMAT_VERSION = 1


class ConfigError(Exception):
    pass


def parse_grid(spec):
    """'start:stop:count[:lin|log]' -> array of floats."""
    parts = spec.split(":")
    if len(parts) not in (3, 4):
        raise ConfigError(f"bad grid {spec!r}; expected start:stop:count[:lin|log]")
    try:
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"bad grid {spec!r}: {exc}") from None
    scale = parts[3] if len(parts) == 4 else "lin"
    if count < 1:
        raise ConfigError("grid count must be >= 1")
    if scale == "log":
        if start <= 0 or stop <= 0:
            raise ConfigError("log grids need positive end points")
        return np.geomspace(start, stop, count)
    if scale != "lin":
        raise ConfigError(f"grid scale must be lin or log, got {scale!r}")
    return np.linspace(start, stop, count)


def _clean(obj):
    """Make a structure strict-JSON: NaN -> null, +-inf -> strings."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _dumps(obj, indent=None):
    return json.dumps(_clean(obj), sort_keys=True, indent=indent, allow_nan=False)


@contextlib.contextmanager
def _sink(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _mechanism(args):
    if not args.mechanism:
        raise ConfigError("--mechanism PATH is required")
    try:
        return load_mechanism(args.mechanism)
    except (OSError, json.JSONDecodeError, LevyLabError, ValueError) as exc:
        raise ConfigError(f"cannot load mechanism {args.mechanism}: {exc}") from None


def _need_format(args, fmt):
    if args.format not in (None, fmt):
        raise ConfigError(f"this subcommand writes {fmt}, not {args.format}")


def cmd_laws(args):
    _need_format(args, "csv")
    m = _mechanism(args)
    grid = parse_grid(args.delta_grid)
    if np.any(grid <= 0):
        raise ConfigError("delta grid must be positive")
    buf = io.StringIO()
    buf.write(f"# levylab-laws v{LAWS_FORMAT_VERSION} mechanism_sha256={m.content_hash()}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(dl.DegreeLawReport.columns())
    for d in grid:
        rep = dl.degree_law_report(m, float(d))
        wr.writerow([repr(float(v)) for v in rep.row()])
    with _sink(args.out) as fh:
        fh.write(buf.getvalue())
    return 0


def cmd_sample(args):
    _need_format(args, "jsonl")
    m = _mechanism(args)
    if args.n < 0:
        raise ConfigError("--n must be >= 0")
    delta = args.delta
    record_level = delta if delta is not None else math.inf
    cfg = PathSimConfig(eps=args.eps, dt=args.dt, max_steps=args.max_steps, seed=args.seed)
    if delta is not None and not cfg.eps < delta:
        raise ConfigError("--eps must be below --delta")
    recs = simulate_paths(m, args.r, record_level, cfg, args.n)
    flags = {f.name.lower(): 0 for f in (PathFlag.TRUNCATED, PathFlag.CENSORED, PathFlag.BIG_CAP)}
    errors = 0
    lines = []
    for p in recs:
        s = record_summary(p, delta)
        errors += "error" in s
        for f in (PathFlag.TRUNCATED, PathFlag.CENSORED, PathFlag.BIG_CAP):
            flags[f.name.lower()] += bool(p.flags & f)
        lines.append(_dumps(s))
    lines.append(_dumps({"trailer": True, "n": args.n, "flags": flags, "errors": errors,
                         "seed": args.seed, "mechanism_sha256": m.content_hash(),
                         "version": __version__}))
    with _sink(args.out) as fh:
        fh.write("\n".join(lines) + "\n")
    return 2 if errors else 0


def cmd_verify(args):
    _need_format(args, "json")
    try:
        spec = builtin_suite(args.suite or "default", quick=False)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    if args.spec:
        try:
            with open(args.spec) as fh:
                spec = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read suite spec: {exc}") from None
    if args.mechanism:
        spec["mechanism"] = _mechanism(args).to_json()
    else:
        try:
            BranchingMechanism.from_json(spec["mechanism"])
        except (KeyError, LevyLabError, ValueError) as exc:
            raise ConfigError(f"bad mechanism in suite: {exc}") from None
    if args.seed is not None:
        spec["seed"] = args.seed
    for c in spec.get("checks", []):
        if args.n is not None and "n" in c:
            c["n"] = args.n
        if args.eps is not None and "eps" in c:
            c["eps"] = args.eps
        if args.dt is not None and "dt" in c:
            c["dt"] = args.dt
    if args.quick:
        spec = quicken(spec)
    try:
        report = run_suite(spec)
    except (SuiteConfigError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    with _sink(args.out) as fh:
        fh.write(_dumps(report, indent=2) + "\n")
    return 0 if report["all_passed"] else 1


def cmd_stable(args):
    _need_format(args, "json")
    g = args.gamma
    if not (1.0 < g < 2.0):
        raise ConfigError(f"gamma must lie in (1, 2), got {g}")
    k = special.stable_constants(g)
    lams = parse_grid(args.lambda_grid)
    if np.any(lams < 0):
        raise ConfigError("lambda grid must be >= 0")
    cl = [[float(l), k.c_lambda(float(l))] for l in lams]
    coeffs = dl.stable_coefficients(g)
    resid_c = special.upper_gamma(-g, k.c_gamma) - 1.0 / k.a_gamma
    resid_l = max((abs(c ** g * (k.a_gamma * special.upper_gamma(-g, c) - 1.0)
                       - k.a_gamma / g * math.exp(-l)) for l, c in cl if c > 0.0), default=0.0)
    out = {"gamma": g, "a_gamma": k.a_gamma, "c_gamma": k.c_gamma, "c_gamma_lambda": cl,
           "large_degree_coeffs": coeffs,
           "residuals": {"c_gamma": abs(resid_c), "c_gamma_lambda_max": resid_l},
           "version": __version__}
    with _sink(args.out) as fh:
        fh.write(_dumps(out, indent=2) + "\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="levylab", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--mechanism", metavar="PATH", help="mechanism JSON file")
        sp.add_argument("--out", metavar="PATH", help="output file (default stdout)")
        sp.add_argument("--format", choices=("csv", "jsonl", "json"))
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("laws", help="closed-form law table over a delta grid (CSV)")
    common(sp)
    sp.add_argument("--delta-grid", default="0.5:20:8:log", metavar="SPEC")
    sp.set_defaults(func=cmd_laws)

    sp = sub.add_parser("sample", help="simulate first-passage paths (JSONL)")
    common(sp)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--r", type=float, default=1.0)
    sp.add_argument("--delta", type=float, help="extract the forest of nodes above this mass")
    sp.add_argument("--eps", type=float, default=1e-2)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--max-steps", type=int, default=10**7)
    sp.set_defaults(func=cmd_sample, seed=0)

    sp = sub.add_parser("verify", help="Monte Carlo verification suite (JSON report)")
    common(sp)
    sp.add_argument("--suite", default="default")
    sp.add_argument("--spec", metavar="PATH", help="custom suite JSON")
    sp.add_argument("--n", type=int, help="override every check's sample size")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--quick", action="store_true", help="half the samples, double the budgets")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("stable", help="stable-case constants (JSON)")
    common(sp)
    sp.add_argument("--gamma", type=float, default=1.5)
    sp.add_argument("--lambda-grid", default="0:5:11", metavar="SPEC")
    sp.set_defaults(func=cmd_stable)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"levylab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
