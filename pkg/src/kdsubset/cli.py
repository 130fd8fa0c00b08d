"""Command-line interface: ``kdsubset {generate,eval,select,stein-points,table}``.

Every command accepts ``--config FILE`` holding ``key = value`` lines (keys
are the long flag names, with dashes or underscores). Flags given on the
command line override the file. CSV output opens with ``#`` metadata lines.

Exit codes: 0 success, 2 configuration error, 3 resource guard, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from .discrepancy import ResourceGuardError, linf_star_exact
from .experiments import (
    EXPERIMENTS,
    TABLE_COLUMNS,
    THREADS_ENV,
    build_kernel,
    config_hash,
    csv_header,
    evaluate,
    format_value,
    run_table,
)
from .generators import ConfigurationError, GeneratorSpec, generate, target_model
from .pointset import DomainError, PointFileError, gather, load_pointset
from .select import SelectConfig, select_subset
from .stein_points import SteinPointsConfig, stein_points

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_IO = 0, 2, 3, 4
_OUTPUT_KEYS = {"out", "trace", "indices", "summary", "config", "func", "command"}


def _floats(text: str) -> list[float]:
    parts = text.replace(",", " ").split()
    if not parts:
        raise argparse.ArgumentTypeError("expected one or more numbers")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(p) for p in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None


def _bandwidth(text: str):
    if text == "median":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("bandwidth must be 'median' or a number") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment line."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


# ---------------------------------------------------------------------------
# output helpers


class _Output:
    """Text sink for a path, or stdout for ``-`` / ``None``."""

    def __init__(self, path):
        self.path = None if path in (None, "-") else Path(path)

    def __enter__(self):
        self.fh = sys.stdout if self.path is None else open(self.path, "w", newline="")
        return self.fh

    def __exit__(self, *exc):
        if self.path is not None:
            self.fh.close()
        else:
            self.fh.flush()


def _write_csv(path, command: str, config: dict, columns, rows) -> None:
    with _Output(path) as fh:
        for line in csv_header(command, config):
            fh.write(line + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([format_value(r.get(c, "")) for c in columns])


def _write_points(path, X: np.ndarray, header: list[str]) -> None:
    with _Output(path) as fh:
        for line in header:
            fh.write(line + "\n")
        for row in X:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def _config_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _OUTPUT_KEYS}


def _measure_params(args) -> dict:
    params = {
        "gamma": args.gamma,
        "target": args.target,
        "bandwidth": None if args.bandwidth in (None, "median") else float(args.bandwidth),
        "seed": args.seed,
    }
    if args.alpha is not None:
        params["alpha"] = args.alpha
    if args.beta is not None:
        params["beta"] = args.beta
    return params


def _require(args, *names) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigurationError(f"missing required option(s): {', '.join(missing)}")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    _require(args, "kind")
    params = {"skip": args.skip}
    if args.alpha is not None:
        params["alpha"] = args.alpha
    if args.beta is not None:
        params["beta"] = args.beta
    spec = GeneratorSpec(kind=args.kind, dim=args.dim, count=args.count, seed=args.seed, params=params)
    P = generate(spec)
    _write_points(args.out, P.coords, csv_header("generate", _config_of(args)))
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "points", "measure")
    t0 = time.monotonic()
    uniform = args.measure != "ksd"
    P = load_pointset(args.points, expect_unit_cube=uniform)
    params = _measure_params(args)
    params["trials"] = args.trials
    res = evaluate(P, args.measure, params)
    config = _config_of(args)
    row = {
        "points": args.points, "n": P.count, "d": P.dim, **res, "seed": args.seed,
        "wall_time": round(time.monotonic() - t0, 3), "config_hash": config_hash(config),
    }
    cols = ["points", "n", "d", "measure", "value", "clamped", "bandwidth", "seed", "wall_time", "config_hash"]
    _write_csv(args.out, "eval", config, cols, [row])
    return EXIT_OK


def cmd_select(args) -> int:
    _require(args, "population", "measure", "m")
    t0 = time.monotonic()
    P = load_pointset(args.population, expect_unit_cube=args.measure != "ksd")
    if not 1 <= args.m < P.count:
        raise ConfigurationError(f"--m must satisfy 1 <= m < n = {P.count}, got {args.m}")
    K = build_kernel(args.measure, P.coords, _measure_params(args), m=args.m)
    cfg = SelectConfig(
        m=args.m, R_g=args.R_g, R_l=args.R_l, L=args.L, perturb_count=args.perturb,
        time_budget=args.budget, seed=args.seed, cache_gram=not args.no_gram_cache,
    )
    try:
        res = select_subset(P, K, cfg)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    X = gather(P, res.subset).coords
    config = _config_of(args)
    chash = config_hash(config)
    header = csv_header("select", config)
    if args.out is not None:
        _write_points(args.out, X, header)
    if args.indices is not None:
        with _Output(args.indices) as fh:
            for line in header:
                fh.write(line + "\n")
            fh.write("\n".join(str(i) for i in res.subset.members) + "\n")
    if args.trace is not None:
        rows = [{**vars(t), "seed": args.seed, "config_hash": chash} for t in res.trace]
        cols = ["restart", "iteration", "objective", "swapped_out", "swapped_in", "event", "seed", "config_hash"]
        _write_csv(args.trace, "select-trace", config, cols, rows)
    linf = ""
    if args.linf and args.measure != "ksd":
        try:
            linf = linf_star_exact(X).value
        except ResourceGuardError:
            linf = "guard"
    row = {
        "population": args.population, "n": P.count, "m": args.m, "measure": res.value.kind,
        "value": res.value.value, "objective": res.objective, "linf": linf,
        "bandwidth": getattr(K, "bandwidth", ""), "seed": args.seed,
        "restarts_done": res.restarts_done, "timed_out": res.timed_out,
        "wall_time": round(time.monotonic() - t0, 3), "config_hash": chash,
    }
    _write_csv(args.summary, "select", config, list(row), [row])
    return EXIT_OK


def cmd_stein_points(args) -> int:
    _require(args, "m")
    params = {}
    if args.alpha is not None:
        params["alpha"] = args.alpha
    if args.beta is not None:
        params["beta"] = args.beta
    model = target_model(args.target, args.dim, params)
    cfg = SteinPointsConfig(
        target_count=args.m, score=model, bandwidth=args.bandwidth or "median", lr=args.lr,
        steps=args.steps, restarts=args.restarts, seed=args.seed, gradient=args.gradient,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    res = stein_points(cfg)
    config = _config_of(args)
    chash = config_hash(config)
    header = csv_header("stein-points", config)
    if args.out is not None:
        _write_points(args.out, res.points.coords, header)
    rows = [
        {"count": c, "bandwidth": h, "value": v, "seed": args.seed, "config_hash": chash}
        for c, h, v in res.ksd_trace
    ]
    if args.trace is not None:
        _write_csv(args.trace, "stein-points-trace", config, list(rows[0]), rows)
    final = {**rows[-1], "measure": "ksd-sq", "wall_time": round(res.elapsed, 3)}
    _write_csv(args.summary, "stein-points", config, list(final), [final])
    return EXIT_OK


def cmd_table(args) -> int:
    _require(args, "experiment")
    sel = {"R_g": args.R_g, "R_l": args.R_l, "L": args.L}
    if args.perturb is not None:
        sel["perturb_count"] = args.perturb
    sp = {"steps": args.steps, "restarts": args.restarts, "gradient": args.gradient}
    threads = args.threads if args.threads is not None else int(os.environ.get(THREADS_ENV, "1") or 1)
    log = None
    if args.verbose:
        def log(r):
            print(f"[{r['experiment']}] m={r['m']} {r['method']} seed={r['seed']} "
                  f"{r['measure']}={r['value']:.6g} ({r['wall_time']}s)", file=sys.stderr)
    config, rows = run_table(
        args.experiment, scale=args.scale, ms=args.ms, seeds=tuple(range(args.seeds)),
        budget=args.budget, select_params=sel, stein_params=sp, workers=threads, progress=log,
    )
    _write_csv(args.out, "table", config, TABLE_COLUMNS, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_target_args(p) -> None:
    p.add_argument("--target", choices=("mixture", "beta"), default="mixture",
                   help="target distribution for the Stein kernel")
    p.add_argument("--alpha", type=_floats, help="Beta shape alpha (one value or one per dimension)")
    p.add_argument("--beta", type=_floats, help="Beta shape beta (one value or one per dimension)")


def _add_measure_args(p, measures) -> None:
    p.add_argument("--measure", choices=measures)
    p.add_argument("--gamma", type=_floats, help="weights of the weighted star kernel (default 1)")
    p.add_argument("--bandwidth", type=_bandwidth, help="Stein kernel bandwidth, or 'median'")
    _add_target_args(p)


def _add_search_args(p) -> None:
    p.add_argument("--R_g", "--R-g", dest="R_g", type=int, default=5, help="global restarts")
    p.add_argument("--R_l", "--R-l", dest="R_l", type=int, default=5, help="local restarts per global one")
    p.add_argument("--L", type=int, default=100, help="random draws per initialization")
    p.add_argument("--perturb", type=int, help="indices replaced per perturbation")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="kdsubset", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="file of 'key = value' lines; flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("generate", cmd_generate, "write a candidate point set")
    p.add_argument("--kind", choices=("sobol", "fibonacci", "iid-uniform", "iid-gaussian-mixture", "iid-beta-product"))
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--skip", type=int, default=0, help="leading Sobol' points to drop")
    p.add_argument("--alpha", type=_floats)
    p.add_argument("--beta", type=_floats)
    p.add_argument("--out", help="point file (default stdout)")

    p = add("eval", cmd_eval, "evaluate a discrepancy measure of a point file")
    p.add_argument("--points")
    _add_measure_args(p, ("l2star", "wstar", "ksd", "linf", "linf-lb"))
    p.add_argument("--trials", type=int, default=100_000, help="random corners for linf-lb")
    p.add_argument("--out", help="CSV file (default stdout)")

    p = add("select", cmd_select, "select a low-discrepancy subset of a population")
    p.add_argument("--population")
    _add_measure_args(p, ("l2star", "wstar", "ksd"))
    p.add_argument("--m", type=int)
    _add_search_args(p)
    p.add_argument("--budget", type=float, default=0.0, help="soft time budget in seconds (0 = none)")
    p.add_argument("--no-gram-cache", action="store_true")
    p.add_argument("--linf", action="store_true", help="also report the exact L-infinity star discrepancy")
    p.add_argument("--out", help="point file of the selected subset")
    p.add_argument("--indices", help="file of selected indices")
    p.add_argument("--trace", help="CSV of the search trace")
    p.add_argument("--summary", help="summary CSV (default stdout)")

    p = add("stein-points", cmd_stein_points, "greedy Stein Points baseline")
    _add_target_args(p)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--m", type=int, help="number of points")
    p.add_argument("--bandwidth", type=_bandwidth, default="median")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--gradient", choices=("fd", "analytic"), default="fd")
    p.add_argument("--out", help="point file")
    p.add_argument("--trace", help="CSV of KSD^2 after each added point")
    p.add_argument("--summary", help="summary CSV (default stdout)")

    p = add("table", cmd_table, "run an experiment table")
    p.add_argument("--experiment", choices=tuple(EXPERIMENTS))
    p.add_argument("--scale", type=float, default=1.0, help="multiplies population sizes and budgets")
    p.add_argument("--ms", type=_ints, help="subset sizes (default: the experiment's rows)")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds, 0..seeds-1")
    p.add_argument("--budget", type=float, help="per-cell time budget in seconds (default 300*scale)")
    _add_search_args(p)
    p.add_argument("--steps", type=int, default=500, help="Stein Points Adam steps")
    p.add_argument("--restarts", type=int, default=10, help="Stein Points Adam restarts")
    p.add_argument("--gradient", choices=("fd", "analytic"), default="fd")
    p.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
    p.add_argument("--verbose", action="store_true", help="log each finished cell to stderr")
    p.add_argument("--out", help="CSV file (default stdout)")
    return parser, subs


def parse_args(argv=None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config_file(args.config)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file: {exc}") from None
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
        for action in sp._actions:
            if action.dest in values and isinstance(action, argparse._StoreTrueAction):
                values[action.dest] = values[action.dest].lower() in ("1", "true", "yes", "on")
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse usage errors exit with 2
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    except ResourceGuardError as exc:
        print(f"kdsubset: resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except MemoryError:
        print("kdsubset: out of memory", file=sys.stderr)
        return EXIT_RESOURCE
    except PointFileError as exc:
        print(f"kdsubset: bad point file: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"kdsubset: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, DomainError, ValueError) as exc:
        print(f"kdsubset: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
