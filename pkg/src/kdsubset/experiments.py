"""Measures, run metadata and the desk-scale experiment tables."""

from __future__ import annotations

import hashlib
import json
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .discrepancy import (
    ResourceGuardError,
    kernel_disc_sq,
    ksd_sq,
    linf_star_exact,
    linf_star_lower_bound,
)
from .generators import ConfigurationError, GeneratorSpec, fibonacci, sample_iid, sobol, target_model
from .kernels import StarKernel, SteinKernel, WeightedStarKernel, median_bandwidth
from .pointset import as_array, gather
from .select import SelectConfig, select_subset
from .stein_points import SteinPointsConfig, ksd_sq_self, stein_points

__all__ = [
    "SCHEMA_VERSION",
    "EXPERIMENTS",
    "THREADS_ENV",
    "version_string",
    "config_hash",
    "csv_header",
    "build_kernel",
    "evaluate",
    "run_table",
]

SCHEMA_VERSION = 1
THREADS_ENV = "KDSUBSET_THREADS"


def version_string() -> str:
    """Package version, with the short git revision appended when available."""
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=os.path.dirname(__file__),
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+g{rev}" if rev else __version__


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def csv_header(command: str, config: dict) -> list[str]:
    """``#``-prefixed metadata lines that open every CSV file."""
    return [
        f"# schema_version: {SCHEMA_VERSION}",
        f"# command: {command}",
        f"# version: {version_string()}",
        f"# config: {json.dumps(config, sort_keys=True, default=str)}",
        f"# config_hash: {config_hash(config)}",
    ]


def build_kernel(measure: str, X: np.ndarray, params: dict, m: int | None = None):
    """Kernel for ``measure`` on points ``X``.

    For ``ksd`` the bandwidth is ``params['bandwidth']`` when given; otherwise
    the median heuristic on ``X``, with ``N = m`` when a target size is given.
    """
    d = X.shape[1]
    if measure == "l2star":
        return StarKernel(d)
    if measure == "wstar":
        gammas = params.get("gamma") or [1.0]
        if len(gammas) not in (1, d):
            raise ConfigurationError(f"need 1 or {d} weights, got {len(gammas)}")
        return WeightedStarKernel(gammas if len(gammas) == d else gammas[0], dim=d)
    if measure == "ksd":
        model = target_model(params.get("target", "mixture"), d, params)
        h = params.get("bandwidth")
        if h is None:
            if X.shape[0] < 2:
                raise ConfigurationError("a single point has no median bandwidth; pass --bandwidth")
            try:
                h = median_bandwidth(X, N=m)
            except ValueError as exc:
                raise ConfigurationError(str(exc)) from None
        return SteinKernel(model, float(h))
    raise ConfigurationError(f"unknown measure {measure!r}")


def evaluate(X, measure: str, params: dict) -> dict:
    """Evaluate one measure; returns a dict suitable for a CSV row."""
    X = as_array(X)
    if measure == "linf":
        dv = linf_star_exact(X)
        return {"measure": "linf", "value": dv.value, "clamped": False, "bandwidth": ""}
    if measure == "linf-lb":
        dv = linf_star_lower_bound(X, int(params.get("trials", 100_000)), int(params.get("seed", 0)))
        return {"measure": "linf-lb", "value": dv.value, "clamped": False, "bandwidth": ""}
    K = build_kernel(measure, X, params)
    dv = ksd_sq(X, K) if measure == "ksd" else kernel_disc_sq(X, K)
    return {
        "measure": dv.kind,
        "value": dv.value,
        "clamped": dv.clamped,
        "bandwidth": K.bandwidth if measure == "ksd" else "",
    }


# ---------------------------------------------------------------------------
# experiment tables

# published reference values, keyed by experiment -> column -> m
_PUBLISHED = {
    "table-2d": {
        "l2-subset": {50: 0.035219, 100: 0.022277, 150: 0.016292, 200: 0.014293, 250: 0.011852,
                      500: 0.006944, 1000: 0.005040, 1500: 0.004059, 2000: 0.003519},
        "wl2-subset": {50: 0.048551, 100: 0.033885, 150: 0.025748, 200: 0.022075,
                       250: 0.016913, 500: 0.009694, 1000: 0.006689, 1500: 0.005084},
        "sobol": {50: 0.068086, 100: 0.039844, 150: 0.027410, 200: 0.021813, 250: 0.015680,
                  500: 0.008173, 1000: 0.004705, 1500: 0.004273, 2000: 0.002701},
    },
    "table-3d": {
        "l2-subset": {50: 0.05952, 100: 0.03835, 150: 0.02612, 200: 0.02203, 250: 0.01840,
                      500: 0.01207, 1000: 0.00810, 2000: 0.005030},
        "linf-subset": {50: 0.080156, 100: 0.048574, 150: 0.035248, 200: 0.028038},
        "sobol": {50: 0.09708, 100: 0.06058, 150: 0.04483, 200: 0.03315, 250: 0.02548,
                  500: 0.01460, 1000: 0.008640, 2000: 0.005247},
    },
    "table-4d": {
        "l2-subset": {50: 0.08482, 100: 0.04760, 150: 0.04110, 200: 0.03008, 250: 0.02596,
                      500: 0.01810, 1000: 0.011727, 2000: 0.007808},
        "linf-subset": {50: 0.097189, 100: 0.061478, 150: 0.053195, 200: 0.043015},
        "sobol": {50: 0.13422, 100: 0.09269, 150: 0.06174, 200: 0.05026, 250: 0.03822,
                  500: 0.02290, 1000: 0.014759, 2000: 0.008398},
    },
    "table-5d": {
        "l2-subset": {50: 0.115507, 100: 0.070071, 150: 0.055612, 200: 0.043016,
                      250: 0.034895, 500: 0.026379, 1000: 0.018813},
        "wl2-subset": {50: 0.138205, 100: 0.084502, 150: 0.067193, 200: 0.058678,
                       250: 0.047364, 500: 0.031544, 1000: 0.021454},
        "linf-subset": {50: 0.118428, 100: 0.068499, 150: 0.064438, 200: 0.052454},
        "sobol": {50: 0.165488, 100: 0.120707, 150: 0.074899, 200: 0.058292, 250: 0.053507,
                  500: 0.029017, 1000: 0.018411},
    },
    "table-ksd-mixture": {
        "subset-small": {10: 0.31391, 25: 0.15716, 50: 0.12430, 75: 0.11306, 100: 0.11060,
                         125: 0.10516, 150: 0.10586, 175: 0.10809, 200: 0.10661, 225: 0.10543},
        "subset-large": {10: 0.35244, 25: 0.15008, 50: 0.10749, 75: 0.09576, 100: 0.09006,
                         125: 0.08718, 150: 0.08401, 175: 0.08167, 200: 0.08040, 225: 0.07942},
        "stein-points": {10: 0.338273, 25: 0.23851, 50: 0.21139, 75: 0.18728, 100: 0.17630,
                         125: 0.17592, 150: 0.16202, 175: 0.15339, 200: 0.15103, 225: 0.14976},
    },
    "table-ksd-beta": {
        "subset-small": {10: 16.3517, 25: 6.3977, 50: 4.5439, 75: 4.0879, 100: 4.0989,
                         125: 4.1848, 150: 4.0181, 175: 4.1326, 200: 4.0172, 225: 3.9418},
        "subset-large": {10: 19.7382, 25: 6.6506, 50: 4.0138, 75: 3.5007, 100: 3.2833,
                         125: 3.2183, 150: 3.1468, 175: 3.1135, 200: 3.1403, 225: 3.0569},
        "stein-points": {10: 18.0771, 25: 10.1144, 50: 9.1641, 75: 8.2064, 100: 7.1020,
                         125: 6.7280, 150: 6.5906, 175: 6.4906, 200: 6.4891, 225: 6.1045},
    },
}


@dataclass(frozen=True)
class Experiment:
    name: str
    kind: str  # "uniform" or "ksd"
    dim: int
    methods: tuple
    default_ms: tuple
    target: str = ""


EXPERIMENTS = {
    "table-2d": Experiment("table-2d", "uniform", 2, ("l2-subset", "wl2-subset", "sobol", "fibonacci"), (50, 100, 150, 200)),
    "table-3d": Experiment("table-3d", "uniform", 3, ("l2-subset", "sobol"), (50, 100, 150, 200)),
    "table-4d": Experiment("table-4d", "uniform", 4, ("l2-subset", "sobol"), (50, 100)),
    "table-5d": Experiment("table-5d", "uniform", 5, ("l2-subset", "wl2-subset", "sobol"), (50,)),
    "table-ksd-mixture": Experiment(
        "table-ksd-mixture", "ksd", 2, ("subset-small", "subset-large", "stein-points"),
        (10, 25, 50, 75, 100, 125, 150, 175, 200, 225), "mixture",
    ),
    "table-ksd-beta": Experiment(
        "table-ksd-beta", "ksd", 2, ("subset-small", "subset-large", "stein-points"),
        (10, 25, 50, 75, 100, 125, 150, 175, 200, 225), "beta",
    ),
}

TABLE_COLUMNS = [
    "experiment", "m", "method", "population", "measure", "value", "paper_value",
    "paper_linf_subset", "l2_objective", "seed", "wall_time", "config_hash",
]


def _linf(X, seed: int) -> tuple[str, float]:
    try:
        return "linf", linf_star_exact(X).value
    except ResourceGuardError:
        return "linf-lb", linf_star_lower_bound(X, 1_000_000, seed).value


def _uniform_cell(args):
    exp, method, m, pop_n, seed, budget, sel = args
    t0 = time.monotonic()
    d = EXPERIMENTS[exp].dim
    l2 = ""
    if method in ("l2-subset", "wl2-subset"):
        P = sobol(pop_n, d)
        K = StarKernel(d) if method == "l2-subset" else WeightedStarKernel(1.0, dim=d)
        cfg = SelectConfig(m=m, seed=seed, time_budget=budget, **sel)
        res = select_subset(P, K, cfg)
        X = gather(P, res.subset).coords
        l2 = res.value.value
    elif method == "sobol":
        X = sobol(m, d).coords
    elif method == "fibonacci":
        X = fibonacci(m).coords
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    measure, value = _linf(X, seed)
    return {"m": m, "method": method, "population": pop_n if "subset" in method else "",
            "measure": measure, "value": value, "l2_objective": l2, "seed": seed,
            "wall_time": round(time.monotonic() - t0, 3)}


def _ksd_subset_cell(args):
    exp, method, m, pop_n, seed, budget, sel = args
    t0 = time.monotonic()
    target = EXPERIMENTS[exp].target
    spec = GeneratorSpec(kind=f"iid-{'gaussian-mixture' if target == 'mixture' else 'beta-product'}",
                         dim=2, count=pop_n, seed=seed)
    P = sample_iid(spec).coords
    model = target_model(spec.kind, 2, {})
    h = median_bandwidth(P, N=m)
    cfg = SelectConfig(m=m, seed=seed, time_budget=budget, **sel)
    res = select_subset(P, SteinKernel(model, h), cfg)
    value = ksd_sq_self(gather(P, res.subset), model)
    return {"m": m, "method": method, "population": pop_n, "measure": "ksd-sq",
            "value": value, "l2_objective": "", "seed": seed,
            "wall_time": round(time.monotonic() - t0, 3)}


def _stein_points_cell(args):
    exp, ms, seed, sp = args
    t0 = time.monotonic()
    model = target_model(EXPERIMENTS[exp].target, 2, {})
    res = stein_points(SteinPointsConfig(target_count=max(ms), score=model, seed=seed, **sp))
    elapsed = round(time.monotonic() - t0, 3)
    by_count = {c: v for c, _, v in res.ksd_trace}
    return [{"m": m, "method": "stein-points", "population": "", "measure": "ksd-sq",
             "value": by_count[m], "l2_objective": "", "seed": seed, "wall_time": elapsed}
            for m in ms]


def _call(job):
    fn, args = job
    return fn(args)


def run_table(
    experiment: str,
    scale: float = 1.0,
    ms=None,
    seeds=(0,),
    budget: float | None = None,
    select_params: dict | None = None,
    stein_params: dict | None = None,
    workers: int | None = None,
    progress=None,
):
    """Run one experiment table; returns ``(config, rows)``.

    Population sizes and per-cell time budgets are multiplied by ``scale``.
    """
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(
            f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}"
        )
    if scale <= 0:
        raise ConfigurationError("scale must be positive")
    exp = EXPERIMENTS[experiment]
    ms = tuple(int(m) for m in (ms or exp.default_ms))
    sel = dict(select_params or {})
    sp = dict(stein_params or {})
    if budget is None:
        budget = 300.0 * scale
    if workers is None:
        workers = int(os.environ.get(THREADS_ENV, "1") or 1)
    jobs = []
    if exp.kind == "uniform":
        pop_n = max(1, int(4096 * scale))
        for m in ms:
            if m >= pop_n and any("subset" in meth for meth in exp.methods):
                raise ConfigurationError(f"m={m} is not below the population size {pop_n}")
        for seed in seeds:
            for m in ms:
                for method in exp.methods:
                    if "subset" not in method and seed != seeds[0]:
                        continue
                    jobs.append((_uniform_cell, (experiment, method, m, pop_n, seed, budget, sel)))
        pops = {"population": pop_n}
    else:
        small, large = max(2, int(1000 * scale)), max(2, int(10000 * scale))
        for m in ms:
            if m >= small:
                raise ConfigurationError(f"m={m} is not below the population size {small}")
        for seed in seeds:
            for m in ms:
                jobs.append((_ksd_subset_cell, (experiment, "subset-small", m, small, seed, budget, sel)))
                jobs.append((_ksd_subset_cell, (experiment, "subset-large", m, large, seed, budget, sel)))
            jobs.append((_stein_points_cell, (experiment, ms, seed, sp)))
        pops = {"population_small": small, "population_large": large}
    config = {
        "experiment": experiment, "scale": scale, "ms": list(ms), "seeds": list(seeds),
        "budget": budget, "select": sel, "stein_points": sp, **pops,
    }
    chash = config_hash(config)
    published = _PUBLISHED.get(experiment, {})
    rows = []

    def collect(result):
        for r in result if isinstance(result, list) else [result]:
            r["experiment"] = experiment
            r["paper_value"] = published.get(r["method"], {}).get(r["m"], "")
            r["paper_linf_subset"] = published.get("linf-subset", {}).get(r["m"], "")
            r["config_hash"] = chash
            rows.append(r)
            if progress is not None:
                progress(r)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_call, jobs):
                collect(result)
    else:
        for job in jobs:
            collect(_call(job))
    rows.sort(key=lambda r: (r["m"], exp.methods.index(r["method"]), r["seed"]))
    return config, rows


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)
