"""Experiment drivers: gain comparison, convergence sweeps and the filter benchmark.

Every driver takes an ExperimentSpec, writes CSV files (header row, 17
significant digits, one file per curve) into ``spec.output_dir`` and
returns a MetricsReport. Wall-clock figures go to the JSON summary only, so
the CSVs of a rerun are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .density import (
    calibrated_bandwidth_constant,
    example1_mixture,
    kde_build,
    mixture_sample,
    optimal_bandwidth,
)
from .fpf import GAIN_METHODS, FilterConfig, fpf_run
from .gain import ObservationFn, diffusion_map_gain, exact_gain, galerkin_gain, gain_eval
from .hermite import eval_series
from .metrics import armse, grid_error, loglog_slope, rmse
from .quadrature import QuadratureRule
from .sde import double_well_model, simulate_truth

__all__ = [
    "KINDS",
    "DEFAULTS",
    "ExperimentSpec",
    "MetricsReport",
    "run_experiment",
    "run_gain_compare",
    "run_convergence_M",
    "run_convergence_Np",
    "run_benchmark",
    "write_csv",
]

KINDS = ("gain_compare", "convergence_M", "convergence_Np", "benchmark")

_MIXTURE = {"mu": 1.0, "var": 0.2}
_GRID = {"grid_lo": -2.0, "grid_hi": 2.0, "grid_n": 2001}

# Defaults per kind; the type of each default is the type a value must parse to.
DEFAULTS: dict[str, dict] = {
    "gain_compare": {**_MIXTURE, **_GRID, "Np": 200, "eps": 0.5, "orders": (1, 4, 7)},
    "convergence_M": {**_MIXTURE, **_GRID, "Np": 200, "eps": 0.5,
                      "orders": (2, 4, 6, 8, 10), "reference": "kde"},
    "convergence_Np": {**_MIXTURE, **_GRID, "M": 10, "Nps": (10, 30, 50, 100, 200),
                       "smoothness": 2, "bandwidth_c": calibrated_bandwidth_constant(),
                       "seed_stride": 1000},
    "benchmark": {"Np": 10, "M": 6, "eps": 0.5, "dt": 0.01, "T": 40.0,
                  "state_noise_cov": 0.4, "obs_noise_cov": 0.4, "x0": 0.1,
                  "init_mean": 0.0, "init_var": 1.0, "eps_dm": 0.1, "dm_iters": 10_000,
                  "methods": ("hermite_galerkin", "diffusion_map", "constant"),
                  "scale_gain_by_obs_noise": False,
                  "timing_Nps": (200, 500), "timing_T": 10.0, "timing_every": 50},
}

DEFAULT_SEEDS = {
    "gain_compare": [0],
    "convergence_M": list(range(20)),
    "convergence_Np": list(range(20)),
    "benchmark": list(range(50)),
}

# --full: long benchmark (T = 400, 100 runs)
FULL_OVERRIDES = {"benchmark": ({"T": 400.0}, list(range(100)))}


def _identity(x):
    return np.asarray(x, dtype=float)


_IDENTITY = ObservationFn(_identity, "h(x) = x")


def _coerce(kind: str, key: str, value):
    default = DEFAULTS[kind][key]
    if isinstance(default, tuple):
        items = value.split(",") if isinstance(value, str) else list(value)
        items = [v.strip() if isinstance(v, str) else v for v in items]
        cast = type(default[0])
        out = tuple(cast(v) for v in items if v != "")
        if not out:
            raise ValueError(f"{kind}.{key} must be a non-empty list")
        return out
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"{kind}.{key} must be a boolean, got {value!r}")
            return low in ("true", "1", "yes")
        return bool(value)
    if isinstance(default, int):
        f = float(value)
        if f != int(f):
            raise ValueError(f"{kind}.{key} must be an integer, got {value!r}")
        return int(f)
    if isinstance(default, float):
        return float(value)
    return str(value).strip()


@dataclass
class ExperimentSpec:
    kind: str
    parameters: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    output_dir: Path = Path("out")
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        unknown = sorted(set(self.parameters) - set(DEFAULTS[self.kind]))
        if unknown:
            raise ValueError(f"unknown parameter(s) for {self.kind}: {', '.join(unknown)}")
        self.parameters = {k: _coerce(self.kind, k, v) for k, v in self.parameters.items()}
        self.seeds = sorted(int(s) for s in (self.seeds or DEFAULT_SEEDS[self.kind]))
        if any(s < 0 for s in self.seeds) or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct non-negative integers")
        self.output_dir = Path(self.output_dir)
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def param(self, key: str):
        return self.parameters.get(key, DEFAULTS[self.kind][key])

    def resolved(self) -> dict:
        return {k: self.param(k) for k in DEFAULTS[self.kind]}


@dataclass
class MetricsReport:
    kind: str
    rmses: dict = field(default_factory=dict)  # method -> per-seed RMSE list
    armse: dict = field(default_factory=dict)
    cpu_seconds: dict = field(default_factory=dict)
    error_tables: dict = field(default_factory=dict)  # name -> list of row dicts
    slope: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (np.ndarray, tuple)):
        return list(v)
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_csv(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _map_seeds(fn, seeds: list[int], workers: int) -> list:
    """fn(seed) for every seed, in seed order regardless of completion order."""
    if workers == 1 or len(seeds) == 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def _grid(spec: ExperimentSpec) -> np.ndarray:
    n = spec.param("grid_n")
    if n < 2 or not spec.param("grid_hi") > spec.param("grid_lo"):
        raise ValueError("grid needs grid_n >= 2 and grid_hi > grid_lo")
    return np.linspace(spec.param("grid_lo"), spec.param("grid_hi"), n)


def _true_gain(mix, grid: np.ndarray) -> np.ndarray:
    hhat = float(QuadratureRule().integrate(lambda x: _IDENTITY(x) * mix(x)))
    return exact_gain(mix, _IDENTITY, hhat, grid)


def _kde_exact_gain(X: np.ndarray, eps: float, grid: np.ndarray):
    """Exact solution of the gain equation with the KDE as density."""
    kde = kde_build(X, eps)
    quad = QuadratureRule().widened(*kde.support)
    K = exact_gain(kde, _IDENTITY, float(X.mean()), grid, quad)
    return K, K * kde(grid), kde


# -- Example 1: gain curves ----------------------------------------------------

def run_gain_compare(spec: ExperimentSpec) -> MetricsReport:
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    mix = example1_mixture(spec.param("mu"), spec.param("var"))
    grid = _grid(spec)
    seed = spec.seeds[0]
    X = mixture_sample(mix, spec.param("Np"), seed).positions
    eps = spec.param("eps")
    K_true = _true_gain(mix, grid)
    K_kde, _, _ = _kde_exact_gain(X, eps, grid)
    write_csv(out / "gain_exact.csv", ["x", "gain"], zip(grid, K_true))
    write_csv(out / "gain_kde_exact.csv", ["x", "gain"], zip(grid, K_kde))
    rows = []
    for M in spec.param("orders"):
        K = gain_eval(galerkin_gain(X, _IDENTITY, M, eps), grid)
        write_csv(out / f"gain_hermite_M{M}.csv", ["x", "gain"], zip(grid, K))
        rows.append({"M": M, "L2_error_exact": grid_error(K_true, K, grid),
                     "L2_error_kde_exact": grid_error(K_kde, K, grid)})
    write_csv(out / "gain_errors.csv", ["M", "L2_error_exact", "L2_error_kde_exact"],
              ([r["M"], r["L2_error_exact"], r["L2_error_kde_exact"]] for r in rows))
    return MetricsReport("gain_compare", error_tables={"gain_errors": rows},
                         extra={"seed": seed, "parameters": spec.resolved()})


# -- Example 2: convergence in M and in Np ---------------------------------------

class _ConvergenceM:
    def __init__(self, spec: ExperimentSpec):
        self.mix = example1_mixture(spec.param("mu"), spec.param("var"))
        self.grid = _grid(spec)
        self.Np, self.eps, self.orders = spec.param("Np"), spec.param("eps"), spec.param("orders")
        self.K_true = _true_gain(self.mix, self.grid)
        self.f_true = self.K_true * self.mix(self.grid)

    def __call__(self, seed: int) -> list[list[float]]:
        X = mixture_sample(self.mix, self.Np, seed).positions
        K_kde, f_kde, _ = _kde_exact_gain(X, self.eps, self.grid)
        rows = []
        for M in self.orders:
            g = galerkin_gain(X, _IDENTITY, M, self.eps)
            f = eval_series(g.series, self.grid)
            K = gain_eval(g, self.grid)
            rows.append([grid_error(f_kde, f, self.grid), grid_error(self.f_true, f, self.grid),
                         grid_error(K_kde, K, self.grid), grid_error(self.K_true, K, self.grid)])
        return rows


def run_convergence_M(spec: ExperimentSpec) -> MetricsReport:
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    reference = spec.param("reference")
    if reference not in ("kde", "true"):
        raise ValueError("reference must be 'kde' or 'true'")
    job = _ConvergenceM(spec)
    per_seed = np.array(_map_seeds(job, spec.seeds, spec.workers))  # seed x M x 4
    cols = ["f_error_kde", "f_error_true", "gain_error_kde", "gain_error_true"]
    write_csv(out / "convergence_M_per_seed.csv", ["seed", "M", *cols],
              ([s, M, *per_seed[i, j]] for i, s in enumerate(spec.seeds)
               for j, M in enumerate(job.orders)))
    mean = per_seed.mean(axis=0)
    f_col = 0 if reference == "kde" else 1
    rows = []
    for j, M in enumerate(job.orders):
        rows.append({"M": M, "f_error": mean[j, f_col], **dict(zip(cols, mean[j])),
                     "envelope": math.log(M) / M})
    header = ["M", "f_error", *cols, "envelope"]
    write_csv(out / "convergence_M.csv", header, ([r[k] for k in header] for r in rows))
    return MetricsReport("convergence_M", error_tables={"convergence_M": rows},
                         extra={"reference": reference, "seeds": spec.seeds,
                                "parameters": spec.resolved()})


class _ConvergenceNp:
    def __init__(self, spec: ExperimentSpec):
        self.mix = example1_mixture(spec.param("mu"), spec.param("var"))
        self.grid = _grid(spec)
        self.M, self.Nps = spec.param("M"), spec.param("Nps")
        self.s, self.c = spec.param("smoothness"), spec.param("bandwidth_c")
        self.stride = spec.param("seed_stride")
        self.K_true = _true_gain(self.mix, self.grid)
        self.f_true = self.K_true * self.mix(self.grid)
        self.p_true = self.mix(self.grid)

    def __call__(self, seed: int) -> list[list[float]]:
        rows = []
        for N in self.Nps:
            X = mixture_sample(self.mix, N, self.stride * N + seed).positions
            eps = optimal_bandwidth(N, self.s, self.c)
            g = galerkin_gain(X, _IDENTITY, self.M, eps)
            f = eval_series(g.series, self.grid)
            K = gain_eval(g, self.grid)
            _, f_kde, kde = _kde_exact_gain(X, eps, self.grid)
            rows.append([grid_error(self.f_true, f, self.grid, "L1"),
                         grid_error(self.K_true, K, self.grid, "L1"),
                         grid_error(self.p_true, kde(self.grid), self.grid, "L1"),
                         grid_error(self.f_true, f_kde, self.grid, "L1")])
        return rows


def run_convergence_Np(spec: ExperimentSpec) -> MetricsReport:
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    job = _ConvergenceNp(spec)
    per_seed = np.array(_map_seeds(job, spec.seeds, spec.workers))  # seed x Np x 4
    cols = ["f_L1", "gain_L1", "density_L1", "f_kde_exact_L1"]
    write_csv(out / "convergence_Np_per_seed.csv", ["seed", "Np", *cols],
              ([s, N, *per_seed[i, j]] for i, s in enumerate(spec.seeds)
               for j, N in enumerate(job.Nps)))
    mean = per_seed.mean(axis=0)
    rows = [{"Np": N, "eps": optimal_bandwidth(N, job.s, job.c), **dict(zip(cols, mean[j]))}
            for j, N in enumerate(job.Nps)]
    header = ["Np", "eps", *cols]
    write_csv(out / "convergence_Np.csv", header, ([r[k] for k in header] for r in rows))
    slopes = {c: loglog_slope(job.Nps, mean[:, i]) for i, c in enumerate(cols)}
    write_csv(out / "convergence_Np_slopes.csv", ["quantity", "slope"], slopes.items())
    return MetricsReport("convergence_Np", error_tables={"convergence_Np": rows},
                         slope=slopes["f_L1"],
                         extra={"slopes": slopes, "seeds": spec.seeds,
                                "parameters": spec.resolved()})


# -- Example 3: filter benchmark -------------------------------------------------

class _BenchmarkSeed:
    def __init__(self, spec: ExperimentSpec):
        self.p = spec.resolved()
        unknown = sorted(set(self.p["methods"]) - set(GAIN_METHODS))
        if unknown:
            raise ValueError(f"unknown gain method(s): {', '.join(unknown)}")
        self.model = double_well_model(self.p["state_noise_cov"], self.p["obs_noise_cov"])

    def config(self, method: str, seed: int, **over) -> FilterConfig:
        p = self.p
        kw = dict(model=self.model, Np=p["Np"], M=p["M"], eps=p["eps"], dt=p["dt"], T=p["T"],
                  gain_method=method, init_mean=p["init_mean"], init_var=p["init_var"],
                  seed=seed, eps_dm=p["eps_dm"], dm_iters=p["dm_iters"],
                  scale_gain_by_obs_noise=p["scale_gain_by_obs_noise"])
        kw.update(over)
        return FilterConfig(**kw)

    def __call__(self, seed: int) -> dict:
        truth = simulate_truth(self.model, self.p["x0"], self.p["dt"], self.p["T"], seed)
        digest = truth.digest()
        result = {"seed": seed, "digest": digest, "states": truth.states, "times": truth.times}
        for m in self.p["methods"]:
            run = fpf_run(self.config(m, seed), truth)
            if truth.digest() != digest:
                raise RuntimeError(f"observation stream changed during the {m} run")
            result[m] = {"rmse": rmse(truth.states, run.estimates),
                         "seconds": run.gain_time_seconds,
                         "steps": run.estimates.size,
                         "estimates": run.estimates,
                         "diagnostics": run.diagnostics}
        return result


def _per_step_timing(job: _BenchmarkSeed, Np: int, seed: int) -> dict:
    """Per-step gain wall-clock of the two per-particle gains at ensemble size Np.

    Both gains are timed on the same ensembles, taken from a Hermite-Galerkin
    filter run, so neither method's own filter stability affects the figure.
    """
    p = job.p
    T = p["timing_T"]
    truth = simulate_truth(job.model, p["x0"], p["dt"], T, seed)
    run = fpf_run(job.config("hermite_galerkin", seed, Np=Np, T=T,
                             snapshot_every=p["timing_every"]), truth)
    ensembles = [e.positions for e in run.ensembles]
    h = job.model.observation
    out = {"Np": Np, "ensembles": len(ensembles)}

    def hg(X):
        gain_eval(galerkin_gain(X, h, p["M"], p["eps"]), X)

    def dm(X):
        diffusion_map_gain(X, h, p["eps_dm"], p["dm_iters"], strict=False)

    for name, fn in (("hermite_galerkin", hg), ("diffusion_map", dm)):
        fn(ensembles[0])  # warm caches
        t0 = time.perf_counter()
        for X in ensembles:
            fn(X)
        out[f"{name}_ms_per_step"] = 1e3 * (time.perf_counter() - t0) / len(ensembles)
    return out


def run_benchmark(spec: ExperimentSpec) -> MetricsReport:
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    job = _BenchmarkSeed(spec)
    methods = job.p["methods"]
    results = sorted(_map_seeds(job, spec.seeds, spec.workers), key=lambda r: r["seed"])
    write_csv(out / "benchmark_rmse.csv", ["seed", *methods],
              ([r["seed"], *(r[m]["rmse"] for m in methods)] for r in results))
    report = MetricsReport("benchmark")
    for m in methods:
        report.rmses[m] = [r[m]["rmse"] for r in results]
        report.armse[m] = armse(report.rmses[m])
        report.cpu_seconds[m] = float(sum(r[m]["seconds"] for r in results))
    write_csv(out / "benchmark_summary.csv", ["method", "armse", "runs"],
              ([m, report.armse[m], len(results)] for m in methods))
    first = results[0]
    write_csv(out / f"benchmark_trajectory_seed{first['seed']}.csv",
              ["time", "state", *methods],
              zip(first["times"], first["states"], *(first[m]["estimates"] for m in methods)))
    steps = sum(r[methods[0]]["steps"] for r in results)
    report.extra = {
        "seeds": spec.seeds,
        "parameters": spec.resolved(),
        "observation_digests": {r["seed"]: r["digest"] for r in results},
        "ms_per_step": {m: 1e3 * report.cpu_seconds[m] / steps for m in methods},
        "dm_nonconverged_steps": int(sum(r[m]["diagnostics"].get("dm_nonconverged_steps", 0)
                                         for r in results for m in methods)),
    }
    if {"hermite_galerkin", "diffusion_map"} <= set(methods):
        report.extra["per_step_timing"] = [_per_step_timing(job, N, spec.seeds[0])
                                           for N in job.p["timing_Nps"]]
    return report


RUNNERS = {
    "gain_compare": run_gain_compare,
    "convergence_M": run_convergence_M,
    "convergence_Np": run_convergence_Np,
    "benchmark": run_benchmark,
}


def run_experiment(spec: ExperimentSpec) -> MetricsReport:
    """Run one experiment and write its CSVs plus ``<kind>_summary.json``."""
    report = RUNNERS[spec.kind](spec)
    report.to_json(spec.output_dir / f"{spec.kind}_summary.json")
    return report
