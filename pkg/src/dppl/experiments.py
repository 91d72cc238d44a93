"""End-to-end experiment steps shared by the CLI and the acceptance suite.

Every per-network work item draws its randomness from
``SeedSequence([seed, stream, network_id])`` so results do not depend on
execution order or on the number of worker processes.
"""

from __future__ import annotations

import csv
import math
import statistics
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .learn import DppModel, infer, inference_kernel
from .dpp import greedy_map, sample_dpp
from .network import LinkNetwork, PowerConfig, generate_network, sample_network_size, sum_rate
from .scheduler import (GpConvergenceWarning, GpSettings, exhaustive_schedule, run_gp,
                        thinning_schedule)
from .storage import ExperimentConfig, NetworkRecord

METHODS = ("gp", "exhaustive", "dpp-map", "dpp-sample", "thinning")
EVAL_COLUMNS = ("network_id", "method", "m", "sum_rate", "wall_time_s")

# stream tags keep the random streams of different steps independent
STREAM_NETWORK = 0
STREAM_SAMPLE = 1
STREAM_THINNING = 2
STREAM_BENCH = 3
STREAM_SATURATION = 4


def item_rng(seed: int, stream: int, item: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(item)]))


def parallel_map(fn, items, workers: int = 1) -> list:
    """Ordered map, in a process pool when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# -- generation and labelling ------------------------------------------------

def make_network(config: ExperimentConfig, network_id: int, m: int | None = None,
                 stream: int = STREAM_NETWORK, seed: int | None = None) -> LinkNetwork:
    rng = item_rng(config.seed if seed is None else seed, stream, network_id)
    if m is None:
        m = sample_network_size(config.mean_links, rng)
    return generate_network(m, config.disc_radius, config.link_distance, config.alpha, rng)


def generate_records(config: ExperimentConfig, count: int, start_id: int = 0) -> list:
    return [NetworkRecord(i, make_network(config, i)) for i in range(start_id, start_id + count)]


def _label_one(record: NetworkRecord, cfg: PowerConfig, oracle: bool, settings: GpSettings):
    t0 = time.perf_counter()
    if oracle:
        subset, _ = exhaustive_schedule(record.network, cfg)
        trace = []
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GpConvergenceWarning)
            result = run_gp(record.network, cfg, settings)
        subset = result.subset
        trace = [{"network_id": record.network_id, **row} for row in result.trace]
    elapsed = time.perf_counter() - t0
    return NetworkRecord(record.network_id, record.network, subset, elapsed), trace


def label_records(records, cfg: PowerConfig, oracle: bool = False,
                  settings: GpSettings | None = None, workers: int = 1) -> tuple:
    """Attach GP (or exhaustive) labels. Returns the labelled records and the solver trace."""
    settings = settings or GpSettings()
    done = parallel_map(partial(_label_one, cfg=cfg, oracle=oracle, settings=settings),
                        records, workers)
    return [r for r, _ in done], [row for _, rows in done for row in rows]


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalReport:
    rows: list = field(default_factory=list)     # dicts keyed by EVAL_COLUMNS
    xi: float | None = None

    def methods(self) -> list:
        seen = []
        for r in self.rows:
            if r["method"] not in seen:
                seen.append(r["method"])
        return seen

    def rates(self, method: str) -> np.ndarray:
        return np.array([r["sum_rate"] for r in self.rows if r["method"] == method])

    def times(self, method: str) -> np.ndarray:
        return np.array([r["wall_time_s"] for r in self.rows if r["method"] == method])

    def means(self) -> dict:
        return {m: float(self.rates(m).mean()) for m in self.methods()}

    def summary(self) -> dict:
        means = self.means()
        out = {"xi": self.xi, "networks": len(self.rates(self.methods()[0])) if self.rows else 0,
               "mean_sum_rate": means,
               "median_wall_time_s": {m: float(np.median(self.times(m))) for m in self.methods()}}
        if "gp" in means and means["gp"] > 0:
            out["ratio_to_gp"] = {m: v / means["gp"] for m, v in means.items()}
        return out


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _eval_one(record: NetworkRecord, model: DppModel, cfg: PowerConfig, xi: float, seed: int,
              methods: tuple, settings: GpSettings) -> list:
    net, nid = record.network, record.network_id
    rows = []

    def add(method, subset, elapsed):
        rows.append({"network_id": nid, "method": method, "m": net.m,
                     "sum_rate": sum_rate(net, subset, cfg), "wall_time_s": elapsed})

    if "gp" in methods:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GpConvergenceWarning)
            result, dt = _timed(lambda: run_gp(net, cfg, settings))
        add("gp", result.subset, dt)
    if "exhaustive" in methods:
        (subset, _), dt = _timed(lambda: exhaustive_schedule(net, cfg))
        add("exhaustive", subset, dt)
    if "dpp-map" in methods:
        subset, dt = _timed(lambda: infer(model, net, cfg, "map"))
        add("dpp-map", subset, dt)
    if "dpp-sample" in methods:
        rng = item_rng(seed, STREAM_SAMPLE, nid)
        subset, dt = _timed(lambda: infer(model, net, cfg, "sample", rng))
        add("dpp-sample", subset, dt)
    if "thinning" in methods:
        rng = item_rng(seed, STREAM_THINNING, nid)
        subset, dt = _timed(lambda: thinning_schedule(net.m, xi, rng))
        add("thinning", subset, dt)
    return rows


def evaluate(model: DppModel, records, cfg: PowerConfig, xi: float, seed: int = 0,
             methods=("gp", "dpp-map", "dpp-sample", "thinning"),
             settings: GpSettings | None = None, workers: int = 1) -> EvalReport:
    """Run every method on every test network; rows come out ordered by network id."""
    settings = settings or GpSettings()
    fn = partial(_eval_one, model=model, cfg=cfg, xi=xi, seed=seed, methods=tuple(methods),
                 settings=settings)
    records = sorted(records, key=lambda r: r.network_id)
    rows = [row for chunk in parallel_map(fn, records, workers) for row in chunk]
    return EvalReport(rows, xi)


def empirical_cdf(values, grid) -> np.ndarray:
    values = np.sort(np.asarray(values, dtype=float))
    return np.searchsorted(values, grid, side="right") / max(values.size, 1)


def cdf_table(report: EvalReport, points: int = 200) -> tuple:
    """Common rate grid and the empirical CDF of each method on it."""
    methods = report.methods()
    allr = np.concatenate([report.rates(m) for m in methods])
    grid = np.linspace(allr.min(), allr.max(), points)
    return grid, {m: empirical_cdf(report.rates(m), grid) for m in methods}


def write_eval_csv(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=EVAL_COLUMNS)
        w.writeheader()
        for row in report.rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_eval_csv(path) -> EvalReport:
    with open(path, newline="") as fh:
        rows = [{"network_id": int(r["network_id"]), "method": r["method"], "m": int(r["m"]),
                 "sum_rate": float(r["sum_rate"]), "wall_time_s": float(r["wall_time_s"])}
                for r in csv.DictReader(fh)]
    return EvalReport(rows)


def write_cdf_csv(path, grid, cdfs: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sum_rate", *cdfs])
        for k, x in enumerate(grid):
            w.writerow([repr(float(x)), *(repr(float(c[k])) for c in cdfs.values())])


# -- run time ------------------------------------------------------------------

def _bench_one(item, model: DppModel, config: ExperimentConfig, settings: GpSettings) -> dict:
    m, k = item
    net = make_network(config, k, m=m, stream=STREAM_BENCH, seed=config.seed + 7919 * m)
    cfg = config.power
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GpConvergenceWarning)
        _, t_gp = _timed(lambda: run_gp(net, cfg, settings))
    _, t_map = _timed(lambda: greedy_map(inference_kernel(model, net, cfg)))
    rng = item_rng(config.seed, STREAM_BENCH, k)
    _, t_sample = _timed(lambda: sample_dpp(inference_kernel(model, net, cfg), rng))
    return {"m": m, "gp": t_gp, "dpp-map": t_map, "dpp-sample": t_sample}


def benchmark(model: DppModel, config: ExperimentConfig, sizes, repetitions: int = 30,
              settings: GpSettings | None = None, anchor_m: int = 5) -> list:
    """Median wall times per network size, normalised by the GP median at ``anchor_m``.

    DPP timings include kernel construction. Rows carry ``m``, ``method``,
    ``median_time_s``, ``mean_time_s``, ``normalized_time`` and
    ``speedup_vs_gp`` (GP median over the method's median at that size).
    """
    settings = settings or GpSettings()
    sizes = [int(s) for s in sizes]
    measured = sorted(set(sizes) | {anchor_m})
    times = {}
    for m in measured:
        runs = [_bench_one((m, k), model, config, settings) for k in range(repetitions)]
        times[m] = {meth: [r[meth] for r in runs] for meth in ("gp", "dpp-map", "dpp-sample")}
    anchor = statistics.median(times[anchor_m]["gp"])
    rows = []
    for m in sizes:
        gp_med = statistics.median(times[m]["gp"])
        for meth, ts in times[m].items():
            med = statistics.median(ts)
            rows.append({"m": m, "method": meth, "median_time_s": med,
                         "mean_time_s": statistics.fmean(ts), "normalized_time": med / anchor,
                         "speedup_vs_gp": gp_med / med})
    return rows


# -- saturation ----------------------------------------------------------------

def _saturation_one(item, model: DppModel, config: ExperimentConfig) -> float:
    m, k = item
    net = make_network(config, k, m=m, stream=STREAM_SATURATION, seed=config.seed + 104729 * m)
    return sum_rate(net, infer(model, net, config.power, "map"), config.power)


def saturation(model: DppModel, config: ExperimentConfig, sizes, count: int = 100,
               workers: int = 1) -> list:
    """Mean DPP-MAP sum-rate per network size with its standard error and increment."""
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    rows = []
    prev = None
    for m in sizes:
        rates = np.array(parallel_map(partial(_saturation_one, model=model, config=config),
                                      [(m, k) for k in range(count)], workers))
        mean = float(rates.mean())
        stderr = float(rates.std(ddof=1) / math.sqrt(count)) if count > 1 else float("nan")
        rows.append({"m": m, "mean_sum_rate": mean, "stderr": stderr,
                     "increment": None if prev is None else mean - prev})
        prev = mean
    return rows


def write_rows_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                        for k, v in row.items()})
