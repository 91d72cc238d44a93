"""Command-line pipeline: ``dppl gen | label | train | infer | eval | bench | saturate``.

Exit codes: 0 success, 2 invalid input, 3 non-convergence (outputs are still
written), 4 instance too large for the requested solver.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import DpplError, InstanceTooLargeError, InvalidParameterError, NonConvergenceError
from .learn import TrainSettings, default_init, infer, train
from .scheduler import estimate_xi
from .storage import (ExperimentConfig, load_model, read_records, save_model, training_pairs,
                      write_records)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGENCE = 3
EXIT_TOO_LARGE = 4

REFERENCE_SIGMA = 0.266

log = logging.getLogger("dppl")


def _sizes(text: str) -> list:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dppl", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    parser.add_argument("--config", type=Path, default=None, help="YAML or JSON experiment config")
    parser.add_argument("--trace", type=Path, default=None,
                        help="CSV file receiving per-iteration GP solver telemetry")
    parser.add_argument("--workers", type=int, default=1, help="processes for per-network work")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate random networks")
    p.add_argument("--mean-links", type=float, default=None)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--start-id", type=int, default=0,
                   help="first network id; use disjoint ranges for train and test sets")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("label", help="attach optimal subsets to networks")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--oracle", action="store_true", help="exhaustive search instead of GP")

    p = sub.add_parser("train", help="fit the conditional DPP")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--model-out", type=Path, required=True)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--max-iters", type=int, default=TrainSettings.max_iters)

    p = sub.add_parser("infer", help="estimate active subsets with a trained model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", choices=("map", "sample"), default="map")

    p = sub.add_parser("eval", help="compare schedulers on test networks")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--train-labels", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--exhaustive", action="store_true", help="also run the exhaustive oracle")

    p = sub.add_parser("bench", help="run-time comparison")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--sizes", type=_sizes, default=[5, 10, 15, 20])
    p.add_argument("--repetitions", type=int, default=30)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("saturate", help="mean DPP-MAP sum-rate against network size")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--sizes", type=_sizes, default=[10, 20, 30, 40])
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return config.replace(seed=args.seed, mean_links=getattr(args, "mean_links", None))


def _write_trace(path: Path, rows: list) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["network_id", "iteration", "max_sinr_change",
                                           "relaxed_rate"])
        w.writeheader()
        w.writerows(rows)


def cmd_gen(args, config: ExperimentConfig) -> int:
    if args.count < 1:
        raise InvalidParameterError("--count must be >= 1")
    write_records(args.out, ex.generate_records(config, args.count, args.start_id))
    print(f"wrote {args.count} networks to {args.out}")
    return EXIT_OK


def cmd_label(args, config: ExperimentConfig) -> int:
    records = read_records(args.inp)
    labelled, trace = ex.label_records(records, config.power, oracle=args.oracle,
                                       workers=args.workers)
    write_records(args.out, labelled)
    if args.trace:
        _write_trace(args.trace, trace)
    total = sum(r.solver_time_s for r in labelled)
    print(f"labelled {len(labelled)} networks in {total:.2f} s "
          f"({'exhaustive' if args.oracle else 'gp'})")
    return EXIT_OK


def cmd_train(args, config: ExperimentConfig) -> int:
    pairs = training_pairs(read_records(args.inp))
    result = train(pairs, config.power, default_init(config.disc_radius),
                   TrainSettings(max_iters=args.max_iters, standardize=args.standardize))
    save_model(args.model_out, result.model)
    print(f"log-likelihood {result.log_likelihood:.6f} (initial {result.initial_log_likelihood:.6f})")
    print(f"gradient norm {result.grad_norm:.3e} after {result.iterations} iterations "
          f"(stop: {result.stop_reason})")
    bound = "active" if result.at_sigma_bound else "inactive"
    print(f"sigma {result.model.sigma:.6g} (reference {REFERENCE_SIGMA}); "
          f"PSD bound {result.sigma_bound:.6g} {bound}")
    print(f"theta {np.array2string(result.model.theta, precision=6)}")
    if result.clamped_eigenvalues:
        print(f"clamped eigenvalues at the final model: {result.clamped_eigenvalues}")
    if not result.converged:
        hint = "; try --standardize" if result.stop_reason == "stalled" and not args.standardize else ""
        print(f"training did not converge; model written anyway{hint}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_infer(args, config: ExperimentConfig) -> int:
    model = load_model(args.model)
    records = read_records(args.inp)
    out = []
    for rec in records:
        rng = ex.item_rng(config.seed, ex.STREAM_SAMPLE, rec.network_id)
        rec.optimal_subset = infer(model, rec.network, config.power, args.mode, rng)
        rec.solver_time_s = None
        out.append(rec)
    write_records(args.out, out)
    print(f"wrote {len(out)} {args.mode} subsets to {args.out}")
    return EXIT_OK


def cmd_eval(args, config: ExperimentConfig) -> int:
    model = load_model(args.model)
    test = read_records(args.test)
    train_records = read_records(args.train_labels)
    xi = estimate_xi(training_pairs(train_records))
    methods = ("gp", "dpp-map", "dpp-sample", "thinning")
    if args.exhaustive:
        methods = ("gp", "exhaustive", "dpp-map", "dpp-sample", "thinning")
    report = ex.evaluate(model, test, config.power, xi, config.seed, methods,
                         workers=args.workers)
    ex.write_eval_csv(args.out, report)
    stem = args.out.with_suffix("")
    grid, cdfs = ex.cdf_table(report)
    ex.write_cdf_csv(f"{stem}_cdf.csv", grid, cdfs)
    summary = report.summary()
    Path(f"{stem}_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"xi {xi:.4f}")
    for method, mean in summary["mean_sum_rate"].items():
        ratio = summary.get("ratio_to_gp", {}).get(method)
        extra = f" ({ratio:.3f} of gp)" if ratio is not None else ""
        print(f"{method:>11}: mean sum-rate {mean:.4f}{extra}")
    return EXIT_OK


def cmd_bench(args, config: ExperimentConfig) -> int:
    model = load_model(args.model)
    rows = ex.benchmark(model, config, args.sizes, args.repetitions)
    ex.write_rows_csv(args.out, rows)
    for row in rows:
        print(f"M={row['m']:>3} {row['method']:>10}: median {row['median_time_s']:.3e} s, "
              f"normalized {row['normalized_time']:.3e}, gp/method {row['speedup_vs_gp']:.1f}")
    return EXIT_OK


def cmd_saturate(args, config: ExperimentConfig) -> int:
    model = load_model(args.model)
    rows = ex.saturation(model, config, args.sizes, args.count, workers=args.workers)
    ex.write_rows_csv(args.out, rows)
    for row in rows:
        inc = "" if row["increment"] is None else f", increment {row['increment']:+.4f}"
        print(f"M={row['m']:>3}: mean {row['mean_sum_rate']:.4f} +- {row['stderr']:.4f}{inc}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "label": cmd_label, "train": cmd_train, "infer": cmd_infer,
            "eval": cmd_eval, "bench": cmd_bench, "saturate": cmd_saturate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, _config(args))
    except InstanceTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOO_LARGE
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (DpplError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    log.debug("%s finished in %.2f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
