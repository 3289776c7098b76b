"""Command-line entry point.

Every subcommand writes ``manifest.json`` into ``--out-dir`` along with its
tables. Exit codes: 0 success, 2 configuration or input error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time

import numpy as np

from .data_io import (RunManifest, config_from_dict, config_to_dict, generate_synthetic,
                      load_config, load_csv, save_results, write_ci_table)
from .dataset import Dataset
from .engine import BLFRBRun, METHODS, adaptive_schedule, draw_bags
from .exceptions import BLFRBError, ConfigurationError, DataFormatError, ResultsFormatError
from .inference import ci_and_test, consistency_diagnostic, relative_error
from .losses import MM_EFFICIENCY
from .robustness import (MODES, TABLE_GAMMA, TABLE_N, TABLE_P, breakdown_table,
                         contaminate)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# command-line flag -> configuration key
_FLAG_KEYS = {"gamma": "gamma", "bags": "n_bags", "replicas": "r", "alpha": "alpha",
              "method": "method", "seed": "seed", "threads": "threads",
              "correction": "correction"}
_FIT_FLAG_KEYS = {"candidates": "n_candidates"}


def efficiency_of(method):
    return 1.0 if method == "BLB-LS" else MM_EFFICIENCY


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _add_common(sp, method=True):
    sp.add_argument("--gamma", type=float, help="bag size exponent, b = floor(n^gamma)")
    sp.add_argument("--bags", type=int, help="number of disjoint bags s (default floor(n/b))")
    sp.add_argument("--replicas", type=int, help="bootstrap replicas per bag r")
    sp.add_argument("--alpha", type=float, help="CI level is 1 - alpha")
    if method:
        sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--correction", choices=("joint", "theta", "identity"))
    sp.add_argument("--candidates", type=int, help="elemental subsets in the S search")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--config", help="JSON file of configuration values; flags override it")
    sp.add_argument("--out-dir", default=".", help="directory for outputs")


def _add_synthetic(sp, n=50000, p=50):
    sp.add_argument("--n", type=int, default=n)
    sp.add_argument("--p", type=int, default=p)
    sp.add_argument("--sigma0", type=float, default=math.sqrt(0.1), help="noise SD")
    sp.add_argument("--data-seed", type=int, default=0)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="blfrb", description="Robust bootstrap uncertainty for large linear regressions.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("analyze", help="bootstrap SDs, CIs and zero tests for a CSV file")
    sp.add_argument("data", help="delimited numeric file")
    sp.add_argument("--response-col", type=int, default=0)
    sp.add_argument("--header", action="store_true", help="first line is a header")
    sp.add_argument("--delimiter", default=",")
    sp.add_argument("--no-intercept", action="store_true")
    _add_common(sp)

    sp = sub.add_parser("simulate", help="relative error against r and time on synthetic data")
    _add_synthetic(sp)
    sp.add_argument("--methods", type=_csv_list(str), default=["BLFRB-MM", "BLB-LS"])
    sp.add_argument("--schedule", type=_csv_list(int), default=[2, 5, 10, 20, 50, 100, 200, 300])
    _add_common(sp, method=False)

    sp = sub.add_parser("contaminate-study", help="clean versus contaminated relative errors")
    _add_synthetic(sp)
    sp.add_argument("--methods", type=_csv_list(str), default=["BLFRB-MM", "BLB-LS"])
    sp.add_argument("--outlier-scale", type=_csv_list(float), default=[1e3],
                    help="multipliers applied to the contaminated records")
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--count", type=int, help="number of contaminated records")
    grp.add_argument("--fraction", type=float, help="fraction of the target rows")
    sp.add_argument("--target-bag", type=int, default=0,
                    help="bag whose rows are contaminated; -1 for the whole sample")
    sp.add_argument("--mode", choices=MODES, default="response")
    _add_common(sp, method=False)

    sp = sub.add_parser("breakdown-table", help="upper breakdown points of the quantile estimates")
    sp.add_argument("--p-list", type=_csv_list(int), default=list(TABLE_P))
    sp.add_argument("--n-list", type=_csv_list(int), default=list(TABLE_N))
    sp.add_argument("--gamma-list", type=_csv_list(float), default=list(TABLE_GAMMA))
    sp.add_argument("--out-dir", default=".")

    sp = sub.add_parser("consistency", help="KS check of one bag's replicas against the normal limit")
    _add_synthetic(sp)
    sp.add_argument("--bag", type=int, default=0)
    sp.add_argument("--grid", type=int, default=201)
    _add_common(sp, method=False)
    return ap


def resolve_config(args, **fixed):
    """Config file values, overridden by explicit flags, then by ``fixed``."""
    base = load_config(args.config) if getattr(args, "config", None) else {}
    for flag, key in _FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            base[key] = v
    fit = dict(base.get("fit", {}))
    for flag, key in _FIT_FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            fit[key] = v
    if fit:
        base["fit"] = fit
    base.update(fixed)
    return config_from_dict(base)


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _write_manifest(args, manifest):
    with open(_out(args, "manifest.json"), "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=1)


def _progress_writer(args, tag):
    fh = open(_out(args, f"progress-{tag}.jsonl"), "w")

    def emit(record):
        fh.write(json.dumps(record) + "\n")
        fh.flush()
    return fh, emit


def _seeds(config):
    return {"master": config.seed,
            "scheme": "SeedSequence(master, spawn_key=key) -> Philox; "
                      "(0,) bags, (1,k) bag fit, (2,k,j) weights, (3,k,j) full re-solve"}


def cmd_analyze(args):
    config = resolve_config(args)
    raw = load_csv(args.data, response_col=args.response_col, header=args.header,
                   delimiter=args.delimiter)
    data = raw if args.no_intercept else Dataset.from_arrays(raw.Z, raw.y, intercept=True)
    fh, emit = _progress_writer(args, "analyze")
    try:
        t0 = time.perf_counter()
        result = BLFRBRun(data, config, progress=emit).extend(config.r)
        elapsed = time.perf_counter() - t0
    finally:
        fh.close()
    names = (["intercept"] if data.intercept else []) + [f"z{j + 1}" for j in range(raw.p)]
    write_ci_table(result.aggregate, _out(args, "ci_table.csv"), names)
    manifest = RunManifest(
        command="analyze", config=config_to_dict(config),
        dataset={**data.fingerprint(), "source": os.path.abspath(args.data),
                 "response_col": args.response_col},
        seeds=_seeds(config), bags=[b.diagnostics(config.skip_flag_fraction) for b in result.bags],
        timings={"estimation_s": elapsed},
        extra={"failed_bags": result.failed_bags, "flagged_bags": result.flagged_bags})
    summaries = {"aggregate": result.aggregate}
    summaries.update({f"bag{b.index}": s for b, s in zip(result.bags, result.bag_summaries)
                      if s is not None})
    save_results(summaries, manifest, _out(args, "results.json"))
    _write_manifest(args, manifest)
    rejected = int(np.sum(ci_and_test(result.aggregate)))
    print(f"n={data.n} p={data.p} b={config.bag_size(data.n)} s={len(result.bags)} "
          f"r={config.r}: {rejected} of {data.p} coefficients differ from 0 "
          f"at level {config.alpha:g}")
    return EXIT_OK


def _trace_rows(method, trace, sigma0, n):
    eff = efficiency_of(method)
    return [{"method": method, "r": row.r,
             "epsilon": relative_error(row.aggregate.sd, sigma0, n, eff),
             "seconds": row.elapsed} for row in trace]


def _write_trace(args, name, rows):
    with open(_out(args, name), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _check_methods(methods):
    bad = [m for m in methods if m not in METHODS or m == "classical-bootstrap"]
    if bad:
        raise ConfigurationError(f"unsupported method(s) {bad}")


def _run_traces(args, data, methods, tag):
    rows, timings, bags = [], {}, {}
    for method in methods:
        config = resolve_config(args, method=method)
        fh, emit = _progress_writer(args, f"{tag}-{method}")
        try:
            handle = BLFRBRun(data, config, progress=emit)
            trace = adaptive_schedule(handle, args.schedule)
        finally:
            fh.close()
        rows += _trace_rows(method, trace, args.sigma0, data.n)
        timings[method] = trace[-1].elapsed
        bags[method] = [b.diagnostics(config.skip_flag_fraction) for b in handle.bags]
    return rows, timings, bags, config


def cmd_simulate(args):
    _check_methods(args.methods)
    data = generate_synthetic(args.n, args.p, sigma0=args.sigma0, seed=args.data_seed)
    rows, timings, bags, config = _run_traces(args, data, args.methods, "simulate")
    _write_trace(args, "trace.csv", rows)
    manifest = RunManifest(
        command="simulate", config=config_to_dict(config),
        dataset={**data.fingerprint(), "generator": {"n": args.n, "p": args.p,
                                                     "sigma0": args.sigma0,
                                                     "seed": args.data_seed}},
        seeds=_seeds(config), bags=[{"method": m, "bags": v} for m, v in bags.items()],
        timings=timings, extra={"methods": args.methods, "schedule": args.schedule})
    _write_manifest(args, manifest)
    for row in rows:
        print(f"{row['method']:>12} r={row['r']:<5d} eps={row['epsilon']:.4f} "
              f"t={row['seconds']:.2f}s")
    return EXIT_OK


def cmd_contaminate_study(args):
    _check_methods(args.methods)
    clean = generate_synthetic(args.n, args.p, sigma0=args.sigma0, seed=args.data_seed)
    if args.count is None and args.fraction is None:
        args.count = 1
    report = []
    contaminations = {}
    timings = {}
    for method in args.methods:
        config = resolve_config(args, method=method)
        target = None if args.target_bag < 0 else draw_bags(clean, config)[args.target_bag].indices
        t0 = time.perf_counter()
        base = BLFRBRun(clean, config).extend(config.r)
        eps_clean = relative_error(base.aggregate.sd, args.sigma0, clean.n, efficiency_of(method))
        for scale in args.outlier_scale:
            data, cm = contaminate(clean, fraction=args.fraction, count=args.count, alpha=scale,
                                   target=target, seed=args.data_seed + 1, mode=args.mode)
            contaminations[f"{method}@{scale!r}"] = cm.to_dict()
            res = BLFRBRun(data, config).extend(config.r)
            eps = relative_error(res.aggregate.sd, args.sigma0, clean.n, efficiency_of(method))
            report.append({"method": method, "outlier_scale": scale,
                           "contaminated_rows": int(cm.rows.size),
                           "epsilon_clean": eps_clean, "epsilon": eps,
                           "relative_change": abs(eps - eps_clean) / eps_clean,
                           "failed_bags": len(res.failed_bags),
                           "flagged_bags": len(res.flagged_bags)})
        timings[method] = time.perf_counter() - t0
    _write_trace(args, "robustness.csv", report)
    manifest = RunManifest(
        command="contaminate-study", config=config_to_dict(config),
        dataset={**clean.fingerprint(), "generator": {"n": args.n, "p": args.p,
                                                      "sigma0": args.sigma0,
                                                      "seed": args.data_seed}},
        seeds=_seeds(config), timings=timings,
        extra={"contamination": contaminations, "mode": args.mode,
               "target_bag": args.target_bag})
    _write_manifest(args, manifest)
    for row in report:
        print(f"{row['method']:>12} scale={row['outlier_scale']:g} "
              f"eps clean={row['epsilon_clean']:.4f} contaminated={row['epsilon']:.4f}")
    return EXIT_OK


def cmd_breakdown_table(args):
    report = breakdown_table(args.p_list, args.n_list, args.gamma_list)
    text = report.to_text()
    with open(_out(args, "breakdown.txt"), "w") as fh:
        fh.write(text)
    with open(_out(args, "breakdown.csv"), "w") as fh:
        fh.write(report.to_csv())
    _write_manifest(args, RunManifest(
        command="breakdown-table", config={"p": args.p_list, "n": args.n_list,
                                           "gamma": args.gamma_list},
        dataset={}, seeds={}))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_consistency(args):
    config = resolve_config(args, method="BLFRB-MM")
    data = generate_synthetic(args.n, args.p, sigma0=args.sigma0, seed=args.data_seed)
    handle = BLFRBRun(data, config)
    if not 0 <= args.bag < len(handle.bags):
        raise ConfigurationError(f"bag {args.bag} out of range 0..{len(handle.bags) - 1}")
    # only the chosen bag is needed
    handle.bags = [handle.bags[args.bag]]
    t0 = time.perf_counter()
    result = handle.extend(config.r)
    elapsed = time.perf_counter() - t0
    bag = result.bags[0]
    rep = consistency_diagnostic(bag.cloud(), bag.fit.theta_mm, data.n, args.sigma0,
                                 MM_EFFICIENCY, grid_size=args.grid)
    with open(_out(args, "ks.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coordinate", "ks_statistic", "p_value"])
        for j, (d, pv) in enumerate(zip(rep.ks_statistic, rep.p_value)):
            w.writerow([j + 1, repr(float(d)), repr(float(pv))])
    scaled = math.sqrt(data.n) * (bag.cloud() - bag.fit.theta_mm)
    ecdf = lambda col: np.searchsorted(np.sort(scaled[:, col]), rep.grid, side="right") / rep.r
    with open(_out(args, "cdf.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "target", "average", "best", "worst"])
        for row in zip(rep.grid, rep.target_cdf, rep.average_ecdf, ecdf(rep.best), ecdf(rep.worst)):
            w.writerow([repr(float(v)) for v in row])
    passed = int(np.sum(rep.passes(0.01)))
    _write_manifest(args, RunManifest(
        command="consistency", config=config_to_dict(config),
        dataset={**data.fingerprint(), "generator": {"n": args.n, "p": args.p,
                                                     "sigma0": args.sigma0,
                                                     "seed": args.data_seed}},
        seeds=_seeds(config), bags=[bag.diagnostics()], timings={"estimation_s": elapsed},
        extra={"bag": args.bag, "passed_at_1pct": passed, "average_ks": rep.average_ks,
               "best": rep.best + 1, "worst": rep.worst + 1}))
    print(f"{passed} of {data.p} coordinates pass KS at 1%; averaged-ECDF distance "
          f"{rep.average_ks:.4f} (critical {rep.critical_value(0.01):.4f})")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate,
            "contaminate-study": cmd_contaminate_study,
            "breakdown-table": cmd_breakdown_table, "consistency": cmd_consistency}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DataFormatError, ResultsFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BLFRBError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
