"""Command-line interface: ``censindex fit | simulate | diagnose``.

Exit status: 0 success, 2 input error, 3 numerical or fit error, 4 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .exceptions import CensIndexError
from .fitter import FitConfig, fit
from .io import (
    build_run_config,
    fit_records,
    load_document,
    make_design,
    read_dataset,
    simulation_records,
    write_report,
)
from .simulation import MODES, monte_carlo_report

logger = logging.getLogger("censindex")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_INTERNAL = 0, 2, 3, 4


def _flag(name):
    return "--" + name.replace("_", "-")


def _value(text):
    # scalars, lists and the "auto" keyword all go through YAML
    return yaml.safe_load(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="censindex",
        description="Single-index conditional density estimation for right-censored data.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, skip=()):
        if data:
            p.add_argument("dataset", help="delimited file with header z, delta, x1..xd")
        p.add_argument("-c", "--config", help="YAML or JSON run configuration")
        p.add_argument("-o", "--output-dir", help="directory for the report files")
        group = p.add_argument_group("fit settings (override the config file)")
        for f in fields(FitConfig):
            if f.name in skip:
                continue
            group.add_argument(_flag(f.name), dest=f"fit__{f.name}", type=_value, metavar="VALUE",
                               help=f"default {f.default!r}")

    common(sub.add_parser("fit", help="fit the model to a dataset"))
    common(sub.add_parser("diagnose", help="per-truncation table of the selection criterion"))
    sim = sub.add_parser("simulate", help="Monte Carlo study on the simulated design")
    common(sim, data=False, skip=("seed",))
    group = sim.add_argument_group("design settings (override the config file)")
    group.add_argument("--n", dest="sim__n", type=int)
    group.add_argument("--p", dest="sim__p", type=float, help="target censoring proportion")
    group.add_argument("--reps", dest="sim__reps", type=int)
    group.add_argument("--seed", dest="sim__seed", type=int, help="replication seed")
    group.add_argument("--mode", dest="sim__mode", choices=MODES)
    group.add_argument("--n-jobs", dest="sim__n_jobs", type=int)
    group.add_argument("--mixture-scale", dest="sim__mixture_scale", choices=("variance", "sd"))
    return parser


def _overrides(args):
    out = {"fit": {}, "simulate": {}, "output_dir": args.output_dir}
    for key, value in vars(args).items():
        if value is None:
            continue
        if key.startswith("fit__"):
            out["fit"][key[5:]] = value
        elif key.startswith("sim__"):
            out["simulate"][key[5:]] = value
    return out


def _outputs(run, stem):
    out = Path(run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / f"{stem}_report.jsonl", out / f"{stem}_summary.txt"


def _fmt(v):
    return np.array2string(np.asarray(v, dtype=float), precision=5, suppress_small=True)


def fit_summary(res, elapsed):
    lines = [
        f"n = {res.n}, retained N = {res.n_retained}, tau_hat = {res.tau_hat:.6g}, "
        f"h_hat = {res.h_hat:.6g}",
        f"theta_hat      = {_fmt(res.theta_hat)}",
        f"theta_prelim   = {_fmt(res.theta_prelim)}",
        f"std. errors    = {_fmt(res.standard_errors())}",
        f"E2(tau_hat)    = {res.E2:.6g}",
        f"Weight^inf = {res.weight_inf:.6g}, Weight^tau_hat = {res.weight_tau:.6g} "
        f"(raw {res.weight_tau_raw:.6g})",
        f"excluded: {res.exclusions}",
    ]
    if res.no_censoring:
        lines.append("no censoring: KM path degenerate to empirical")
    if res.singular:
        lines.append("warning: V_hat is singular; pseudo-inverse used")
    if res.failures:
        lines.append(f"failed truncation candidates: {len(res.failures)}")
    lines.append(f"elapsed {elapsed:.2f} s")
    return "\n".join(lines)


def diagnose_table(records):
    head = f"{'tau':>10} {'N':>5} {'h':>6} {'E2':>11} {'W_tau':>9} {'W_tau/W':>9}  theta"
    rows = [head]
    for r in records:
        if r["record"] != "tau":
            continue
        mark = "*" if r["selected"] else " "
        rows.append(
            f"{r['tau']:>10.4g} {r['N']:>5d} {r['h']:>6.3g} {r['E2']:>11.5g} "
            f"{r['largest_weight']:>9.4g} {r['largest_weight_renorm']:>9.4g} {mark}"
            f"{_fmt(r['theta'][1:])}"
        )
    return "\n".join(rows)


def cmd_fit(args, diagnose=False):
    run = build_run_config(load_document(args.config), _overrides(args))
    data = read_dataset(args.dataset)
    t0 = time.perf_counter()
    res = fit(data.sample, run.fit)
    elapsed = time.perf_counter() - t0
    records = fit_records(res, data, run.fit)
    report, summary = _outputs(run, "diagnose" if diagnose else "fit")
    write_report(report, records)
    text = fit_summary(res, elapsed)
    if diagnose:
        text = (diagnose_table(records) + "\n\n"
                + f"Weight^inf = {res.weight_inf:.6g}\n" + text)
    summary.write_text(text + "\n")
    print(text)
    print(f"report: {report}")
    return EXIT_OK


def simulation_summary(rep, elapsed):
    d = rep.design
    lines = [f"n = {d['n']}, p = {d['target_p']}, reps = {d['reps']}, seed = {d['seed']}, "
             f"lambda = {rep.lam:.6g}, observed censoring = {rep.censor_fraction:.3f}"]
    for mode, s in rep.summaries.items():
        lines.append(f"[{mode}]  MSE = {s.mse:.6g}  (reps used {s.n_ok})")
        lines.append(f"  bias       = {_fmt(s.bias)}")
        for i, row in enumerate(s.covariance):
            lines.append(("  covariance = " if i == 0 else " " * 15) + _fmt(row))
    if "adaptive_tau" in rep.summaries:
        lines.append(f"E[N] = {rep.mean_N:.4g}, Weight^inf = {rep.weight_inf:.4g}, "
                     f"Weight^tau_hat = {rep.weight_tau:.4g} (raw {rep.weight_tau_raw:.4g})")
    if rep.failures:
        lines.append(f"failed replications: {len(rep.failures)}")
    lines.append(f"elapsed {elapsed:.1f} s")
    return "\n".join(lines)


def cmd_simulate(args):
    run = build_run_config(load_document(args.config), _overrides(args))
    design = make_design(run)
    t0 = time.perf_counter()
    rep = monte_carlo_report(design, run.mode, run.sim_fit, n_jobs=run.n_jobs)
    text = simulation_summary(rep, time.perf_counter() - t0)
    report, summary = _outputs(run, "simulate")
    write_report(report, simulation_records(rep))
    summary.write_text(text + "\n")
    print(text)
    print(f"report: {report}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_fit(args, diagnose=args.command == "diagnose")
    except CensIndexError as exc:
        label = {EXIT_INPUT: "input error", EXIT_NUMERICAL: "fit error"}.get(exc.exit_code, "error")
        print(f"{label}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        logger.debug("unexpected failure", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL

if __name__ == "__main__":
    sys.exit(main())
