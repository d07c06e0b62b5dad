"""Command-line entry point: simulate, fit, sensitivity, misspec, report."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines
from .data import (Dataset, EstimateRow, IngestionError, ProteinCategory, drop_missing_proteins,
                   ingest_csv, read_estimates, write_csv, write_estimates, ESTIMATES_HEADER)
from .evaluate import (METHODS, SCORE_HEADER, aggregate, read_scores, run_misspec_study,
                       run_sensitivity, run_simulation_study, write_scores)
from .gibbs import ChainConfig, ChainError, Model, run_chain
from .probit import ProbitError
from .simgen import (LOGIT_LINEAR, PROBIT_LINEAR, PROBIT_QUADRATIC, CalibrationError,
                     MissingnessMechanism, SimulationConfig, generate_dataset, misspecification_mechanisms,
                     observe_all, reference_intensities, sample_proteins)

log = logging.getLogger("m5quant")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "M5QUANT_THREADS"
METHOD_FLAGS = {"m5": "M5", "m3": "M3", "median": "MED", "anova": "ANOVA", "qrollup": "Q", "knnq": "KNNQ"}
MECHANISM_FLAGS = {"probit": PROBIT_LINEAR, "quadratic": PROBIT_QUADRATIC, "logit": LOGIT_LINEAR}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, env)
    return os.cpu_count() or 1


def _percent_list(text: str) -> list:
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated percentages, got {text!r}") from None
    if not vals or any(not 0 <= v < 100 for v in vals):
        raise argparse.ArgumentTypeError("levels must be percentages in [0, 100)")
    return vals


def _add_chain_flags(p):
    p.add_argument("--iters", type=int, default=1000, help="Gibbs sweeps (default 1000)")
    p.add_argument("--burnin", type=int, default=500, help="discarded sweeps (default 500)")
    p.add_argument("--thin", type=int, default=1)


def _add_common(p):
    p.add_argument("--config", type=Path, help="JSON file of flag values; explicit flags win")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker processes (default ${THREADS_ENV} or all cores)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="m5quant", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("simulate", help="simulation study comparing all methods")
    _add_common(p)
    _add_chain_flags(p)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--proteins", type=int, default=500)
    p.add_argument("--method", choices=[*METHOD_FLAGS, "all"], default="all")
    p.add_argument("--a", type=float, default=-9.0, help="probit intercept of P(observed)")
    p.add_argument("--b", type=float, default=0.5, help="probit slope of P(observed)")
    p.add_argument("--write-data", action="store_true", help="also write each replicate's dataset")
    p.add_argument("--out", type=Path, default=None, help="output directory")

    p = sub.add_parser("fit", help="estimate protein fold changes from a peptide CSV")
    _add_common(p)
    _add_chain_flags(p)
    p.add_argument("input", type=Path, nargs="?", help="canonical peptide CSV")
    p.add_argument("--method", choices=[*METHOD_FLAGS, "all"], default="m5")
    p.add_argument("--sample", type=int, default=None, help="seeded subsample of N proteins")
    p.add_argument("--log2", action="store_true", help="log2-transform raw intensities on ingestion")
    p.add_argument("--trace", type=Path, default=None, help="write the M5/M3 parameter trace here")
    p.add_argument("--trace-proteins", default="", help="comma-separated protein ids to trace")
    p.add_argument("--k", type=int, default=baselines.KNN_K, help="KNN neighbours")
    p.add_argument("--out", type=Path, default=None, help="estimates CSV")

    p = sub.add_parser("sensitivity", help="inject calibrated missingness into complete-case data")
    _add_common(p)
    _add_chain_flags(p)
    p.add_argument("input", type=Path, nargs="?", help="peptide CSV (omit with --synthetic)")
    p.add_argument("--synthetic", type=int, default=None,
                   help="use N simulated fully observed proteins instead of an input file")
    p.add_argument("--levels", type=_percent_list, default=[1, 5, 10, 20, 30, 40, 50],
                   help="missingness percentages (default 1,5,10,20,30,40,50)")
    p.add_argument("--sample", type=int, default=500)
    p.add_argument("--method", choices=[*METHOD_FLAGS, "all"], default="all")
    p.add_argument("--free", choices=["a", "b"], default="a", help="calibrated coefficient")
    p.add_argument("--b", type=float, default=0.5, help="fixed value of the other coefficient")
    p.add_argument("--log2", action="store_true")
    p.add_argument("--out", type=Path, default=None, help="output directory")

    p = sub.add_parser("misspec", help="M5 under three true missingness mechanisms")
    _add_common(p)
    _add_chain_flags(p)
    p.add_argument("--mechanisms", default="probit,quadratic,logit")
    p.add_argument("--target", type=float, default=0.33, help="overall missing fraction")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--proteins", type=int, default=500)
    p.add_argument("--method", choices=[*METHOD_FLAGS, "all"], default="m5")
    p.add_argument("--out", type=Path, default=None, help="output directory")

    p = sub.add_parser("report", help="rank methods or proteins from score/estimate CSVs")
    p.add_argument("paths", type=Path, nargs="*")
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--out", type=Path, default=None, help="write the report here instead of stdout")
    p.add_argument("--config", type=Path)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        values = json.loads(args.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(values, dict):
        parser.error("config file must hold a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    known = set(vars(args)) - {"command", "config"}
    unknown = sorted(set(values) - known)
    if unknown:
        parser.error(f"unknown config keys for {args.command}: {unknown}")
    # re-parse with config values as defaults so explicit flags still win
    sub = parser.subcommands[args.command]
    conv = {a.dest: a for a in sub._actions}
    for k, v in values.items():
        if k in ("levels",) and not isinstance(v, list):
            values[k] = _percent_list(v)
        elif k in ("input", "out", "trace") and v is not None:
            values[k] = Path(v)
        elif k == "paths":
            values[k] = [Path(x) for x in v]
        elif conv[k].choices and v not in conv[k].choices:
            parser.error(f"config value {k}={v!r} not in {list(conv[k].choices)}")
    sub.set_defaults(**values)
    args = parser.parse_args(argv)
    for k in ("input", "paths"):
        if k in values and getattr(args, k) in (None, []):
            setattr(args, k, values[k])
    return args


def _checked(args):
    if args.command == "report" and not args.paths:
        raise UsageError("report needs at least one CSV path")
    if args.command != "report" and args.out is None:
        raise UsageError(f"{args.command} needs --out")
    return args


def _methods(flag: str) -> tuple:
    return METHODS if flag == "all" else (METHOD_FLAGS[flag],)


def _chain_cfg(args, **extra) -> ChainConfig:
    try:
        return ChainConfig(n_iterations=args.iters, burn_in=args.burnin, seed=args.seed,
                           thin=args.thin, **extra)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _threads(args) -> int:
    n = args.threads if args.threads is not None else default_threads()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _args_record(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
            if k not in ("verbose", "threads", "config")}


def _write_summary(scores, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "category", "missing_bin", "level", "mechanism",
                    "mean_mse", "pooled_mse", "mean_correlation", "n_replicates", "n"])
        for a in aggregate(scores):
            w.writerow([a.method, a.category, a.missing_bin or "", "" if a.level is None else repr(a.level),
                        a.mechanism or "", repr(a.mean_mse), repr(a.pooled_mse),
                        repr(a.mean_correlation), a.n_replicates, a.n_proteins])


def _failures(result) -> list:
    return [dict(zip(("replicate", "method", "level", "mechanism", "error"), f)) for f in result.failures]


def cmd_simulate(args) -> int:
    if args.replicates < 1 or args.proteins < 1:
        raise UsageError("--replicates and --proteins must be >= 1")
    chain = _chain_cfg(args)
    try:
        mech = MissingnessMechanism(PROBIT_LINEAR, args.a, args.b)
        cfg = SimulationConfig(n_proteins=args.proteins, mechanism=mech,
                               n_replicates=args.replicates, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    res = run_simulation_study(cfg, _methods(args.method), chain, workers=_threads(args), keep_data=True)
    for r, (ds, truth) in enumerate(res.metadata.pop("datasets")):
        rep = out / f"replicate_{r:03d}"
        rep.mkdir(exist_ok=True)
        with (rep / "truth.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["protein_id", "true_mu"])
            for pid in sorted(truth):
                w.writerow([pid, repr(truth[pid])])
        if args.write_data:
            write_csv(ds, rep / "data.csv")
    write_scores(res.scores, out / "scores.csv")
    _write_summary(res.scores, out / "summary.csv")
    _write_json(out / "run.json", {"command": "simulate", "args": _args_record(args),
                                   "study": res.metadata, "failures": _failures(res)})
    log.info("wrote %d score rows to %s", len(res.scores), out / "scores.csv")
    return EXIT_OK


def _load(path: Path, log2: bool) -> Dataset:
    if path is None:
        raise UsageError("an input CSV is required")
    return ingest_csv(path, log2=log2)


def cmd_fit(args) -> int:
    methods = _methods(args.method)
    traced = tuple(p for p in args.trace_proteins.split(",") if p)
    chain = _chain_cfg(args, trace_proteins=traced)
    if args.sample is not None and args.sample < 1:
        raise UsageError("--sample must be >= 1")
    if args.trace and not {"M5", "M3"} & set(methods):
        raise UsageError("--trace needs --method m5, m3 or all")
    ds = _load(args.input, args.log2)
    census = {str(k): v for k, v in ds.category_counts().items()}
    n_slots, n_missing = ds.n_slots, ds.n_missing
    ds = drop_missing_proteins(ds)
    if not len(ds):
        raise DataError("no protein has any observed intensity")
    selection = None
    if args.sample is not None and args.sample < len(ds):
        ds = sample_proteins(ds, args.sample, np.random.default_rng(np.random.SeedSequence([args.seed, 1])))
        selection = [g.protein_id for g in ds.proteins]
    groups = ds.by_id()
    rows, meta = [], {"command": "fit", "args": _args_record(args), "provenance": ds.provenance,
                      "census": census, "n_slots": n_slots, "n_missing": n_missing, "methods": {}}
    for method in methods:
        if method in ("M5", "M3"):
            res = run_chain(ds, replace(chain, model=Model(method)))
            for s in res.summaries:
                g = groups[s.protein_id]
                rows.append(EstimateRow(s.protein_id, s.category, method, s.post_mean, s.post_sd,
                                        s.ci_lower, s.ci_upper, g.m_i, g.n_matched_pairs))
            excl = {}
            for s in res.summaries:
                if s.ci_lower > 0 or s.ci_upper < 0:
                    excl[str(s.category)] = excl.get(str(s.category), 0) + 1
            post = res.theta_trace[chain.burn_in:]
            meta["methods"][method] = {
                "ci_excludes_zero": excl, "ab_update_failures": res.ab_failures,
                "theta_posterior_mean": dict(zip(("a", "b", "tau", "xi", "sigma", "beta_alpha", "beta_mu"),
                                                 map(float, post.mean(axis=0)))),
            }
            log.info("%s: credible interval excludes 0 for %s", method, excl or "no proteins")
            if args.trace:
                path = args.trace if len(methods) == 1 else args.trace.with_name(
                    f"{args.trace.stem}_{method}{args.trace.suffix}")
                res.write_trace(path)
        else:
            for pe in baselines.estimate(ds, method, args.k):
                if pe.present:
                    g = groups[pe.protein_id]
                    rows.append(EstimateRow(pe.protein_id, pe.category, method, pe.estimate,
                                            n_peptides=g.m_i, n_matched_pairs=g.n_matched_pairs))
            meta["methods"][method] = {"n_estimates": sum(r.method == method for r in rows)}
    rows.sort(key=lambda r: (r.protein_id, METHODS.index(r.method)))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_estimates(rows, args.out)
    if selection is not None:
        sel_path = args.out.with_name(args.out.stem + "_selection.csv")
        sel_path.write_text("protein_id\n" + "".join(f"{p}\n" for p in selection), encoding="utf-8")
        meta["selection_file"] = sel_path.name
    _write_json(args.out.with_suffix(args.out.suffix + ".json"), meta)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    if (args.input is None) == (args.synthetic is None):
        raise UsageError("give exactly one of an input CSV or --synthetic N")
    chain = _chain_cfg(args)
    if args.synthetic is not None:
        if args.synthetic < 1:
            raise UsageError("--synthetic must be >= 1")
        cfg = SimulationConfig(n_proteins=args.synthetic, mechanism=observe_all(), seed=args.seed)
        ds, _ = generate_dataset(cfg, np.random.default_rng(np.random.SeedSequence([args.seed, 2])))
    else:
        ds = _load(args.input, args.log2)
    res = run_sensitivity(ds, [lv / 100.0 for lv in args.levels], _methods(args.method), chain,
                          sample=args.sample, seed=args.seed, b=args.b, free=args.free,
                          workers=_threads(args))
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    selected = res.metadata.pop("selected_proteins")
    (out / "selection.csv").write_text("protein_id\n" + "".join(f"{p}\n" for p in selected), encoding="utf-8")
    write_scores(res.scores, out / "scores.csv")
    _write_summary(res.scores, out / "summary.csv")
    _write_json(out / "run.json", {"command": "sensitivity", "args": _args_record(args),
                                   "study": res.metadata, "failures": _failures(res)})
    return EXIT_OK


def cmd_misspec(args) -> int:
    names = [m.strip() for m in args.mechanisms.split(",") if m.strip()]
    bad = [m for m in names if m not in MECHANISM_FLAGS]
    if not names or bad:
        raise UsageError(f"--mechanisms must list some of {list(MECHANISM_FLAGS)}")
    if not 0 < args.target < 1:
        raise UsageError("--target must lie in (0, 1)")
    if args.replicates < 1 or args.proteins < 1:
        raise UsageError("--replicates and --proteins must be >= 1")
    chain = _chain_cfg(args)
    cfg = SimulationConfig(n_proteins=args.proteins, n_replicates=args.replicates, seed=args.seed)
    ref = reference_intensities(cfg, seed=args.seed)
    mechs = misspecification_mechanisms(ref, target=args.target)
    chosen = {MECHANISM_FLAGS[n]: mechs[MECHANISM_FLAGS[n]] for n in names}
    res = run_misspec_study(cfg, chosen, chain, _methods(args.method), workers=_threads(args))
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_scores(res.scores, out / "scores.csv")
    _write_summary(res.scores, out / "summary.csv")
    _write_json(out / "run.json", {"command": "misspec", "args": _args_record(args),
                                   "study": res.metadata, "failures": _failures(res)})
    return EXIT_OK


def _header(path: Path):
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            return next(csv.reader(fh), None)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _report_scores(scores) -> list:
    lines = ["Method ranking by mean per-replicate MSE", ""]
    agg = [a for a in aggregate(scores) if a.missing_bin is None]
    keys = sorted({(a.level, a.mechanism, a.category) for a in agg},
                  key=lambda k: (-1 if k[0] is None else k[0], k[1] or "", k[2]))
    for level, mech, cat in keys:
        cell = sorted((a for a in agg if (a.level, a.mechanism, a.category) == (level, mech, cat)),
                      key=lambda a: (a.mean_mse, a.method))
        label = cat
        if level is not None:
            label += f"  level={100 * level:g}%"
        if mech:
            label += f"  mechanism={mech}"
        lines.append(label)
        for rank, a in enumerate(cell, 1):
            lines.append(f"  {rank}. {a.method:<6} mse={a.mean_mse:.4f} pooled={a.pooled_mse:.4f} "
                         f"corr={a.mean_correlation:.3f} reps={a.n_replicates} n={a.n_proteins}")
        lines.append("")
    return lines


def _estimate_rank(row: EstimateRow) -> float:
    return row.estimate**2 / row.posterior_sd


def _report_estimates(rows, top: int) -> list:
    lines = []
    ranked = [r for r in rows if r.posterior_sd is not None and r.posterior_sd > 0 and r.estimate is not None]
    if not ranked:
        lines.append("No posterior summaries; listing estimates by absolute value")
        ranked = [r for r in rows if r.estimate is not None]
        key = lambda r: (-abs(r.estimate), r.protein_id)  # noqa: E731
    else:
        key = lambda r: (-_estimate_rank(r), r.protein_id)  # noqa: E731
    for method in sorted({r.method for r in ranked}, key=lambda m: METHODS.index(m) if m in METHODS else 99):
        mine = [r for r in ranked if r.method == method]
        for title, sel in (("", [r for r in mine if r.category is not ProteinCategory.ONE_SIDED]),
                           (" (one-sided proteins)", [r for r in mine if r.category is ProteinCategory.ONE_SIDED])):
            if not sel:
                continue
            sel = sorted(sel, key=key)[:top]
            lines.append(f"{method}: top {len(sel)} proteins{title}")
            lines.append(f"  {'protein_id':<20} {'category':<10} {'estimate':>9} {'sd':>7} "
                         f"{'ci_lower':>9} {'ci_upper':>9} {'rank':>9}")
            for r in sel:
                sd = "" if r.posterior_sd is None else f"{r.posterior_sd:7.3f}"
                lo = "" if r.ci_lower is None else f"{r.ci_lower:9.3f}"
                hi = "" if r.ci_upper is None else f"{r.ci_upper:9.3f}"
                rk = f"{_estimate_rank(r):9.2f}" if r.posterior_sd else ""
                lines.append(f"  {r.protein_id:<20} {str(r.category):<10} {r.estimate:9.3f} {sd:>7} "
                             f"{lo:>9} {hi:>9} {rk:>9}")
            lines.append("")
    return lines


def cmd_report(args) -> int:
    if args.top < 1:
        raise UsageError("--top must be >= 1")
    scores, estimates = [], []
    for path in args.paths:
        header = _header(path)
        if header == SCORE_HEADER:
            scores += read_scores(path)
        elif header == ESTIMATES_HEADER:
            estimates += read_estimates(path)
        elif header is None:
            raise DataError(f"{path}: empty file")
        else:
            raise DataError(f"{path}: neither a score table nor an estimates file")
    if not scores and not estimates:
        raise DataError("report inputs contain no rows")
    lines = []
    if scores:
        lines += _report_scores(scores)
    if estimates:
        lines += _report_estimates(estimates, args.top)
    text = "\n".join(lines).rstrip() + "\n"
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "sensitivity": cmd_sensitivity,
            "misspec": cmd_misspec, "report": cmd_report}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](_checked(args))
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (IngestionError, DataError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (ChainError, ProbitError, CalibrationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
