"""Command-line entry point: ``stagdid {simulate,estimate,bench,decompose,report}``.

Failures print one JSON line ``{"error": code, "message": ...}`` on stderr and
exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from .dgp import generate_panel, load_preset, stream_seed
from .errors import InvalidConfig, StagDidError
from .grouptime import bacon_decompose
from .harness import (
    BENCH_MC,
    ESTIMATORS,
    BenchPlan,
    emit_report,
    load_plan,
    load_replications,
    run_bench,
    run_estimator,
    summarize,
)
from .impute import McConfig
from .panel import read_panel_csv, write_panel_csv

EXIT_ERROR = 1
EXIT_USAGE = 2


def _window(text: str):
    try:
        lead, lag = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected L,K (two integers), got {text!r}") from None
    if lead < 1 or lag < 1:
        raise argparse.ArgumentTypeError("window bounds must be >= 1")
    return lead, lag


def _grid(text: str):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated penalties, got {text!r}") from None
    if not vals or min(vals) <= 0:
        raise argparse.ArgumentTypeError("penalties must be positive")
    return vals


def _estimators(text: str):
    names = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [n for n in names if n not in ESTIMATORS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown estimator(s) {bad}; choose from {','.join(ESTIMATORS)}")
    return names


def _add_mc(p, default: McConfig):
    p.add_argument("--mc-lambda-grid", type=_grid, help="explicit penalty grid a,b,c (default: automatic)")
    p.add_argument("--mc-n-lambda", type=int, default=default.n_lambda, help="size of the automatic grid")
    p.add_argument("--mc-folds", type=int, default=default.folds)
    p.add_argument("--mc-tol", type=float, default=default.tol)


def _mc_config(args, seed: int = 0) -> McConfig:
    return McConfig(lambda_grid=args.mc_lambda_grid, n_lambda=args.mc_n_lambda, folds=args.mc_folds,
                    tol=args.mc_tol, seed=seed)


class _Parser(argparse.ArgumentParser):
    """Usage errors become one JSON line naming the offending flag."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "UsageError", "message": message}), file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="stagdid", description="Staggered DiD estimators and bias benchmarks.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="scenario -> panel.csv + truth.csv")
    p.add_argument("--preset", required=True, help="preset name (e.g. setup4, figure2-grid) or JSON path")
    p.add_argument("--scenario", help="scenario name inside a multi-scenario preset")
    p.add_argument("--seed", type=int, default=42, help="base seed")
    p.add_argument("--replication", type=int, default=0, help="replication index of the seed stream")
    p.add_argument("--timing-literal", action="store_true", help="per-period logistic timing draw")
    p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("estimate", help="panel CSV -> estimates JSON")
    p.add_argument("--panel", required=True, help="CSV with header unit,period,y,d")
    p.add_argument("--estimator", required=True, choices=ESTIMATORS)
    p.add_argument("--window", type=_window, help="event window L,K (leads, lags)")
    p.add_argument("--control", default="never", choices=("never", "notyet", "both"))
    p.add_argument("--anticipation", type=int, default=0, help="CS base period g-1-a")
    p.add_argument("--seed", type=int, default=0, help="seed for matrix-completion folds")
    p.add_argument("--out", help="write JSON here instead of stdout")
    _add_mc(p, McConfig())

    p = sub.add_parser("bench", help="plan -> report files")
    p.add_argument("--preset", action="append", help="preset name or path (repeatable)")
    p.add_argument("--manifest", help="rerun the plan recorded in a manifest.json")
    p.add_argument("--estimator", type=_estimators, default=ESTIMATORS, help="comma list of estimators")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--mc-reps", type=int, default=100, help="replications for matrix completion")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--window", type=_window)
    p.add_argument("--control", default="never", choices=("never", "notyet", "both"))
    p.add_argument("--anticipation", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    _add_mc(p, BENCH_MC)

    p = sub.add_parser("decompose", help="panel CSV -> Bacon decomposition CSV")
    p.add_argument("--panel", required=True)
    p.add_argument("--out", help="write CSV here instead of stdout")

    p = sub.add_parser("report", help="replications.jsonl -> summary files")
    p.add_argument("--replications", required=True, help="directory of a bench run or a replications.jsonl")
    p.add_argument("--manifest", help="manifest.json (default: next to the replications file)")
    p.add_argument("--out", required=True)
    return ap


def _cmd_simulate(args) -> int:
    scen = load_preset(args.preset)
    if args.scenario:
        scen = [s for s in scen if s.name == args.scenario]
        if not scen:
            raise InvalidConfig(f"preset {args.preset!r} has no scenario {args.scenario!r}")
    out = Path(args.out)
    for cfg in scen:
        if args.timing_literal and hasattr(cfg.timing, "literal"):
            cfg = cfg.replace(timing=dataclasses.replace(cfg.timing, literal=True))
        gp = generate_panel(cfg, stream_seed(args.seed, args.replication))
        d = out if len(scen) == 1 else out / cfg.name
        d.mkdir(parents=True, exist_ok=True)
        write_panel_csv(gp.panel, d / "panel.csv")
        with open(d / "truth.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["unit", "period", "delta_true"])
            for u, t, v in gp.truth_rows():
                w.writerow([u, t, repr(v)])
        print(d / "panel.csv")
    return 0


def _cmd_estimate(args) -> int:
    panel = read_panel_csv(args.panel)
    res = run_estimator(args.estimator, panel, control=args.control, anticipation=args.anticipation,
                        mc=_mc_config(args, args.seed), window=args.window)
    curve = []
    if res.curve is not None:
        curve = [{"e": e, "value": v, "in_sample": e in res.curve.in_sample}
                 for e, v in sorted(res.curve.points.items())]
    doc = {"estimator": args.estimator, "overall": res.overall, "curve": curve, "lambda_star": res.lambda_star}
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def _cmd_bench(args) -> int:
    if args.manifest:
        plan = load_plan(args.manifest)
    else:
        if not args.preset:
            raise InvalidConfig("bench needs --preset or --manifest")
        scen = [s for name in args.preset for s in load_preset(name)]
        plan = BenchPlan(scen, estimators=args.estimator, replications=args.reps, base_seed=args.seed,
                         r_override={"mc": args.mc_reps}, control=args.control, anticipation=args.anticipation,
                         mc=_mc_config(args), window=args.window)
    report = run_bench(plan)
    paths = emit_report(report, args.out)
    for p in paths.values():
        print(p)
    return 0


def _cmd_decompose(args) -> int:
    dec = bacon_decompose(read_panel_csv(args.panel))
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "treat_g", "ctrl_g", "did", "weight"])
        for c in dec.comparisons:
            w.writerow([c.kind, c.treat_g, "" if c.ctrl_g is None else c.ctrl_g, repr(float(c.did)), repr(float(c.weight))])
    finally:
        if args.out:
            fh.close()
    return 0


def _cmd_report(args) -> int:
    src = Path(args.replications)
    store = src / "replications.jsonl" if src.is_dir() else src
    man = Path(args.manifest) if args.manifest else store.parent / "manifest.json"
    plan = load_plan(man)
    report = summarize(plan, load_replications(store))
    for p in emit_report(report, args.out).values():
        print(p)
    return 0


COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "bench": _cmd_bench,
    "decompose": _cmd_decompose,
    "report": _cmd_report,
}


def _fail(code: str, message: str, status: int) -> int:
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except StagDidError as exc:
        return _fail(exc.code, str(exc), EXIT_ERROR)
    except (OSError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
