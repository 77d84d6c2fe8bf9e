"""Monte Carlo replication runner, bias summaries and report files.

Replication ``r`` of every scenario draws its panel from ``stream_seed(base_seed, r)``,
so scenarios differ only through their parameters. Each replication is a pure
function of ``(scenario, estimators, seed)``; the bench reduces replications in
index order, so worker count never changes a reported number.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dgp import ScenarioConfig, generate_panel, stream_seed, true_att
from .errors import EmptyPlan, InvalidConfig, StagDidError
from .fe import EventStudyCurve, etwfe, sun_abraham, twfe_event_study, twfe_static
from .grouptime import aggregate_gt, callaway_santanna, pretrend_report
from .impute import McConfig, aggregate_effects, bjs, mc_effects
from .panel import PanelDataset

__all__ = [
    "ESTIMATORS",
    "BenchPlan",
    "EstimatorOutput",
    "ReplicationResult",
    "SimulationReport",
    "emit_report",
    "load_replications",
    "run_bench",
    "run_estimator",
    "run_replication",
    "summarize",
]

ESTIMATORS = ("twfe", "twfe-es", "sa", "cs", "etwfe", "bjs", "mc")
WORKERS_ENV = "STAGDID_WORKERS"
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
BENCH_MC = McConfig(n_lambda=15)


@dataclass(frozen=True)
class EstimatorOutput:
    overall: float
    curve: EventStudyCurve | None = None
    lambda_star: float | None = None

    def to_json(self) -> dict:
        out = {"overall": self.overall, "lambda_star": self.lambda_star, "curve": None}
        if self.curve is not None:
            out["curve"] = {
                "points": [[e, v] for e, v in self.curve.points.items()],
                "reference": sorted(self.curve.reference),
                "in_sample": sorted(self.curve.in_sample),
            }
        return out

    @classmethod
    def from_json(cls, raw: dict, label: str = "") -> "EstimatorOutput":
        c = raw.get("curve")
        curve = None
        if c is not None:
            curve = EventStudyCurve({int(e): float(v) for e, v in c["points"]},
                                    frozenset(c["reference"]), frozenset(c["in_sample"]), label)
        return cls(float(raw["overall"]), curve, raw.get("lambda_star"))


def _trim(curve: EventStudyCurve, window) -> EventStudyCurve:
    if window is None:
        return curve
    lead, lag = window
    pts = {e: v for e, v in curve.points.items() if -lead <= e <= lag}
    return EventStudyCurve(pts, curve.reference & set(pts), curve.in_sample & set(pts), curve.label)


def _frequency_weighted(curve: EventStudyCurve, panel: PanelDataset) -> float:
    """Post-treatment coefficients averaged with treated-cell counts as weights."""
    rel = panel.relative_time()[panel.d.astype(bool)].astype(int)
    es, counts = np.unique(rel, return_counts=True)
    w = {int(e): int(c) for e, c in zip(es, counts)}
    num = sum(w[e] * v for e, v in curve.points.items() if e >= 0 and e in w)
    den = sum(w[e] for e in curve.points if e >= 0 and e in w)
    return float(num / den)


def run_estimator(name: str, panel: PanelDataset, *, control: str = "never", anticipation: int = 0,
                  mc: McConfig = McConfig(), window: tuple[int, int] | None = None,
                  rng=None) -> EstimatorOutput:
    """Run one estimator by name and return its overall estimate and event-study curve.

    ``window=(L, K)`` bins event-study TWFE at ``-L`` and ``K`` and trims the
    other curves to the same range. ``control`` and ``anticipation`` apply to
    CS only. ``rng`` seeds the matrix-completion folds.
    """
    if name == "twfe":
        return EstimatorOutput(twfe_static(panel).value)
    if name == "twfe-es":
        lead, lag = window if window is not None else (None, None)
        curve = twfe_event_study(panel, lead, lag)
        return EstimatorOutput(_frequency_weighted(curve, panel), curve)
    if name == "sa":
        res = sun_abraham(panel)
        return EstimatorOutput(res.overall.value, _trim(res.curve, window))
    if name == "cs":
        gt = callaway_santanna(panel, control=control, anticipation=anticipation)
        return EstimatorOutput(aggregate_gt(gt, "overall").value, _trim(aggregate_gt(gt, "event_study"), window))
    if name == "etwfe":
        res = etwfe(panel)
        return EstimatorOutput(res.overall.value, _trim(res.curve, window))
    if name == "bjs":
        ce = bjs(panel)
        return EstimatorOutput(aggregate_effects(ce).value, _trim(aggregate_effects(ce, "event_time"), window))
    if name == "mc":
        res = mc_effects(panel, mc, rng)
        return EstimatorOutput(aggregate_effects(res.effects).value,
                               _trim(aggregate_effects(res.effects, "event_time"), window), res.lambda_star)
    raise InvalidConfig(f"unknown estimator {name!r}; expected one of {ESTIMATORS}")


@dataclass(frozen=True)
class ReplicationResult:
    scenario: str
    replication: int
    estimates: dict            # estimator -> EstimatorOutput
    errors: dict               # estimator -> "ErrorCode: message"
    truth_overall: float
    truth_path: dict           # e -> mean true effect

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "replication": self.replication,
            "truth_overall": self.truth_overall,
            "truth_path": [[e, v] for e, v in sorted(self.truth_path.items())],
            "estimates": {k: v.to_json() for k, v in self.estimates.items()},
            "errors": dict(self.errors),
        }

    @classmethod
    def from_json(cls, raw: dict) -> "ReplicationResult":
        return cls(
            raw["scenario"],
            int(raw["replication"]),
            {k: EstimatorOutput.from_json(v, k) for k, v in raw["estimates"].items()},
            dict(raw["errors"]),
            float(raw["truth_overall"]),
            {int(e): float(v) for e, v in raw["truth_path"]},
        )


def _error_text(exc: Exception) -> str:
    code = getattr(exc, "code", type(exc).__name__)
    return f"{code}: {exc}"


def _mc_rng(base_seed: int, replication: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(base_seed), spawn_key=(int(replication), 1)))


def run_replication(scenario: ScenarioConfig, estimators: Sequence[str], seed: int, replication: int = 0, *,
                    control: str = "never", anticipation: int = 0, mc: McConfig = BENCH_MC,
                    window=None) -> ReplicationResult:
    """Generate one panel from ``stream_seed(seed, replication)`` and run every estimator on it.

    An estimator that raises is recorded in ``errors``; the others still run.
    """
    estimators = list(estimators)
    if not estimators:
        raise EmptyPlan("no estimators requested")
    try:
        gp = generate_panel(scenario, stream_seed(seed, replication))
    except StagDidError as exc:
        msg = _error_text(exc)
        return ReplicationResult(scenario.name, replication, {}, {e: msg for e in estimators}, float("nan"), {})
    est, err = {}, {}
    for name in estimators:
        try:
            est[name] = run_estimator(name, gp.panel, control=control, anticipation=anticipation, mc=mc,
                                      window=window, rng=_mc_rng(seed, replication))
        except (StagDidError, ValueError, np.linalg.LinAlgError) as exc:
            err[name] = _error_text(exc)
    return ReplicationResult(scenario.name, replication, est, err, true_att(gp), true_att(gp, "event_time"))


@dataclass(frozen=True)
class BenchPlan:
    """Scenarios x estimators x replications, plus estimator settings.

    ``r_override`` lowers the replication count for individual estimators
    (matrix completion defaults to 100); it can never exceed ``replications``.
    """

    scenarios: tuple
    estimators: tuple = ESTIMATORS
    replications: int = 200
    base_seed: int = 42
    r_override: Mapping[str, int] = field(default_factory=lambda: {"mc": 100})
    control: str = "never"
    anticipation: int = 0
    mc: McConfig = BENCH_MC
    window: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "r_override", dict(self.r_override))
        if not self.estimators:
            raise EmptyPlan("estimator list is empty")
        if not self.scenarios:
            raise EmptyPlan("scenario list is empty")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise InvalidConfig(f"unknown estimators {sorted(unknown)}; expected a subset of {ESTIMATORS}")
        if self.replications < 1 or any(v < 1 for v in self.r_override.values()):
            raise InvalidConfig("replication counts must be >= 1")
        names = [s.name for s in self.scenarios]
        if len(set(names)) != len(names):
            raise InvalidConfig(f"scenario names must be unique, got {names}")

    def reps_for(self, estimator: str) -> int:
        return min(self.replications, self.r_override.get(estimator, self.replications))

    def to_json(self) -> dict:
        mc = asdict(self.mc)
        return {
            "scenarios": [s.to_dict() for s in self.scenarios],
            "estimators": list(self.estimators),
            "replications": self.replications,
            "base_seed": self.base_seed,
            "r_override": dict(sorted(self.r_override.items())),
            "control": self.control,
            "anticipation": self.anticipation,
            "mc": mc,
            "window": list(self.window) if self.window is not None else None,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "BenchPlan":
        mc = dict(raw.get("mc") or {})
        if mc.get("lambda_grid") is not None:
            mc["lambda_grid"] = tuple(mc["lambda_grid"])
        return cls(
            scenarios=[ScenarioConfig.from_dict(s) for s in raw["scenarios"]],
            estimators=raw["estimators"],
            replications=int(raw["replications"]),
            base_seed=int(raw["base_seed"]),
            r_override=raw.get("r_override", {}),
            control=raw.get("control", "never"),
            anticipation=int(raw.get("anticipation", 0)),
            mc=McConfig(**mc),
            window=tuple(raw["window"]) if raw.get("window") else None,
        )


def _task(args):
    plan, k, r = args
    ests = [e for e in plan.estimators if r < plan.reps_for(e)]
    return run_replication(plan.scenarios[k], ests, plan.base_seed, r, control=plan.control,
                           anticipation=plan.anticipation, mc=plan.mc, window=plan.window)


def _workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidConfig(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def run_bench(plan: BenchPlan, workers: int | None = None, progress=None) -> "SimulationReport":
    """Run every (scenario, replication) task and summarise.

    ``workers`` defaults to the ``STAGDID_WORKERS`` environment variable (1 if
    unset). Results are collected in task order regardless of worker count.
    """
    tasks = [(plan, k, r) for k in range(len(plan.scenarios)) for r in range(plan.replications)]
    n = _workers(workers)
    if n == 1:
        reps = []
        for i, t in enumerate(tasks):
            reps.append(_task(t))
            if progress is not None:
                progress(i + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            reps = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * n))))
    return summarize(plan, reps)


@dataclass(frozen=True)
class SimulationReport:
    plan: BenchPlan
    replications: list
    summary: list              # dict rows, see SUMMARY_COLUMNS
    eventstudy: list           # dict rows, see EVENTSTUDY_COLUMNS
    pretrend: list             # dict rows, see PRETREND_COLUMNS
    failures: list             # (scenario, estimator, replication, message)

    def row(self, scenario: str, estimator: str) -> dict:
        for r in self.summary:
            if r["scenario"] == scenario and r["estimator"] == estimator:
                return r
        raise KeyError((scenario, estimator))

    def curve(self, scenario: str, estimator: str) -> dict:
        return {r["e"]: r for r in self.eventstudy if r["scenario"] == scenario and r["estimator"] == estimator}

    def flags(self, scenario: str) -> dict:
        return {r["estimator"]: r for r in self.pretrend if r["scenario"] == scenario}


SUMMARY_COLUMNS = ("scenario", "estimator", "n_reps", "n_failed", "truth", "mean", "abs_bias", "rel_bias", "sd",
                   "q05", "q25", "q50", "q75", "q95", "mcse_rel")
EVENTSTUDY_COLUMNS = ("scenario", "estimator", "e", "n", "mean", "sd", "truth", "in_sample")
PRETREND_COLUMNS = ("scenario", "estimator", "applicable", "mean_pre", "max_abs_pre", "flagged", "worst_e", "worst_z")


def _sd(x: np.ndarray) -> float:
    return float(x.std(ddof=1)) if x.size > 1 else float("nan")


def summarize(plan: BenchPlan, replications: Sequence[ReplicationResult]) -> SimulationReport:
    """Reduce replication results (in scenario, replication order) into report rows.

    ``abs_bias`` is the signed difference between the mean estimate and the
    mean true ATT over the replications the estimator completed; ``rel_bias``
    divides it by that mean truth (``None`` when the truth is zero).
    """
    order = {s.name: k for k, s in enumerate(plan.scenarios)}
    reps = sorted(replications, key=lambda r: (order.get(r.scenario, len(order)), r.replication))
    summary, es_rows, pre_rows, failures = [], [], [], []
    for scen in plan.scenarios:
        mine = [r for r in reps if r.scenario == scen.name]
        curves_by_est = {}
        for est in plan.estimators:
            used = [r for r in mine if r.replication < plan.reps_for(est)]
            ok = [r for r in used if est in r.estimates]
            failures.extend((scen.name, est, r.replication, r.errors[est]) for r in used if est in r.errors)
            summary.append(_summary_row(scen.name, est, ok, len(used) - len(ok)))
            curves = [r.estimates[est].curve for r in ok if r.estimates[est].curve is not None]
            if curves:
                es_rows.extend(_eventstudy_rows(scen.name, est, ok))
                curves_by_est[est] = curves
        for est, s in pretrend_report(curves_by_est).items():
            pre_rows.append({"scenario": scen.name, "estimator": est, "applicable": s.applicable,
                             "mean_pre": s.mean_pre, "max_abs_pre": s.max_abs_pre, "flagged": s.flagged,
                             "worst_e": s.worst_e, "worst_z": s.worst_z})
    return SimulationReport(plan, list(reps), summary, es_rows, pre_rows, failures)


def _summary_row(scenario: str, est: str, ok: list, n_failed: int) -> dict:
    row = {"scenario": scenario, "estimator": est, "n_reps": len(ok), "n_failed": n_failed}
    if not ok:
        row.update({c: None for c in SUMMARY_COLUMNS[4:]})
        return row
    x = np.array([r.estimates[est].overall for r in ok])
    truth = float(np.mean([r.truth_overall for r in ok]))
    mean = float(x.mean())
    bias = mean - truth
    qs = np.quantile(x, QUANTILES)
    row.update({
        "truth": truth,
        "mean": mean,
        "abs_bias": bias,
        "rel_bias": bias / truth if truth != 0 else None,
        "sd": _sd(x),
        **{f"q{int(round(q * 100)):02d}": float(v) for q, v in zip(QUANTILES, qs)},
        "mcse_rel": float(_sd(x) / np.sqrt(x.size) / abs(truth)) if truth != 0 and x.size > 1 else None,
    })
    return row


def _eventstudy_rows(scenario: str, est: str, ok: list) -> list:
    es = sorted({e for r in ok for e, _ in r.estimates[est].curve.points.items()
                 if e not in r.estimates[est].curve.reference})
    rows = []
    for e in es:
        vals = np.array([r.estimates[est].curve.points[e] for r in ok if e in r.estimates[est].curve.points])
        truth = [r.truth_path.get(e, 0.0) for r in ok if e in r.estimates[est].curve.points]
        rows.append({
            "scenario": scenario, "estimator": est, "e": e, "n": int(vals.size),
            "mean": float(vals.mean()), "sd": _sd(vals), "truth": float(np.mean(truth)),
            "in_sample": any(e in r.estimates[est].curve.in_sample for r in ok),
        })
    return rows


# files


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def scenario_hash(cfg: ScenarioConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def manifest(plan: BenchPlan) -> dict:
    from . import __version__

    return {
        "package": "stagdid",
        "version": __version__,
        "plan": plan.to_json(),
        "seeds": {
            "base_seed": plan.base_seed,
            "panel_stream": "SeedSequence(base_seed, spawn_key=(replication,))",
            "mc_fold_stream": "SeedSequence(base_seed, spawn_key=(replication, 1))",
            "replications": {e: plan.reps_for(e) for e in plan.estimators},
        },
        "scenario_hashes": {s.name: scenario_hash(s) for s in plan.scenarios},
    }


def emit_report(report: SimulationReport, out_dir) -> dict:
    """Write summary.csv, eventstudy.csv, pretrend.csv, manifest.json, replications.jsonl
    (and failures.csv when some estimator failed). Returns the written paths."""
    if not report.summary:
        raise EmptyPlan("report has no rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "summary": out / "summary.csv",
        "eventstudy": out / "eventstudy.csv",
        "pretrend": out / "pretrend.csv",
        "manifest": out / "manifest.json",
        "replications": out / "replications.jsonl",
    }
    _write_csv(paths["summary"], SUMMARY_COLUMNS, report.summary)
    _write_csv(paths["eventstudy"], EVENTSTUDY_COLUMNS, report.eventstudy)
    _write_csv(paths["pretrend"], PRETREND_COLUMNS, report.pretrend)
    paths["manifest"].write_text(json.dumps(manifest(report.plan), indent=2) + "\n", encoding="utf-8")
    with open(paths["replications"], "w", encoding="utf-8") as fh:
        for r in report.replications:
            fh.write(json.dumps(r.to_json()) + "\n")
    fail_path = out / "failures.csv"
    if report.failures:
        _write_csv(fail_path, ("scenario", "estimator", "replication", "error"),
                   [dict(zip(("scenario", "estimator", "replication", "error"), f)) for f in report.failures])
        paths["failures"] = fail_path
    elif fail_path.exists():
        fail_path.unlink()
    return paths


def load_plan(manifest_path) -> BenchPlan:
    raw = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    return BenchPlan.from_json(raw["plan"])


def load_replications(path) -> list[ReplicationResult]:
    with open(path, encoding="utf-8") as fh:
        return [ReplicationResult.from_json(json.loads(line)) for line in fh if line.strip()]
