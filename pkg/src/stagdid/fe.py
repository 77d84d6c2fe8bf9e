"""Least squares with absorbed fixed effects and the regression-based estimators.

All estimators here share :func:`absorb_and_solve`, which sweeps out the
absorbed categorical factors by alternating projections (the within
transformation) and then solves the reduced least-squares problem. By the
Frisch-Waugh-Lovell theorem the coefficients equal those of the full
dummy-variable regression.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import CollinearDesign, EmptyControl, EmptyEventBin, InvalidConfig, NoConvergence
from .panel import PanelDataset

__all__ = [
    "AbsorbedFit",
    "Estimate",
    "EventStudyCurve",
    "RegressionProblem",
    "absorb_and_solve",
    "demean",
    "etwfe",
    "sun_abraham",
    "twfe_event_study",
    "twfe_static",
]

DEMEAN_TOL = 1e-10
DEMEAN_MAX_ITER = 10_000


@dataclass(frozen=True)
class Estimate:
    value: float
    label: str

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite estimate for {self.label}")


@dataclass(frozen=True)
class EventStudyCurve:
    """Estimates by event time.

    ``reference`` event times were normalised to zero by construction and are
    included in ``points`` with value ``0.0``. ``in_sample`` marks points
    computed from in-sample residuals rather than held-out contrasts.
    """

    points: dict
    reference: frozenset = frozenset()
    in_sample: frozenset = frozenset()
    label: str = ""

    def e(self) -> np.ndarray:
        return np.array(sorted(self.points), dtype=int)

    def values(self) -> np.ndarray:
        return np.array([self.points[k] for k in sorted(self.points)], dtype=float)

    def __getitem__(self, e: int) -> float:
        return self.points[e]


@dataclass
class RegressionProblem:
    """``response`` on ``regressors`` with the ``absorbed`` factors projected out.

    Each absorbed factor is an integer code array with one entry per row.
    """

    response: np.ndarray
    absorbed: Sequence[np.ndarray]
    regressors: np.ndarray
    names: Sequence | None = None

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=float).ravel()
        x = np.asarray(self.regressors, dtype=float)
        self.regressors = x[:, None] if x.ndim == 1 else x
        self.absorbed = [np.asarray(f).ravel() for f in self.absorbed]
        n = self.response.size
        if self.regressors.shape[0] != n or any(f.size != n for f in self.absorbed):
            raise ValueError("response, regressors and absorbed factors must have the same length")
        if self.names is None:
            self.names = list(range(self.regressors.shape[1]))


@dataclass
class AbsorbedFit:
    coef: np.ndarray
    names: list
    n_iter: int
    resid: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.coef.tolist()))


def _indicator(codes: np.ndarray):
    levels, inv = np.unique(codes, return_inverse=True)
    n = codes.size
    s = sp.csr_matrix((np.ones(n), (np.arange(n), inv)), shape=(n, levels.size))
    counts = np.bincount(inv, minlength=levels.size).astype(float)
    return s, s.T.tocsr(), counts


def demean(m: np.ndarray, factors: Sequence[np.ndarray], tol: float = DEMEAN_TOL,
           max_iter: int = DEMEAN_MAX_ITER) -> tuple[np.ndarray, int]:
    """Project the columns of ``m`` off every factor by alternating projections.

    Stops once a full sweep changes no cell by more than ``tol``. A single
    factor needs exactly one sweep. Returns ``(demeaned, n_sweeps)``.
    """
    out = np.array(m, dtype=float, copy=True)
    if out.ndim == 1:
        out = out[:, None]
    if not factors:
        return out, 0
    ops = [_indicator(f) for f in factors]
    for sweep in range(1, max_iter + 1):
        change = 0.0
        for s, st, counts in ops:
            means = (st @ out) / counts[:, None]
            shift = s @ means
            out -= shift
            change = max(change, float(np.abs(shift).max(initial=0.0)))
        if len(ops) == 1 or change < tol:
            return out, sweep
    raise NoConvergence(f"alternating projections did not converge in {max_iter} sweeps", max_iter=max_iter)


def absorb_and_solve(problem: RegressionProblem, tol: float = DEMEAN_TOL,
                     max_iter: int = DEMEAN_MAX_ITER) -> AbsorbedFit:
    """Coefficients on ``problem.regressors`` after absorbing the fixed effects.

    Raises :class:`CollinearDesign` if some regressor is (numerically) a
    linear combination of the others once the fixed effects are removed.
    """
    stacked = np.column_stack([problem.response, problem.regressors])
    tilde, n_iter = demean(stacked, problem.absorbed, tol, max_iter)
    yt, xt = tilde[:, 0], tilde[:, 1:]
    k = xt.shape[1]
    if k == 0:
        return AbsorbedFit(np.zeros(0), [], n_iter, yt)
    gram = xt.T @ xt
    raw_norm = np.sqrt((problem.regressors ** 2).sum(axis=0))
    tilde_norm = np.sqrt(np.diag(gram))
    ok = tilde_norm > 1e-9 * np.maximum(raw_norm, 1.0)
    if ok.all():
        scaled = gram / np.outer(tilde_norm, tilde_norm)
        ok = np.linalg.eigvalsh(scaled)[0] > 1e-11
    if not np.all(ok):
        _raise_collinear(xt, problem.names, raw_norm)
    coef = scipy.linalg.solve(gram, xt.T @ yt, assume_a="pos")
    return AbsorbedFit(coef, list(problem.names), n_iter, yt - xt @ coef)


def _raise_collinear(xt, names, raw_norm):
    _, r, piv = scipy.linalg.qr(xt, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    scale = max(float(raw_norm.max(initial=0.0)), 1.0)
    rank = int((diag > 1e-7 * scale).sum())
    bad = [names[j] for j in piv[rank:]] or [names[piv[-1]]]
    raise CollinearDesign(
        f"{len(bad)} regressor(s) collinear with the absorbed effects or each other: {bad[:5]}",
        columns=bad,
    )


# panel helpers


def _long(panel: PanelDataset):
    n, t = panel.y.shape
    unit = np.repeat(np.arange(n), t)
    period = np.tile(np.arange(t), n)
    return panel.y.ravel(), unit, period


def _cell_dummies(n_units: int, n_periods: int, cells: list[tuple[np.ndarray, int]]) -> np.ndarray:
    """Dense dummy matrix; column k is one on rows ``(unit in rows_k, period t_k)``."""
    x = np.zeros((n_units * n_periods, len(cells)))
    for k, (rows, t) in enumerate(cells):
        x[rows * n_periods + (t - 1), k] = 1.0
    return x


def _drop_always_treated(panel: PanelDataset) -> PanelDataset:
    keep = panel.cohort != 1
    if keep.all():
        return panel
    return PanelDataset(panel.units[keep], panel.periods, panel.y[keep], panel.d[keep])


def twfe_static(panel: PanelDataset) -> Estimate:
    """Single-indicator TWFE: ``y`` on ``d`` with unit and period effects absorbed."""
    d = panel.d.astype(float)
    if d.all() or not d.any():
        raise CollinearDesign("need both treated and untreated cells")
    y, unit, period = _long(panel)
    fit = absorb_and_solve(RegressionProblem(y, [unit, period], d.ravel(), ["d"]))
    return Estimate(float(fit.coef[0]), "twfe")


def twfe_event_study(panel: PanelDataset, max_lead: int | None = None,
                     max_lag: int | None = None) -> EventStudyCurve:
    """Event-time TWFE with ``e = -1`` omitted and never-treated units as baseline.

    Leads below ``-max_lead`` and lags above ``max_lag`` are binned into the
    endpoint dummies. ``None`` uses the full observed range (no binning).
    """
    if max_lead is not None and max_lead < 1 or max_lag is not None and max_lag < 1:
        raise InvalidConfig("max_lead and max_lag must be >= 1")
    rel = panel.relative_time()
    treated_rows = panel.ever_treated
    if not treated_rows.any():
        raise EmptyEventBin("panel has no treated units")
    e_obs = rel[treated_rows]
    lo = int(np.nanmin(e_obs)) if max_lead is None else -max_lead
    hi = int(np.nanmax(e_obs)) if max_lag is None else max_lag
    binned = np.clip(rel, lo, hi)
    wanted = [e for e in range(lo, hi + 1) if e != -1]
    present = set(np.unique(binned[treated_rows]).astype(int).tolist())
    for e in wanted:
        if e not in present:
            raise EmptyEventBin(f"no observations at event time {e}", e=e)
    flat = binned.ravel()
    x = np.column_stack([(flat == e).astype(float) for e in wanted]) if wanted else np.zeros((flat.size, 0))
    y, unit, period = _long(panel)
    fit = absorb_and_solve(RegressionProblem(y, [unit, period], x, wanted))
    points = dict(zip(wanted, fit.coef.tolist()))
    points[-1] = 0.0
    return EventStudyCurve(dict(sorted(points.items())), frozenset({-1}), label="twfe-es")


@dataclass(frozen=True)
class CohortResult:
    """Cohort-level coefficients plus their frequency-weighted summaries."""

    cells: dict
    curve: EventStudyCurve
    overall: Estimate


def _weighted_summaries(cells: dict, sizes: dict, label: str, reference=frozenset()) -> tuple:
    by_e: dict[int, list] = {}
    post_num = post_den = 0.0
    for (g, e), v in cells.items():
        w = sizes[g]
        by_e.setdefault(e, []).append((w, v))
        if e >= 0:
            post_num += w * v
            post_den += w
    points = {e: float(sum(w * v for w, v in lst) / sum(w for w, _ in lst)) for e, lst in by_e.items()}
    for e in reference:
        points[e] = 0.0
    curve = EventStudyCurve(dict(sorted(points.items())), frozenset(reference), label=label)
    return curve, Estimate(post_num / post_den, label)


def sun_abraham(panel: PanelDataset, control: str = "never") -> CohortResult:
    """Interacted (cohort x event-time) TWFE, reference ``e = -1``.

    ``control="never"`` uses never-treated units as the omitted group;
    ``control="last"`` drops never-treated units, uses the last-treated cohort
    as control and keeps only periods before it is treated. ``cells`` maps
    ``(g, e)`` to the cohort-specific coefficient; the curve and the overall
    estimate weight cohorts by their size among the cohorts observed at each
    event time.
    """
    panel = _drop_always_treated(panel)
    cohorts = panel.cohorts.tolist()
    T = panel.n_periods
    if control in ("never", "never_treated"):
        if not panel.has_never_treated:
            raise EmptyControl("no never-treated units")
        sub, last_t = panel, T
    elif control in ("last", "lasttreated", "last_treated"):
        if len(cohorts) < 2:
            raise EmptyControl("need at least two treated cohorts to use the last one as control")
        g_last = cohorts[-1]
        keep = panel.cohort > 0
        sub = PanelDataset(panel.units[keep], panel.periods[: g_last - 1],
                           panel.y[keep, : g_last - 1], panel.d[keep, : g_last - 1])
        cohorts = cohorts[:-1]
        last_t = g_last - 1
    else:
        raise InvalidConfig(f"unknown control {control!r}")
    if not cohorts:
        raise EmptyControl("no treated cohort left to estimate")

    cells, names, sizes = [], [], {}
    for g in cohorts:
        rows = np.flatnonzero(sub.cohort == g)
        sizes[g] = rows.size
        for t in range(1, last_t + 1):
            if t != g - 1:
                cells.append((rows, t))
                names.append((g, t - g))
    x = _cell_dummies(sub.n_units, sub.n_periods, cells)
    y, unit, period = _long(sub)
    fit = absorb_and_solve(RegressionProblem(y, [unit, period], x, names))
    coef = fit.as_dict()
    curve, overall = _weighted_summaries(coef, sizes, "sa", reference={-1})
    return CohortResult(coef, curve, overall)


def etwfe(panel: PanelDataset) -> CohortResult:
    """Extended TWFE: cohort and period effects plus cohort x period post-treatment dummies.

    ``cells`` maps ``(g, t)`` to the interaction coefficient for every treated
    cohort and ``t >= g``. Marginal summaries weight cohorts by size, so the
    overall value is the mean over treated cells. No pre-treatment (placebo)
    coefficients exist in this specification.
    """
    panel = _drop_always_treated(panel)
    if not panel.has_never_treated:
        raise EmptyControl("ETWFE needs never-treated units as baseline")
    T = panel.n_periods
    cells, names, sizes = [], [], {}
    for g in panel.cohorts.tolist():
        rows = np.flatnonzero(panel.cohort == g)
        sizes[g] = rows.size
        for t in range(g, T + 1):
            cells.append((rows, t))
            names.append((g, t))
    x = _cell_dummies(panel.n_units, T, cells)
    y, _, period = _long(panel)
    cohort_code = np.repeat(panel.cohort, T)
    fit = absorb_and_solve(RegressionProblem(y, [cohort_code, period], x, names))
    gt = fit.as_dict()
    curve, overall = _weighted_summaries({(g, t - g): v for (g, t), v in gt.items()}, sizes, "etwfe")
    return CohortResult(gt, curve, overall)
