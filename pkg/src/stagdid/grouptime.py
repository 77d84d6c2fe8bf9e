"""Group-time ATTs, their aggregation, the Goodman-Bacon decomposition and placebo reporting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyCohort, EmptyControl, InvalidConfig, SingleTimingGroup
from .fe import Estimate, EventStudyCurve, twfe_static
from .panel import PanelDataset

__all__ = [
    "BaconComparison",
    "BaconDecomposition",
    "GroupTimeEffect",
    "PretrendSummary",
    "aggregate_gt",
    "att_gt",
    "bacon_decompose",
    "callaway_santanna",
    "pretrend_report",
]

CONTROLS = ("never", "notyet", "both")


@dataclass(frozen=True)
class GroupTimeEffect:
    g: int
    t: int
    value: float
    control: str
    base_period: int
    n_treated: int
    n_control: int

    @property
    def e(self) -> int:
        return self.t - self.g


def _control_rows(cohort: np.ndarray, g: int, t: int, base: int, control: str, anticipation: int) -> np.ndarray:
    never = cohort == 0
    notyet = (cohort > max(t, base) + anticipation) & (cohort != g)
    if control == "never":
        return never
    if control == "notyet":
        return notyet
    if control == "both":
        return never | notyet
    raise InvalidConfig(f"unknown control group {control!r}; expected one of {CONTROLS}")


def att_gt(panel: PanelDataset, g: int, t: int, control: str = "never",
           base_period: int | None = None, anticipation: int = 0) -> GroupTimeEffect:
    """Two-group, two-period DiD of cohort ``g`` between ``base_period`` and ``t``.

    ``base_period`` defaults to ``g - 1 - anticipation``. For ``t < g`` the same
    contrast is a pre-treatment placebo. The not-yet-treated control keeps
    cohorts first treated after both ``t`` and the base period (shifted by
    ``anticipation``).
    """
    base = g - 1 - anticipation if base_period is None else base_period
    if not 1 <= base < g or not 1 <= t <= panel.n_periods:
        raise InvalidConfig(f"invalid periods: g={g}, t={t}, base={base}")
    treated = panel.cohort == g
    if not treated.any():
        raise EmptyCohort(f"no units in cohort {g}", g=g)
    ctrl = _control_rows(panel.cohort, g, t, base, control, anticipation)
    if not ctrl.any():
        raise EmptyControl(f"no {control} control units for (g={g}, t={t})", g=g, t=t)
    y = panel.y
    dg = y[treated, t - 1].mean() - y[treated, base - 1].mean()
    dc = y[ctrl, t - 1].mean() - y[ctrl, base - 1].mean()
    return GroupTimeEffect(g, t, float(dg - dc), control, base, int(treated.sum()), int(ctrl.sum()))


def callaway_santanna(panel: PanelDataset, control: str = "never", anticipation: int = 0,
                      skip_empty: bool = True) -> list[GroupTimeEffect]:
    """Every estimable ``att_gt`` cell (post-treatment and placebo), base ``g - 1 - anticipation``.

    Uses cohort-level sums, so the full grid costs one pass over the panel.
    Cells whose control group is empty are skipped (``skip_empty``) or raise.
    """
    if control not in CONTROLS:
        raise InvalidConfig(f"unknown control group {control!r}; expected one of {CONTROLS}")
    T = panel.n_periods
    levels = np.unique(panel.cohort)
    sums = np.stack([panel.y[panel.cohort == c].sum(axis=0) for c in levels])
    sizes = np.array([(panel.cohort == c).sum() for c in levels])
    out = []
    for g in panel.cohorts.tolist():
        base = g - 1 - anticipation
        if base < 1:
            continue
        gi = int(np.searchsorted(levels, g))
        mean_g = sums[gi] / sizes[gi]
        for t in range(1, T + 1):
            if t == base:
                continue
            sel = _control_rows(levels, g, t, base, control, anticipation)
            n_c = int(sizes[sel].sum())
            if n_c == 0:
                if skip_empty:
                    continue
                raise EmptyControl(f"no {control} control units for (g={g}, t={t})", g=g, t=t)
            mean_c = sums[sel].sum(axis=0) / n_c
            v = (mean_g[t - 1] - mean_g[base - 1]) - (mean_c[t - 1] - mean_c[base - 1])
            out.append(GroupTimeEffect(g, t, float(v), control, base, int(sizes[gi]), n_c))
    return out


def aggregate_gt(effects: Iterable[GroupTimeEffect], scheme: str = "overall"):
    """Cohort-size weighted summaries of group-time effects.

    ``"overall"``: weighted mean of post-treatment cells (``t >= g``) only.
    ``"event_study"``: weighted mean at each ``e = t - g`` including placebo
    cells; the base-period event time is a zero reference point.
    """
    effects = list(effects)
    if not effects:
        raise ValueError("no group-time effects to aggregate")
    label = "cs"
    if scheme == "overall":
        post = [ef for ef in effects if ef.t >= ef.g]
        if not post:
            raise ValueError("no post-treatment group-time effects")
        w = np.array([ef.n_treated for ef in post], dtype=float)
        v = np.array([ef.value for ef in post])
        return Estimate(float(w @ v / w.sum()), label)
    if scheme != "event_study":
        raise ValueError(f"unknown aggregation scheme {scheme!r}")
    num: dict[int, float] = {}
    den: dict[int, float] = {}
    for ef in effects:
        num[ef.e] = num.get(ef.e, 0.0) + ef.n_treated * ef.value
        den[ef.e] = den.get(ef.e, 0.0) + ef.n_treated
    points = {e: num[e] / den[e] for e in num}
    refs = {ef.base_period - ef.g for ef in effects}
    for e in refs:
        points.setdefault(e, 0.0)
    refs = frozenset(e for e in refs if e not in num)
    return EventStudyCurve(dict(sorted(points.items())), refs, label=label)


# Goodman-Bacon decomposition


@dataclass(frozen=True)
class BaconComparison:
    kind: str  # "treated_vs_never" | "early_vs_late_pre" | "late_vs_early_post"
    treat_g: int
    ctrl_g: int | None
    did: float
    weight: float

    @property
    def forbidden(self) -> bool:
        return self.kind == "late_vs_early_post"


@dataclass(frozen=True)
class BaconDecomposition:
    comparisons: list
    twfe: float

    @property
    def reconstruction(self) -> float:
        return float(sum(c.weight * c.did for c in self.comparisons))

    @property
    def forbidden_weight(self) -> float:
        return float(sum(c.weight for c in self.comparisons if c.forbidden))

    def weight_by_kind(self) -> dict:
        out: dict[str, float] = {}
        for c in self.comparisons:
            out[c.kind] = out.get(c.kind, 0.0) + c.weight
        return out


def _twoway_var(d: np.ndarray) -> float:
    dd = d - d.mean(axis=1, keepdims=True) - d.mean(axis=0, keepdims=True) + d.mean()
    return float((dd * dd).mean())


def _two_group_did(y_t, y_c, post_mask):
    """DiD of window means; ``post_mask`` selects the switching group's treated periods."""
    pre = ~post_mask
    return (y_t[post_mask].mean() - y_t[pre].mean()) - (y_c[post_mask].mean() - y_c[pre].mean())


def bacon_decompose(panel: PanelDataset) -> BaconDecomposition:
    """Split the static TWFE coefficient into all two-group DiD comparisons.

    Each comparison uses one pair of timing groups over the window in which
    exactly one of them switches into treatment. Its weight is proportional to
    ``(unit share x window share)^2`` times the variance of the two-way demeaned
    treatment indicator inside that subsample; weights are normalised to one.
    """
    N, T = panel.y.shape
    cohorts = panel.cohorts.tolist()
    has_never = panel.has_never_treated
    if not cohorts:
        raise SingleTimingGroup("panel has no treated units")
    if len(cohorts) == 1 and not has_never:
        raise SingleTimingGroup("one timing group and no never-treated units: nothing to compare")

    group_mean = {g: panel.y[panel.cohort == g].mean(axis=0) for g in cohorts}
    size = {g: int((panel.cohort == g).sum()) for g in cohorts}
    if has_never:
        group_mean[0] = panel.y[panel.cohort == 0].mean(axis=0)
        size[0] = int((panel.cohort == 0).sum())
    t = np.arange(1, T + 1)

    raw = []

    def add(kind, g_t, g_c, lo, hi):
        window = (t >= lo) & (t <= hi)
        post = t[window] >= g_t
        if post.all() or not post.any():
            return
        n_t, n_c = size[g_t], size[g_c]
        d = np.zeros((n_t + n_c, window.sum()))
        d[:n_t] = post
        if g_c:
            d[n_t:] = t[window] >= g_c
        s = ((n_t + n_c) / N * window.sum() / T) ** 2 * _twoway_var(d)
        did = _two_group_did(group_mean[g_t][window], group_mean[g_c][window], post)
        raw.append((kind, g_t, g_c if g_c else None, float(did), float(s)))

    for g in cohorts:
        if has_never:
            add("treated_vs_never", g, 0, 1, T)
    for a, k in enumerate(cohorts):
        for l in cohorts[a + 1:]:
            add("early_vs_late_pre", k, l, 1, l - 1)
            add("late_vs_early_post", l, k, k, T)
    total = sum(r[-1] for r in raw)
    comps = [BaconComparison(kind, gt, gc, did, float(s / total)) for kind, gt, gc, did, s in raw]
    return BaconDecomposition(comps, twfe_static(panel).value)


# placebo reporting


@dataclass(frozen=True)
class PretrendSummary:
    estimator: str
    applicable: bool
    mean_pre: float = float("nan")
    max_abs_pre: float = float("nan")
    flagged: bool = False
    worst_e: int | None = None
    worst_z: float = float("nan")


def pretrend_report(curves: Mapping[str, Sequence[EventStudyCurve]], z_crit: float = 3.0,
                    min_e: int | None = None) -> dict:
    """Placebo summary per estimator from event-study curves across replications.

    Only event times ``e < -1`` (and ``>= min_e`` if given) enter. An estimator
    is flagged when the across-replication mean at some such ``e`` is more
    than ``z_crit`` Monte Carlo standard errors (``sd / sqrt(R)``) from zero.
    Estimators without pre-treatment points are reported as not applicable.
    """
    out = {}
    for name, reps in curves.items():
        reps = list(reps)
        es = sorted({e for c in reps for e in c.points if e < -1 and (min_e is None or e >= min_e)
                     and e not in c.reference})
        if not es:
            out[name] = PretrendSummary(name, applicable=False)
            continue
        means, zs = [], []
        for e in es:
            vals = np.array([c.points[e] for c in reps if e in c.points])
            m = float(vals.mean())
            se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else float("nan")
            means.append(m)
            zs.append(abs(m) / se if se > 0 else (np.inf if m != 0 else 0.0))
        zs_arr = np.nan_to_num(np.array(zs), nan=0.0)
        k = int(np.argmax(zs_arr))
        out[name] = PretrendSummary(
            name,
            applicable=True,
            mean_pre=float(np.mean(means)),
            max_abs_pre=float(np.max(np.abs(means))),
            flagged=bool(zs_arr[k] > z_crit),
            worst_e=int(es[k]),
            worst_z=float(zs_arr[k]),
        )
    return out
