"""Counterfactual imputation: additive two-way control model and nuclear-norm matrix completion.

Both estimators treat the untreated cells ``O = {(i, t): d[i, t] == 0}`` as the
observed part of the ``Y(0)`` matrix, fill in the treated cells and read the
effects off as ``y - Y_hat(0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, NonFiniteInput, UnidentifiedPeriod, UnidentifiedUnit
from .fe import Estimate, EventStudyCurve
from .panel import PanelDataset

__all__ = [
    "CellEffects",
    "ControlModel",
    "CVResult",
    "McConfig",
    "McResult",
    "SoftImputeResult",
    "aggregate_effects",
    "bjs",
    "cross_validate_lambda",
    "fit_control_model",
    "impute_effects",
    "lambda_max",
    "masked_twoway",
    "mc_effects",
    "soft_impute",
]


def masked_twoway(r: np.ndarray, mask: np.ndarray, strict: bool = True):
    """Least-squares ``r[i, t] ~ a_i + z_t`` using only cells where ``mask`` is true.

    The unit effects are eliminated analytically, leaving a ``T x T`` system
    for the period effects, which is solved under ``mean(z) = 0``. With
    ``strict=False`` units or periods without observed cells get ``NaN``
    instead of raising.
    """
    m = mask.astype(float)
    n_i = m.sum(axis=1)
    n_t = m.sum(axis=0)
    if strict:
        if (n_i == 0).any():
            i = int(np.flatnonzero(n_i == 0)[0])
            raise UnidentifiedUnit(f"unit row {i} has no untreated cell", row=i)
        if (n_t == 0).any():
            t = int(np.flatnonzero(n_t == 0)[0]) + 1
            raise UnidentifiedPeriod(f"period {t} has no untreated cell", period=t)
    rows = n_i > 0
    cols = n_t > 0
    rm = np.where(mask, r, 0.0)
    inv_n = np.zeros_like(n_i)
    inv_n[rows] = 1.0 / n_i[rows]
    rbar = rm.sum(axis=1) * inv_n
    b = (rm - m * rbar[:, None]).sum(axis=0)[cols]
    mc = m[:, cols]
    a_mat = np.diag(n_t[cols]) - mc.T @ (mc * inv_n[:, None])
    k = a_mat.shape[0]
    zeta_c = np.linalg.solve(a_mat + np.ones((k, k)) / k, b)
    zeta = np.full(r.shape[1], np.nan)
    zeta[cols] = zeta_c - zeta_c.mean()
    alpha = np.full(r.shape[0], np.nan)
    zm = np.where(mask, zeta[None, :], 0.0)
    alpha[rows] = rbar[rows] - zm[rows].sum(axis=1) * inv_n[rows]
    return alpha, zeta


@dataclass(frozen=True)
class ControlModel:
    """Additive untreated-outcome model ``alpha_i + zeta_t`` fitted on untreated cells.

    Identified up to a constant; normalised so the period effects average zero.
    """

    unit_effects: np.ndarray
    period_effects: np.ndarray
    normalization: str = "mean(period_effects) == 0"

    def fitted(self) -> np.ndarray:
        return self.unit_effects[:, None] + self.period_effects[None, :]


def fit_control_model(panel: PanelDataset) -> ControlModel:
    """Fit ``y = alpha_i + zeta_t`` on the untreated cells only."""
    mask = panel.d == 0
    alpha, zeta = masked_twoway(panel.y, mask, strict=True)
    return ControlModel(alpha, zeta)


@dataclass(frozen=True, eq=False)
class CellEffects:
    """Per-cell effect estimates on treated cells (``NaN`` elsewhere).

    ``residuals`` holds the untreated-model residuals on untreated cells, used
    for the in-sample pre-treatment points of event-study summaries.
    """

    values: np.ndarray
    treated: np.ndarray
    rel_time: np.ndarray
    estimator: str
    residuals: np.ndarray | None = field(default=None, repr=False)

    def cells(self) -> np.ndarray:
        return self.values[self.treated]


def _cell_effects(panel: PanelDataset, y0_hat: np.ndarray, estimator: str) -> CellEffects:
    treated = panel.d.astype(bool)
    values = np.where(treated, panel.y - y0_hat, np.nan)
    resid = np.where(~treated, panel.y - y0_hat, np.nan)
    return CellEffects(values, treated, panel.relative_time(), estimator, resid)


def impute_effects(panel: PanelDataset, cm: ControlModel) -> CellEffects:
    """``delta[i, t] = y[i, t] - (alpha_i + zeta_t)`` on every treated cell."""
    return _cell_effects(panel, cm.fitted(), "bjs")


def aggregate_effects(ce: CellEffects, scheme: str = "overall", max_lead: int | None = None):
    """Summaries of per-cell effects.

    ``"overall"`` gives the uniform-weight ATT (mean over treated cells) as an
    :class:`Estimate`. ``"event_time"`` gives an :class:`EventStudyCurve` with
    the mean effect at each ``e >= 0`` and, when residuals are available, the
    mean untreated-model residual of ever-treated units at each pre-treatment
    ``e`` (down to ``-max_lead``), flagged as in-sample.
    """
    cells = ce.cells()
    if cells.size == 0:
        raise ValueError("no treated cells to aggregate")
    if scheme == "overall":
        return Estimate(float(cells.mean()), ce.estimator)
    if scheme != "event_time":
        raise ValueError(f"unknown aggregation scheme {scheme!r}")
    e_post = ce.rel_time[ce.treated].astype(int)
    points = _group_mean(e_post, cells)
    in_sample = set()
    if ce.residuals is not None:
        pre = (~ce.treated) & np.isfinite(ce.rel_time) & np.isfinite(ce.residuals)
        e_pre = ce.rel_time[pre].astype(int)
        keep = e_pre >= -max_lead if max_lead is not None else np.ones(e_pre.shape, bool)
        pre_points = _group_mean(e_pre[keep], ce.residuals[pre][keep])
        points.update(pre_points)
        in_sample = set(pre_points)
    return EventStudyCurve(dict(sorted(points.items())), frozenset(), frozenset(in_sample), ce.estimator)


def _group_mean(keys: np.ndarray, vals: np.ndarray) -> dict:
    if keys.size == 0:
        return {}
    lo = keys.min()
    sums = np.bincount(keys - lo, weights=vals)
    counts = np.bincount(keys - lo)
    return {int(lo + k): float(sums[k] / counts[k]) for k in np.flatnonzero(counts)}


def bjs(panel: PanelDataset) -> CellEffects:
    """Three-step imputation estimator (fit on untreated cells, impute, difference)."""
    return impute_effects(panel, fit_control_model(panel))


# matrix completion


@dataclass(frozen=True)
class McConfig:
    """Settings for nuclear-norm matrix completion.

    ``lambda_grid=None`` builds ``n_lambda`` log-spaced values from
    ``lambda_max`` down to ``lambda_max * lambda_ratio``.
    """

    lambda_grid: tuple | None = None
    n_lambda: int = 50
    lambda_ratio: float = 1e-3
    folds: int = 5
    tol: float = 1e-9
    max_iter: int = 10_000
    fixed_effects: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lambda_grid is not None:
            grid = tuple(float(v) for v in self.lambda_grid)
            if not grid or min(grid) <= 0:
                raise ValueError("lambda grid must be non-empty and strictly positive")
            object.__setattr__(self, "lambda_grid", tuple(sorted(grid, reverse=True)))
        if self.folds < 2:
            raise ValueError("need at least two folds")
        if self.n_lambda < 1 or not 0 < self.lambda_ratio < 1:
            raise ValueError("invalid automatic lambda grid settings")


@dataclass(frozen=True, eq=False)
class SoftImputeResult:
    low_rank: np.ndarray
    unit_effects: np.ndarray
    period_effects: np.ndarray
    objective: np.ndarray
    n_iter: int
    nuclear_norm: float

    def fitted(self) -> np.ndarray:
        fit = self.low_rank.copy()
        if self.unit_effects is not None:
            fit += self.unit_effects[:, None] + self.period_effects[None, :]
        return fit


def _svt(a: np.ndarray, thresh: float):
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    s = np.maximum(s - thresh, 0.0)
    k = int((s > 0).sum())
    return (u[:, :k] * s[:k]) @ vt[:k], float(s.sum())


def _fe(r, mask, fixed_effects):
    if not fixed_effects:
        return np.zeros(r.shape[0]), np.zeros(r.shape[1])
    return masked_twoway(r, mask, strict=False)


def _additive(alpha, zeta):
    return alpha[:, None] + zeta[None, :]


def lambda_max(y: np.ndarray, mask: np.ndarray, fixed_effects: bool = True) -> float:
    """Smallest penalty at which the low-rank part is shrunk to exactly zero."""
    alpha, zeta = _fe(y, mask, fixed_effects)
    r = np.where(mask, y - _additive(alpha, zeta), 0.0)
    return 2.0 * float(np.linalg.norm(r, 2)) / mask.sum()


def soft_impute(y: np.ndarray, mask: np.ndarray, lam: float, cfg: McConfig = McConfig(),
                warm_start: np.ndarray | None = None) -> SoftImputeResult:
    """Minimise ``mean_O (y - L - alpha_i - zeta_t)^2 + lam * ||L||_*``.

    Alternates a singular-value soft-thresholding step on the residual matrix
    (unobserved cells filled with the current ``L``) with an exact refit of
    the unpenalised unit and period effects on the observed cells. Each step
    minimises a majorizer of the objective, so the recorded objective never
    increases. Stops when the decrease falls below ``cfg.tol``.
    """
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not np.isfinite(y[mask]).all():
        raise NonFiniteInput("observed cells contain non-finite values")
    n_obs = int(mask.sum())
    if n_obs == 0:
        raise ValueError("mask has no observed cells")
    y = np.where(mask, y, 0.0)
    low = np.zeros_like(y) if warm_start is None else np.array(warm_start, dtype=float)
    alpha, zeta = _fe(y - low, mask, cfg.fixed_effects)
    thresh = lam * n_obs / 2.0

    def objective(low, alpha, zeta, nuc):
        r = np.where(mask, y - low - _additive(alpha, zeta), 0.0)
        return float((r * r).sum()) / n_obs + lam * nuc

    nuc = float(np.linalg.svd(low, compute_uv=False).sum()) if warm_start is not None else 0.0
    trace = [objective(low, alpha, zeta, nuc)]
    for it in range(1, cfg.max_iter + 1):
        fit = _additive(alpha, zeta)
        target = np.where(mask, y - np.nan_to_num(fit), low)
        low, nuc = _svt(target, thresh)
        alpha, zeta = _fe(y - low, mask, cfg.fixed_effects)
        trace.append(objective(low, alpha, zeta, nuc))
        if trace[-2] - trace[-1] < cfg.tol:
            return SoftImputeResult(low, alpha if cfg.fixed_effects else None,
                                    zeta if cfg.fixed_effects else None, np.array(trace), it, nuc)
    raise NoConvergence(f"soft-impute did not converge in {cfg.max_iter} iterations", max_iter=cfg.max_iter)


def lambda_grid(y, mask, cfg: McConfig) -> np.ndarray:
    if cfg.lambda_grid is not None:
        return np.array(cfg.lambda_grid)
    top = lambda_max(y, mask, cfg.fixed_effects)
    return np.geomspace(top, top * cfg.lambda_ratio, cfg.n_lambda)


@dataclass(frozen=True)
class CVResult:
    lambda_star: float
    grid: np.ndarray
    cv_error: np.ndarray


def cross_validate_lambda(y: np.ndarray, mask: np.ndarray, cfg: McConfig = McConfig(),
                          rng=None) -> CVResult:
    """Pick the penalty minimising mean held-out squared error over ``cfg.folds`` folds.

    Observed cells are split at random into folds; along the (descending)
    grid each fit is warm-started from the previous one. Held-out cells whose
    unit or period has no training cell are not scored. Ties resolve to the
    larger penalty.
    """
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    grid = lambda_grid(y, mask, cfg)
    if grid.size == 1:
        return CVResult(float(grid[0]), grid, np.full(1, np.nan))
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    obs = np.flatnonzero(mask.ravel())
    fold_of = np.empty(obs.size, dtype=int)
    fold_of[rng.permutation(obs.size)] = np.arange(obs.size) % cfg.folds
    err = np.zeros(grid.size)
    for k in range(cfg.folds):
        held = np.zeros(mask.size, dtype=bool)
        held[obs[fold_of == k]] = True
        held = held.reshape(mask.shape)
        train = mask & ~held
        low = None
        for j, lam in enumerate(grid):
            res = soft_impute(y, train, lam, cfg, warm_start=low)
            low = res.low_rank
            pred = res.fitted()
            diff = (y - pred)[held]
            ok = np.isfinite(diff)
            err[j] += float(np.mean(diff[ok] ** 2)) / cfg.folds
    return CVResult(float(grid[int(np.argmin(err))]), grid, err)


@dataclass(frozen=True, eq=False)
class McResult:
    effects: CellEffects
    lambda_star: float
    fit: SoftImputeResult
    cv: CVResult


def mc_effects(panel: PanelDataset, cfg: McConfig = McConfig(), rng=None) -> McResult:
    """Matrix-completion effects ``y - (L + alpha_i + zeta_t)`` on treated cells.

    The penalty is chosen by :func:`cross_validate_lambda`; the final fit
    follows the grid from the top down to the selected value with warm starts.
    """
    y = panel.y
    mask = panel.d == 0
    if cfg.fixed_effects:
        masked_twoway(y, mask, strict=True)  # identification check
    cv = cross_validate_lambda(y, mask, cfg, rng)
    low = None
    for lam in cv.grid[cv.grid >= cv.lambda_star]:
        res = soft_impute(y, mask, lam, cfg, warm_start=low)
        low = res.low_rank
    ce = _cell_effects(panel, res.fitted(), "mc")
    return McResult(ce, cv.lambda_star, res, cv)
