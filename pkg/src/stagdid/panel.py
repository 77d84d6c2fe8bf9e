"""Balanced unit-by-period panels with absorbing (staggered) treatment.

Conventions used throughout the package
---------------------------------------
* Periods are the integers ``1..T``.
* A unit's cohort ``g`` is the FIRST period in which ``d == 1``; never-treated
  units carry ``g = 0`` in array form and :data:`NEVER_TREATED` as a label.
* Event time is ``e = t - g``; ``e = 0`` is the first treated period and
  ``e = -1`` the last untreated one.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateCell,
    NonAbsorbingTreatment,
    NotApplicable,
    PanelError,
    UnbalancedPanel,
)

__all__ = [
    "CohortLabel",
    "NEVER_TREATED",
    "PanelDataset",
    "derive_cohorts",
    "event_time",
    "read_panel_csv",
    "validate_panel",
    "write_panel_csv",
]


@dataclass(frozen=True, order=True)
class CohortLabel:
    """Treatment cohort of a unit: ``Treated(g)`` or ``NeverTreated`` (``g is None``)."""

    g: int | None = None

    @property
    def is_treated(self) -> bool:
        return self.g is not None

    def __repr__(self) -> str:
        return "NeverTreated" if self.g is None else f"Treated({self.g})"


NEVER_TREATED = CohortLabel(None)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Rectangular panel ``y[i, t]`` / ``d[i, t]``; rows follow ``units``, columns ``periods``.

    Instances are immutable (arrays are flagged read-only). Build them through
    :func:`validate_panel` or :meth:`from_arrays`, both of which enforce the
    balance and absorbing-treatment invariants.
    """

    units: np.ndarray
    periods: np.ndarray
    y: np.ndarray
    d: np.ndarray
    cohort: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "units", _readonly(self.units))
        object.__setattr__(self, "periods", _readonly(np.asarray(self.periods, dtype=np.int64)))
        object.__setattr__(self, "y", _readonly(np.asarray(self.y, dtype=np.float64)))
        object.__setattr__(self, "d", _readonly(np.asarray(self.d, dtype=np.int8)))
        _check_arrays(self.units, self.periods, self.y, self.d)
        treated_any = self.d.any(axis=1)
        first = np.where(treated_any, self.d.argmax(axis=1) + 1, 0)
        object.__setattr__(self, "cohort", _readonly(first.astype(np.int64)))

    @classmethod
    def from_arrays(cls, y, d, units: Sequence[Hashable] | None = None) -> "PanelDataset":
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2:
            raise PanelError("outcome must be a 2-d (unit x period) array")
        n, t = y.shape
        if units is None:
            units = np.arange(1, n + 1)
        return cls(np.asarray(units), np.arange(1, t + 1), y, d)

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def ever_treated(self) -> np.ndarray:
        return self.cohort > 0

    @property
    def cohorts(self) -> np.ndarray:
        """Sorted distinct treated cohorts (never-treated excluded)."""
        return np.unique(self.cohort[self.cohort > 0])

    @property
    def has_never_treated(self) -> bool:
        return bool((self.cohort == 0).any())

    def relative_time(self) -> np.ndarray:
        """``t - g`` for every cell as floats, NaN for never-treated rows."""
        rel = self.periods[None, :].astype(float) - self.cohort[:, None]
        rel[self.cohort == 0] = np.nan
        return rel

    def to_rows(self) -> list[tuple]:
        rows = []
        for i, u in enumerate(self.units.tolist()):
            for j, t in enumerate(self.periods.tolist()):
                rows.append((u, t, float(self.y[i, j]), int(self.d[i, j])))
        return rows

    def with_outcome(self, y) -> "PanelDataset":
        """Same design, different outcome matrix."""
        return PanelDataset(self.units, self.periods, y, self.d)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PanelDataset):
            return NotImplemented
        return (
            np.array_equal(self.units, other.units)
            and np.array_equal(self.periods, other.periods)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.d, other.d)
        )

    def __repr__(self) -> str:
        return (
            f"PanelDataset(N={self.n_units}, T={self.n_periods}, "
            f"treated_units={int(self.ever_treated.sum())}, cohorts={self.cohorts.tolist()})"
        )


def _check_arrays(units, periods, y, d):
    n, t = y.shape if y.ndim == 2 else (None, None)
    if y.ndim != 2 or d.shape != y.shape:
        raise PanelError("y and d must be 2-d arrays of identical shape")
    if n == 0 or t == 0:
        raise PanelError("panel is empty")
    if len(units) != n or len(periods) != t:
        raise PanelError("units/periods do not match the outcome shape")
    if not np.array_equal(periods, np.arange(1, t + 1)):
        raise PanelError("periods must be the consecutive integers 1..T")
    if len(set(units.tolist())) != n:
        raise DuplicateCell("duplicate unit identifiers")
    if not np.isfinite(y).all():
        raise PanelError("outcome contains non-finite values")
    if not np.isin(d, (0, 1)).all():
        raise PanelError("treatment must be coded 0/1")
    steps = np.diff(d.astype(np.int16), axis=1)
    bad = np.flatnonzero((steps < 0).any(axis=1))
    if bad.size:
        raise NonAbsorbingTreatment(
            f"treatment switches off for unit {units[bad[0]]!r}; reversal designs are not supported",
            units=units[bad].tolist(),
        )


def validate_panel(rows: Iterable[tuple]) -> PanelDataset:
    """Build a :class:`PanelDataset` from ``(unit, period, y, d)`` rows.

    Row order is irrelevant. Raises :class:`DuplicateCell` for repeated
    ``(unit, period)`` keys, :class:`UnbalancedPanel` when some pair is
    missing and :class:`NonAbsorbingTreatment` for reversal paths.
    """
    cells: dict[tuple, tuple[float, int]] = {}
    for row in rows:
        if len(row) != 4:
            raise PanelError(f"expected (unit, period, y, d) rows, got {row!r}")
        unit, period, yv, dv = row
        period = _as_int(period, "period")
        key = (unit, period)
        if key in cells:
            raise DuplicateCell(f"duplicate cell (unit={unit!r}, period={period})", cell=key)
        dv_f = float(dv)
        if dv_f not in (0.0, 1.0):
            raise PanelError(f"treatment must be 0/1, got {dv!r} at {key}")
        cells[key] = (float(yv), int(dv_f))
    if not cells:
        raise PanelError("no rows supplied")

    units = sorted({k[0] for k in cells}, key=_unit_sort_key)
    periods = sorted({k[1] for k in cells})
    n, t = len(units), len(periods)
    if len(cells) != n * t:
        missing = next((u, p) for u in units for p in periods if (u, p) not in cells)
        raise UnbalancedPanel(
            f"{n * t - len(cells)} of {n * t} unit-period cells missing, e.g. {missing}",
            missing=missing,
        )
    if periods != list(range(1, t + 1)):
        raise PanelError(f"periods must be 1..T, got {periods[0]}..{periods[-1]} with gaps or offset")
    y = np.empty((n, t))
    d = np.empty((n, t), dtype=np.int8)
    for i, u in enumerate(units):
        for j, p in enumerate(periods):
            y[i, j], d[i, j] = cells[(u, p)]
    return PanelDataset(np.asarray(units), np.asarray(periods), y, d)


def _as_int(value, name):
    f = float(value)
    if not math.isfinite(f) or f != int(f):
        raise PanelError(f"{name} must be an integer, got {value!r}")
    return int(f)


def _unit_sort_key(u):
    return (0, u, "") if isinstance(u, (int, np.integer)) else (1, 0, str(u))


def derive_cohorts(panel: PanelDataset) -> dict:
    """Map every unit to ``Treated(g)`` (first treated period) or ``NeverTreated``."""
    out = {}
    for u, g in zip(panel.units.tolist(), panel.cohort.tolist()):
        out[u] = CohortLabel(int(g)) if g > 0 else NEVER_TREATED
    return out


def event_time(t: int, g) -> int:
    """Relative treatment timing ``e = t - g``.

    ``g`` may be an int or a :class:`CohortLabel`; never-treated cohorts have no
    event time and raise :class:`NotApplicable`.
    """
    if isinstance(g, CohortLabel):
        g = g.g
    if g is None or g == 0:
        raise NotApplicable("event time is undefined for never-treated units")
    return int(t) - int(g)


# CSV schema: header ``unit,period,y,d``


def write_panel_csv(panel: PanelDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(panel_to_csv(panel))


def panel_to_csv(panel: PanelDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["unit", "period", "y", "d"])
    for u, t, yv, dv in panel.to_rows():
        w.writerow([u, t, repr(yv), dv])
    return buf.getvalue()


def read_panel_csv(path) -> PanelDataset:
    text = Path(path).read_text(encoding="utf-8")
    return panel_from_csv(text)


def panel_from_csv(text: str) -> PanelDataset:
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader, [])]
    if header != ["unit", "period", "y", "d"]:
        raise PanelError(f"expected header unit,period,y,d, got {','.join(header)!r}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != 4:
            raise PanelError(f"line {lineno}: expected 4 fields, got {len(rec)}")
        try:
            rows.append((_as_int(rec[0], "unit"), int(rec[1]), float(rec[2]), int(rec[3])))
        except ValueError as exc:
            raise PanelError(f"line {lineno}: {exc}") from None
    return validate_panel(rows)
