import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stagdid.errors import DuplicateCell, NonAbsorbingTreatment, NotApplicable, PanelError, UnbalancedPanel
from stagdid.panel import (
    NEVER_TREATED,
    CohortLabel,
    PanelDataset,
    derive_cohorts,
    event_time,
    panel_from_csv,
    panel_to_csv,
    read_panel_csv,
    validate_panel,
    write_panel_csv,
)

from conftest import panel_from_cohorts, staggered_panels


def rows_3x3():
    return [
        (1, 1, 0.1, 0), (1, 2, 0.2, 0), (1, 3, 0.3, 0),
        (2, 1, 1.1, 0), (2, 2, 1.2, 1), (2, 3, 1.3, 1),
        (3, 1, 2.1, 0), (3, 2, 2.2, 0), (3, 3, 2.3, 1),
    ]


def test_validate_builds_rectangular_panel():
    p = validate_panel(rows_3x3())
    assert p.y.shape == (3, 3)
    assert p.cohort.tolist() == [0, 2, 3]
    assert p.cohorts.tolist() == [2, 3]
    assert p.has_never_treated
    assert p.y[1, 2] == 1.3


def test_row_order_is_irrelevant():
    rows = rows_3x3()
    assert validate_panel(rows[::-1]) == validate_panel(rows)


@given(staggered_panels(), st.randoms())
def test_shuffled_rows_roundtrip(panel, rnd):
    rows = panel.to_rows()
    rnd.shuffle(rows)
    assert validate_panel(rows) == panel


def test_duplicate_cell():
    rows = rows_3x3() + [(2, 2, 9.0, 1)]
    with pytest.raises(DuplicateCell):
        validate_panel(rows)


def test_missing_cell_is_unbalanced():
    with pytest.raises(UnbalancedPanel) as ei:
        validate_panel(rows_3x3()[:-1])
    assert ei.value.context["missing"] == (3, 3)


def test_reversal_rejected():
    rows = rows_3x3()
    rows[5] = (2, 3, 1.3, 0)  # unit 2 switches off in period 3
    with pytest.raises(NonAbsorbingTreatment):
        validate_panel(rows)


@pytest.mark.parametrize("bad", [(1, 1, 0.0, 2), (1, 1.5, 0.0, 0)])
def test_bad_codes(bad):
    rows = [bad] + rows_3x3()[1:]
    with pytest.raises(PanelError):
        validate_panel(rows)


def test_periods_must_start_at_one():
    rows = [(u, t + 1, y, d) for u, t, y, d in rows_3x3()]
    with pytest.raises(PanelError):
        validate_panel(rows)


def test_arrays_are_read_only():
    p = validate_panel(rows_3x3())
    with pytest.raises(ValueError):
        p.y[0, 0] = 5.0


def test_cohort_labels_and_event_time():
    p = validate_panel(rows_3x3())
    lab = derive_cohorts(p)
    assert lab[1] is NEVER_TREATED or lab[1] == NEVER_TREATED
    assert lab[2] == CohortLabel(2)
    assert repr(lab[3]) == "Treated(3)"
    assert event_time(5, lab[2]) == 3
    assert event_time(1, 3) == -2
    with pytest.raises(NotApplicable):
        event_time(2, NEVER_TREATED)


def test_relative_time():
    p = panel_from_cohorts(np.zeros((2, 4)), [0, 3])
    rel = p.relative_time()
    assert np.isnan(rel[0]).all()
    assert rel[1].tolist() == [-2, -1, 0, 1]


@given(staggered_panels())
def test_cohort_is_first_treated_period(panel):
    for i in range(panel.n_units):
        on = np.flatnonzero(panel.d[i])
        assert panel.cohort[i] == (on[0] + 1 if on.size else 0)


@given(staggered_panels())
def test_csv_roundtrip_is_exact(panel):
    assert panel_from_csv(panel_to_csv(panel)) == panel


def test_csv_file_roundtrip(tmp_path):
    p = validate_panel(rows_3x3())
    path = tmp_path / "p.csv"
    write_panel_csv(p, path)
    assert path.read_text().splitlines()[0] == "unit,period,y,d"
    assert read_panel_csv(path) == p


def test_csv_bad_header():
    with pytest.raises(PanelError):
        panel_from_csv("id,time,y,d\n1,1,0.0,0\n")


def test_from_arrays_rejects_non_2d():
    with pytest.raises(PanelError):
        PanelDataset.from_arrays(np.zeros(3), np.zeros(3))
