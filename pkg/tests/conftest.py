import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from stagdid.panel import PanelDataset

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def panel_from_cohorts(y, g):
    """Panel with outcome ``y`` (N x T) and first-treated periods ``g`` (0 = never)."""
    y = np.asarray(y, dtype=float)
    g = np.asarray(g)
    t = np.arange(1, y.shape[1] + 1)
    d = ((g[:, None] > 0) & (t[None, :] >= g[:, None])).astype(np.int8)
    return PanelDataset.from_arrays(y, d)


def additive_outcome(rng, g, n_periods, effects=None):
    """``alpha_i + zeta_t`` plus optional per-cell effects on treated cells (noise free)."""
    n = len(g)
    y = rng.normal(size=n)[:, None] + rng.normal(size=n_periods)[None, :]
    if effects is not None:
        y = y + effects
    return y


@st.composite
def staggered_panels(draw, max_cells=200, min_periods=3, need_never=True, min_cohorts=1):
    """Small random panels: cohorts in {0, 2..T}, at least one never-treated unit."""
    T = draw(st.integers(min_periods, 8))
    n_max = max(3, min(12, max_cells // T))
    n = draw(st.integers(3, n_max))
    g = draw(st.lists(st.sampled_from([0] + list(range(2, T + 1))), min_size=n, max_size=n))
    g = np.array(g)
    if need_never and not (g == 0).any():
        g[0] = 0
    treated = sorted(set(g[g > 0].tolist()))
    while len(treated) < min_cohorts:
        k = int(np.flatnonzero(g == 0)[-1]) if (g == 0).sum() > 1 else None
        if k is None:
            break
        g[k] = [c for c in range(2, T + 1) if c not in treated][0]
        treated = sorted(set(g[g > 0].tolist()))
    seed = draw(st.integers(0, 2**32 - 1))
    y = np.random.default_rng(seed).normal(size=(n, T))
    return panel_from_cohorts(y, g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance clause, echoed again at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
