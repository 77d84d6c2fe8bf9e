"""Synthetic staggered-adoption panels with known treatment effects.

Outcome model for unit ``i`` in period ``t``::

    y[i, t] = alpha_i + theta * t + rho * t * D_i + delta[i, t] + eps[i, t]

``alpha_i ~ N(0, sigma_alpha^2)`` and ``eps ~ N(0, sigma_eps^2)``. Treatment
selection is logistic in ``alpha_i`` (scale ``lambda_scale``), the first treated
period is drawn for treated units only, and ``delta[i, t]`` follows an
:class:`EffectPath` in event time, halved (``group_ratio``) for late units.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import DegenerateScenario, InvalidConfig
from .panel import PanelDataset

__all__ = [
    "DistributedTiming",
    "EffectPath",
    "GeneratedPanel",
    "ScenarioConfig",
    "TwoTiming",
    "assign_treatment",
    "build_effect_path",
    "draw_timing",
    "generate_panel",
    "list_presets",
    "load_preset",
    "make_rng",
    "stream_seed",
    "true_att",
]

EffectShape = Literal["step", "trend_break", "inverted_u", "fade_out"]
SHAPES = ("step", "trend_break", "inverted_u", "fade_out")


@dataclass(frozen=True)
class DistributedTiming:
    """First treated period ``round(N(mean, sd))`` clamped to ``[2, T-1]``.

    ``literal=True`` instead draws a per-period Bernoulli with success
    probability ``expit(lambda * Phi((t - mean) / sd))`` and takes the first
    success (same clamp). That variant piles mass onto the earliest periods and
    is only kept for comparison.
    """

    mean: float = 8.0
    sd: float = 2.0
    late_cutoff: int = 9
    literal: bool = False
    kind: str = field(default="distributed", init=False)


@dataclass(frozen=True)
class TwoTiming:
    """Half of the treated units start at ``early``, the rest at ``late``."""

    early: int = 4
    late: int = 12
    kind: str = field(default="two_timing", init=False)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    n_units: int = 2000
    n_periods: int = 15
    sigma_eps: float = 0.2
    sigma_alpha: float = 1.0
    theta: float = 0.2
    rho: float = 0.0
    lambda_scale: float = 5.0
    timing: DistributedTiming | TwoTiming = field(default_factory=DistributedTiming)
    effect_shape: str = "step"
    amplitude: float = 0.2
    peak_at: int = 3
    decline_periods: float = 5
    group_ratio: float = 1.0
    anticipation_periods: int = 0
    anticipation_magnitude: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_units < 2 or self.n_periods < 3:
            raise InvalidConfig("need N >= 2 and T >= 3")
        if self.sigma_eps <= 0 or self.sigma_alpha <= 0:
            raise InvalidConfig("sigma_eps and sigma_alpha must be positive")
        if self.amplitude < 0:
            raise InvalidConfig("amplitude must be non-negative")
        if not 0 < self.group_ratio <= 1:
            raise InvalidConfig("group_ratio must lie in (0, 1]")
        if self.effect_shape not in SHAPES:
            raise InvalidConfig(f"unknown effect shape {self.effect_shape!r}; expected one of {SHAPES}")
        if self.anticipation_periods < 0:
            raise InvalidConfig("anticipation_periods must be >= 0")
        if self.peak_at < 0 or self.decline_periods <= 0:
            raise InvalidConfig("peak_at must be >= 0 and decline_periods > 0")
        if isinstance(self.timing, TwoTiming):
            if not 2 <= self.timing.early < self.timing.late <= self.n_periods:
                raise InvalidConfig("two-timing design needs 2 <= early < late <= T")
        elif self.timing.sd <= 0:
            raise InvalidConfig("timing sd must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["timing"] = asdict(self.timing)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        raw = dict(raw)
        raw.pop("calibration", None)
        raw.pop("description", None)
        timing = dict(raw.pop("timing", {}) or {})
        kind = timing.pop("kind", "distributed")
        if kind == "distributed":
            raw["timing"] = DistributedTiming(**timing)
        elif kind == "two_timing":
            raw["timing"] = TwoTiming(**timing)
        else:
            raise InvalidConfig(f"unknown timing kind {kind!r}")
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**raw)

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class EffectPath:
    """True effect ``beta_e`` by event time; zero outside the stored range."""

    e_min: int
    values: np.ndarray

    def __call__(self, e) -> np.ndarray:
        e = np.asarray(e)
        idx = e - self.e_min
        inside = (idx >= 0) & (idx < len(self.values))
        out = np.zeros(e.shape, dtype=float)
        out[inside] = self.values[idx[inside].astype(int)]
        return out

    def as_dict(self) -> dict[int, float]:
        return {self.e_min + k: float(v) for k, v in enumerate(self.values)}

    @property
    def peak(self) -> float:
        return float(self.values.max(initial=0.0))


def build_effect_path(
    shape: str,
    amplitude: float,
    n_periods: int,
    anticipation_periods: int = 0,
    anticipation_magnitude: float | None = None,
    peak_at: int = 3,
    decline_periods: float = 5,
) -> EffectPath:
    """Effect by event time for ``e`` in ``-anticipation_periods .. T-2``.

    step: ``a``; trend_break: ``a (e + 1)``; inverted_u: linear rise to ``a``
    at ``e = peak_at`` then linear decline reaching zero ``decline_periods``
    later; fade_out: ``a`` at ``e = 0`` declining linearly to zero after
    ``decline_periods``. Anticipation sets ``beta_e = -m`` on the
    ``anticipation_periods`` periods before onset, ``m`` defaulting to half
    the peak post-treatment effect.
    """
    if amplitude < 0:
        raise InvalidConfig("amplitude must be non-negative")
    e = np.arange(0, max(n_periods - 1, 1))
    if shape == "step":
        post = np.full(e.shape, amplitude, dtype=float)
    elif shape == "trend_break":
        post = amplitude * (e + 1.0)
    elif shape == "inverted_u":
        rise = amplitude * (e + 1.0) / (peak_at + 1.0)
        fall = amplitude * np.maximum(0.0, 1.0 - (e - peak_at) / decline_periods)
        post = np.where(e <= peak_at, rise, fall)
    elif shape == "fade_out":
        post = amplitude * np.maximum(0.0, 1.0 - e / decline_periods)
    else:
        raise InvalidConfig(f"unknown effect shape {shape!r}")
    k = int(anticipation_periods)
    if k:
        m = 0.5 * post.max() if anticipation_magnitude is None else float(anticipation_magnitude)
        pre = np.full(k, -m)
    else:
        pre = np.zeros(0)
    return EffectPath(-k, np.concatenate([pre, post]))


def config_effect_path(config: ScenarioConfig) -> EffectPath:
    return build_effect_path(
        config.effect_shape,
        config.amplitude,
        config.n_periods,
        config.anticipation_periods,
        config.anticipation_magnitude,
        config.peak_at,
        config.decline_periods,
    )


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def stream_seed(base_seed: int, replication: int) -> np.random.SeedSequence:
    """Independent stream for replication ``r``; shared by every scenario."""
    return np.random.SeedSequence(int(base_seed), spawn_key=(int(replication),))


def assign_treatment(alpha, lambda_scale: float, rng) -> np.ndarray:
    """Ever-treated flags, ``D_i ~ Bernoulli(expit(lambda_scale * alpha_i))``."""
    alpha = np.asarray(alpha, dtype=float)
    p = expit(lambda_scale * alpha)
    return make_rng(rng).random(alpha.shape) < p


def draw_timing(config: ScenarioConfig, treated, rng) -> np.ndarray:
    """First treated period per unit (0 for units that are never treated).

    A standard normal is drawn for every unit, treated or not, so that the
    random stream stays aligned across scenarios sharing a seed.
    """
    rng = make_rng(rng)
    treated = np.asarray(treated, dtype=bool)
    n, T = treated.size, config.n_periods
    timing = config.timing
    z = rng.standard_normal(n)
    g = np.zeros(n, dtype=np.int64)
    if isinstance(timing, TwoTiming):
        idx = np.flatnonzero(treated)
        n_early = (idx.size + 1) // 2
        g[idx[:n_early]] = timing.early
        g[idx[n_early:]] = timing.late
        return g
    if timing.literal:
        u = rng.random((n, T))
        t = np.arange(1, T + 1)
        p = expit(config.lambda_scale * norm.cdf((t - timing.mean) / timing.sd))
        hit = u < p[None, :]
        first = np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, T - 1)
        raw = first.astype(float)
    else:
        raw = np.floor(timing.mean + timing.sd * z + 0.5)
    g[treated] = np.clip(raw[treated], 2, T - 1).astype(np.int64)
    return g


def late_flags(config: ScenarioConfig, g: np.ndarray) -> np.ndarray:
    if isinstance(config.timing, TwoTiming):
        return g == config.timing.late
    return g >= config.timing.late_cutoff


@dataclass(frozen=True, eq=False)
class GeneratedPanel:
    """A simulated panel together with the truth that produced it."""

    panel: PanelDataset
    truth: np.ndarray
    late: np.ndarray
    alpha: np.ndarray
    config: ScenarioConfig
    path: EffectPath

    def truth_rows(self) -> list[tuple]:
        p = self.panel
        return [
            (u, t, float(self.truth[i, j]))
            for i, u in enumerate(p.units.tolist())
            for j, t in enumerate(p.periods.tolist())
        ]


def generate_panel(config: ScenarioConfig, seed=None) -> GeneratedPanel:
    """Draw one panel. Identical ``(config, seed)`` reproduce it bit for bit.

    Draw order is fixed (alpha, assignment uniforms, timing normals, noise) so
    that scenarios sharing a seed differ only through their parameters.
    """
    rng = make_rng(config.seed if seed is None else seed)
    n, T = config.n_units, config.n_periods
    alpha = config.sigma_alpha * rng.standard_normal(n)
    treated = assign_treatment(alpha, config.lambda_scale, rng)
    if treated.all():
        raise DegenerateScenario("every unit was treated; no never-treated control group")
    g = draw_timing(config, treated, rng)
    eps = config.sigma_eps * rng.standard_normal((n, T))

    t = np.arange(1, T + 1, dtype=float)
    path = config_effect_path(config)
    late = late_flags(config, g) & treated
    rel = t[None, :] - g[:, None]
    truth = path(rel.astype(int)) * np.where(late, config.group_ratio, 1.0)[:, None]
    truth[~treated] = 0.0

    y = alpha[:, None] + config.theta * t[None, :] + config.rho * t[None, :] * treated[:, None] + truth + eps
    d = (treated[:, None] & (rel >= 0)).astype(np.int8)
    panel = PanelDataset.from_arrays(y, d)
    return GeneratedPanel(panel, truth, late, alpha, config, path)


def true_att(gp: GeneratedPanel, scheme: str = "overall"):
    """Truth that every bias metric is measured against.

    ``"overall"``: mean of the true effect over treated cells (``e >= 0``).
    ``"event_time"``: dict ``e -> mean true effect`` over ever-treated units'
    cells at event time ``e`` (pre-treatment entries are zero unless the
    scenario has anticipation).
    """
    p = gp.panel
    if scheme == "overall":
        mask = p.d.astype(bool)
        return float(gp.truth[mask].mean()) if mask.any() else float("nan")
    if scheme == "event_time":
        rel = p.relative_time()
        ever = p.ever_treated
        e_vals = rel[ever].astype(int).ravel()
        tr = gp.truth[ever].ravel()
        es = np.unique(e_vals)
        sums = np.bincount(e_vals - es[0], weights=tr)
        counts = np.bincount(e_vals - es[0])
        return {int(e): float(sums[e - es[0]] / counts[e - es[0]]) for e in es}
    raise ValueError(f"unknown truth scheme {scheme!r}")


# presets

_PRESET_PACKAGE = "stagdid.presets"


def list_presets() -> list[str]:
    files = resources.files(_PRESET_PACKAGE).iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


_ALIASES = {f"setup{k}": f"table1-setup{k}" for k in range(1, 7)}


def load_preset(name_or_path) -> list[ScenarioConfig]:
    """Scenarios from a shipped preset name (``table1``, ``setup4``,...) or a JSON path."""
    raw = read_preset_json(name_or_path)
    return [ScenarioConfig.from_dict(s) for s in raw["scenarios"]]


def read_preset_json(name_or_path) -> dict:
    path = Path(str(name_or_path))
    if path.suffix == ".json" and path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    name = _ALIASES.get(str(name_or_path), str(name_or_path))
    if name == "table1":
        scen = []
        for k in range(1, 7):
            scen.extend(read_preset_json(f"table1-setup{k}")["scenarios"])
        return {"name": "table1", "scenarios": scen}
    res = resources.files(_PRESET_PACKAGE).joinpath(f"{name}.json")
    if not res.is_file():
        raise InvalidConfig(f"unknown preset {name_or_path!r}; available: {', '.join(list_presets())}")
    return json.loads(res.read_text(encoding="utf-8"))
