"""Synthetic panels with known ground truth.

Every generator is a pure function of its config (the seed lives in the
config), so the same config always yields the same dataset bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .exceptions import ValidationError
from .panel import PanelDataset

__all__ = [
    "DgpConfig",
    "generate_grouped_panel",
    "generate_ddd_panel",
    "generate_determinants",
    "largest_remainder",
    "unit_ids",
    "write_demo_inputs",
]


@dataclass(frozen=True)
class DgpConfig:
    N: int = 100
    T: int = 72
    group_slopes: tuple = ((1.0,), (-1.0,))
    proportions: tuple = (0.5, 0.5)
    sigma: float = 0.1
    fe_unit: float = 1.0
    fe_month: float = 0.3
    # triple-difference designs
    regions: tuple = ("CN", "NonUS", "US")
    focal_region: str = "US"
    event_t: int = 36
    leads: int = 20
    lags: int = 20
    treated_share: float = 0.25
    delta: float = 0.0
    delta_slope: float = 0.0
    effect_start: int = 0
    effect_all_regions: bool = False
    group_effects: tuple | None = None
    base: float = 1.0
    common_shock: float = 0.0
    courtyard_trend: float = 0.0
    mode: str = "poisson"
    censor_at: float | None = None
    start_year: int = 2015
    seed: int = 0

    def __post_init__(self):
        if self.N <= 0 or self.T <= 0:
            raise ValidationError("N and T must be positive")
        if self.sigma < 0:
            raise ValidationError("sigma must be nonnegative")
        if not np.isclose(sum(self.proportions), 1.0):
            raise ValidationError("group proportions must sum to 1")
        if self.mode not in ("poisson", "continuous"):
            raise ValidationError("mode must be 'poisson' or 'continuous'")

    @property
    def K_true(self) -> int:
        return len(self.proportions)

    def with_(self, **kw) -> "DgpConfig":
        return replace(self, **kw)


def unit_ids(n: int) -> np.ndarray:
    width = max(4, len(str(n - 1)))
    return np.array([f"f{i:0{width}d}" for i in range(n)], dtype=object)


def largest_remainder(proportions: Sequence[float], n: int) -> np.ndarray:
    """Integer counts summing to ``n`` closest to ``n * proportions``."""
    raw = np.asarray(proportions, dtype=float) * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _calendar(T: int, start_year: int):
    t = np.arange(T)
    return start_year + t // 12, t % 12 + 1


def _labels(rng, proportions, N):
    counts = largest_remainder(proportions, N)
    labels = np.repeat(np.arange(1, len(counts) + 1), counts)
    return rng.permutation(labels)


def generate_grouped_panel(cfg: DgpConfig) -> tuple[PanelDataset, pd.Series]:
    """``y = x'b_g(i) + unit effect + unit-by-month effect + noise``.

    Returns the panel (columns ``y``, ``x1..xp``) and the true 1-based labels.
    """
    if cfg.K_true > cfg.N:
        raise ValidationError("more groups than units")
    slopes = np.atleast_2d(np.asarray(cfg.group_slopes, dtype=float))
    if len(slopes) != cfg.K_true:
        raise ValidationError("group_slopes and proportions disagree on the number of groups")
    rng = np.random.default_rng(cfg.seed)
    N, T = cfg.N, cfg.T
    p = slopes.shape[1]
    labels = _labels(rng, cfg.proportions, N)
    x = rng.standard_normal((N, T, p))
    unit_fe = cfg.fe_unit * rng.standard_normal(N)
    month_fe = cfg.fe_month * rng.standard_normal((N, 12))
    year, month = _calendar(T, cfg.start_year)
    eps = rng.standard_normal((N, T))
    y = (
        np.einsum("itp,ip->it", x, slopes[labels - 1])
        + unit_fe[:, None]
        + month_fe[:, month - 1]
        + cfg.sigma * eps
    )
    ids = unit_ids(N)
    cols = {"y": y.ravel()}
    for j in range(p):
        cols[f"x{j + 1}"] = x[:, :, j].ravel()
    data = PanelDataset(
        unit=np.repeat(ids, T),
        year=np.tile(year, N),
        month=np.tile(month, N),
        time=np.tile(np.arange(T), N),
        columns=cols,
    )
    return data, pd.Series(labels, index=pd.Index(ids, name="unit"), name="group")


def generate_ddd_panel(cfg: DgpConfig) -> tuple[PanelDataset, np.ndarray]:
    """Stacked (field, region, month) panel with an injected triple-difference effect.

    The log intensity is

        base + a_ir + m_ir(month) + common_shock * g_t
        + courtyard_trend * year_rel * treated * focal
        + effect_it * treated * [focal or all regions]

    with ``effect = delta + delta_slope * s / lags`` for event time
    ``s >= effect_start``.  Poisson mode draws counts; continuous mode adds
    ``sigma`` Gaussian noise to the log intensity instead.  Returns the panel
    (column ``sq``) and the sorted array of truly treated field ids.
    """
    N, T = cfg.N, cfg.T
    if not (cfg.leads <= cfg.event_t <= T - cfg.lags):
        raise ValidationError("event time leaves fewer than leads/lags months on one side")
    rng = np.random.default_rng(cfg.seed)
    ids = unit_ids(N)
    regions = np.asarray(sorted(cfg.regions), dtype=object)
    R = len(regions)
    if cfg.focal_region not in regions:
        raise ValidationError("focal region not among regions")

    if cfg.group_effects is not None:
        labels = _labels(rng, cfg.proportions, N)
        unit_effect = np.asarray(cfg.group_effects, dtype=float)[labels - 1]
        treated_mask = unit_effect < 0
    else:
        n_treat = int(round(cfg.treated_share * N))
        treated_mask = np.zeros(N, dtype=bool)
        treated_mask[rng.permutation(N)[:n_treat]] = True
        unit_effect = np.where(treated_mask, 1.0, 0.0)

    year, month = _calendar(T, cfg.start_year)
    s = np.arange(T) - cfg.event_t
    event_year = cfg.start_year + cfg.event_t // 12
    path = np.where(s >= cfg.effect_start, cfg.delta + cfg.delta_slope * s / cfg.lags, 0.0)
    if cfg.group_effects is not None:
        path = np.where(s >= cfg.effect_start, 1.0 + cfg.delta_slope * s / cfg.lags, 0.0)

    a = cfg.fe_unit * 0.5 * rng.standard_normal((N, R))
    m = cfg.fe_month * rng.standard_normal((N, R, 12))
    g = rng.standard_normal(T)
    focal = regions == cfg.focal_region
    hit = np.ones(R, dtype=bool) if cfg.effect_all_regions else focal

    eta = (
        cfg.base
        + a[:, :, None]
        + m[:, :, month - 1]
        + cfg.common_shock * g[None, None, :]
        + cfg.courtyard_trend * (year - event_year)[None, None, :] * (treated_mask[:, None, None] & focal[None, :, None])
        + unit_effect[:, None, None] * hit[None, :, None] * path[None, None, :]
    )
    if cfg.mode == "poisson":
        sq = rng.poisson(np.exp(eta)).astype(float)
    else:
        sq = eta + cfg.sigma * rng.standard_normal(eta.shape)
        if cfg.censor_at is not None:
            sq = np.maximum(sq, cfg.censor_at)

    data = PanelDataset(
        unit=np.repeat(ids, R * T),
        region=np.tile(np.repeat(regions, T), N),
        year=np.tile(year, N * R),
        month=np.tile(month, N * R),
        time=np.tile(np.arange(T), N * R),
        columns={"sq": sq.ravel()},
    )
    return data, np.sort(ids[treated_mask])


def generate_determinants(
    n_fields: int = 2000,
    *,
    coefs: Sequence[float] = (-1.2, 0.6, 0.5, -0.8),
    n_ipc4: int = 40,
    seed: int = 0,
) -> pd.DataFrame:
    """Field-level covariates and Probit-generated inflow/outflow flags.

    ``coefs`` are (intercept, ScienceCit, USshare, gap) on standardized
    covariates; the default sign pattern is (+, +, -) on the three drivers.
    """
    rng = np.random.default_rng(seed)
    science = rng.gamma(2.0, 1.0, n_fields)
    usshare = rng.lognormal(-1.5, 1.0, n_fields)
    gap = rng.beta(20, 1.5, n_fields)
    Z = np.column_stack(
        [np.ones(n_fields)]
        + [(v - v.mean()) / v.std() for v in (science, usshare, gap)]
    )
    idx = Z @ np.asarray(coefs, dtype=float)
    inflow = (idx + rng.standard_normal(n_fields) > 0).astype(int)
    outflow = (idx + 0.3 + rng.standard_normal(n_fields) > 0).astype(int)
    return pd.DataFrame(
        {
            "field": unit_ids(n_fields),
            "ScienceCit": science,
            "USshare": usshare,
            "gap": gap,
            "ipc4": [f"G{k:02d}" for k in rng.integers(0, n_ipc4, n_fields)],
            "inflow": inflow,
            "outflow": outflow,
        }
    )


DEMO_CONFIG = """\
[inputs]
inflow = inflow.csv
outflow = outflow.csv
covariates = covariates.csv
concordance = concordance.csv

[schema]
unit = unit
region = region
year = year
month = month
outcome = sq

[run]
seed = {seed}
output = artifacts

[classo]
K = 3
c = 0.25
rule = literal

[event]
event = 2018-01
leads = 20
lags = 20
focal = US
counter_inflow = NonUS
counter_outflow = EPO,WIPO

[estimation]
event_study = ols
placebo = ppml

[placebo]
reps = {reps}
"""


def write_demo_inputs(directory, *, n_fields: int = 60, reps: int = 50, seed: int = 0) -> Path:
    """Write a synthetic inflow/outflow panel pair, covariates, a concordance
    and a config that runs every pipeline stage.  Returns the config path.

    Fields fall into three latent groups whose post-event shift in the focal
    region is negative, mildly negative and positive.
    """
    from .panel import write_csv

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    base = DgpConfig(
        N=n_fields,
        proportions=(0.3, 0.3, 0.4),
        group_effects=(-0.6, -0.15, 0.4),
        base=1.5,
        effect_start=1,
        seed=seed,
    )
    inflow, treated = generate_ddd_panel(base.with_(regions=("CN", "NonUS", "US")))
    outflow, _ = generate_ddd_panel(base.with_(regions=("EPO", "US", "WIPO"), base=1.2))
    write_csv(inflow, out / "inflow.csv")
    write_csv(outflow, out / "outflow.csv")
    cov = generate_determinants(n_fields, n_ipc4=4, seed=seed + 1)
    cov[["field", "ScienceCit", "USshare", "gap", "ipc4"]].to_csv(
        out / "covariates.csv", index=False, lineterminator="\n", float_format="%.17g"
    )
    ids = unit_ids(n_fields)
    pd.DataFrame({"field": ids, "industry": [f"IND{i % 5 + 1}" for i in range(n_fields)]}).to_csv(
        out / "concordance.csv", index=False, lineterminator="\n"
    )
    (out / "treated.json").write_text(json.dumps({"treated": [str(u) for u in treated]}, indent=2) + "\n")
    cfg_path = out / "demo.ini"
    cfg_path.write_text(DEMO_CONFIG.format(seed=seed, reps=reps), encoding="utf-8")
    return cfg_path
