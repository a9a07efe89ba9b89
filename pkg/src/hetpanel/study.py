"""Empirical designs: grouped event study, triple differences, event-study
leads/lags, and the descriptive gap / TreatRatio indices.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import (
    BothZero,
    EventOutsideSample,
    InsufficientPrePeriod,
    MissingCovariate,
    NoTreatedUnits,
    RankDeficient,
    ValidationError,
    ZeroGrossShare,
)
from .glm import LikelihoodFit, fit_ppml, fit_probit, fit_tobit, probit_ame, tobit_marginal_effects
from .panel import ClusterKey, FixedEffectSpec, PanelDataset, factor_codes
from .regress import RegressionFit, ols_fit

__all__ = [
    "EventConfig",
    "EventStudyResult",
    "event_index",
    "classo_panel",
    "build_grouped_eventstudy",
    "estimate_ddd",
    "ddd_effect",
    "dd_by_region",
    "estimate_event_study",
    "compute_gap",
    "compute_treat_ratio",
    "treat_ratio_table",
    "build_determinants_table",
    "courtyard_summary",
    "determinants_probit",
]

logger = logging.getLogger(__name__)

ESTIMATORS = ("ols", "ppml", "tobit")


@dataclass(frozen=True)
class EventConfig:
    event_year: int = 2018
    event_month: int = 1
    leads: int = 20
    lags: int = 20
    omitted_period: int = 0
    focal_region: str = "US"
    outcome: str = "sq"
    log_outcome: bool = True
    trend: bool = True
    time_fe: bool = True
    month_fe: str = "calendar"
    cluster: str = "unit*region*month"

    def __post_init__(self):
        if self.leads < 1 or self.lags < 1:
            raise ValidationError("leads and lags must be at least 1")

    @property
    def triple_term(self) -> str:
        return f"Post×Courtyard×{self.focal_region}"


def event_index(data: PanelDataset, cfg: EventConfig) -> int:
    cal = data.calendar
    hit = cal.index[(cal["year"] == cfg.event_year) & (cal["month"] == cfg.event_month)]
    if len(hit) == 0:
        raise EventOutsideSample(f"event {cfg.event_year}-{cfg.event_month:02d} is outside the sample")
    return int(hit[0])


def _courtyard_rows(data: PanelDataset, treated) -> np.ndarray:
    treated = set(np.asarray(list(treated), dtype=object).tolist())
    return np.fromiter((u in treated for u in data.unit), dtype=bool, count=data.n_rows).astype(float)


# -- grouped event study (C-Lasso stage) ----------------------------------------

def classo_panel(
    data: PanelDataset,
    focal_region: str = "US",
    counter_regions: Sequence[str] = ("NonUS",),
    outcome: str = "sq",
) -> PanelDataset:
    """Field-level panel with ``USSq`` (focal region) and ``CounterSq`` (sum of counterpart regions)."""
    if data.region is None:
        raise ValidationError("stacked region panel required")
    focal = data.select(data.region == focal_region)
    if focal.n_rows == 0:
        raise ValidationError(f"no rows for region {focal_region!r}")
    counter = np.zeros(focal.n_rows)
    for r in counter_regions:
        part = data.select(data.region == r)
        if part.n_rows != focal.n_rows:
            raise ValidationError(f"region {r!r} is missing or unbalanced")
        counter += part[outcome]
    return PanelDataset(
        unit=focal.unit.copy(),
        year=focal.year.copy(),
        month=focal.month.copy(),
        time=focal.time.copy(),
        columns={"USSq": focal[outcome].copy(), "CounterSq": counter},
    )


@dataclass
class GroupedDesign:
    data: PanelDataset
    outcome: str
    regressors: list[str]
    fe: FixedEffectSpec
    event_t: int
    degenerate: bool


def build_grouped_eventstudy(
    data: PanelDataset,
    cfg: EventConfig = EventConfig(),
    us_col: str = "USSq",
    counter_col: str = "CounterSq",
) -> GroupedDesign:
    """Design for ln(1+USSq) on Post, ln(1+CounterSq) and a centered trend, with unit x month FE."""
    t0 = event_index(data, cfg)
    T = data.n_periods
    post = (data.time >= t0).astype(float)
    degenerate = t0 == 0
    if degenerate:
        warnings.warn("event at the first period: Post is constant", stacklevel=2)
    for col in (us_col, counter_col):
        if np.any(data[col] < 0):
            raise ValidationError(f"{col} has negative counts")
    trend = data.time - (T - 1) / 2.0
    design = PanelDataset(
        unit=data.unit.copy(),
        year=data.year.copy(),
        month=data.month.copy(),
        time=data.time.copy(),
        region=None if data.region is None else data.region.copy(),
        columns={
            "lnUSSq": np.log1p(data[us_col]),
            "Post": post,
            "CounterSq": np.log1p(data[counter_col]),
            "Trend": trend.astype(float),
        },
    )
    fe_factor = "unit*region*month" if data.region is not None else "unit*month"
    return GroupedDesign(
        data=design,
        outcome="lnUSSq",
        regressors=["Post", "CounterSq", "Trend"],
        fe=FixedEffectSpec((fe_factor,), month_fe=cfg.month_fe),
        event_t=t0,
        degenerate=degenerate,
    )


# -- triple differences ----------------------------------------------------------

def _outcome(data, cfg, estimator):
    y = data[cfg.outcome]
    if estimator == "ppml" or not cfg.log_outcome:
        return y
    if np.any(y < 0):
        raise ValidationError("log(1+y) needs a nonnegative outcome")
    return np.log1p(y)


def _trend_columns(data, cfg, court):
    cols = {}
    if not cfg.trend:
        return cols
    year_rel = (data.year - cfg.event_year).astype(float)
    regions = list(data.regions)
    # the region trends are the lower-order terms of the triple trend; the
    # first is spanned by the time effects when those are present
    for r in regions[1:] if cfg.time_fe else regions:
        cols[f"Year×{r}"] = year_rel * (data.region == r)
    for r in regions:
        cols[f"Year×Courtyard×{r}"] = year_rel * court * (data.region == r)
    return cols


def _tobit_dummies(data, cfg):
    cols = {}
    for j, factor in enumerate(("unit", "region", "month")):
        codes = factor_codes(data, factor, cfg.month_fe)
        for level in range(1 if j else 0, codes.max() + 1):
            cols[f"fe[{factor}={level}]"] = (codes == level).astype(float)
    return cols


def _fit(data, X: pd.DataFrame, cfg, estimator, key_terms):
    cluster = ClusterKey.from_factors(data, cfg.cluster, cfg.month_fe)
    y = _outcome(data, cfg, estimator)
    if estimator == "tobit":
        Xt = pd.concat([X, pd.DataFrame(_tobit_dummies(data, cfg))], axis=1)
        from .regress import find_aliased

        aliased = find_aliased(Xt.to_numpy(), np.linalg.norm(Xt.to_numpy(), axis=0))
        dropped = [c for c, a in zip(Xt.columns, aliased) if a]
        Xt = Xt.loc[:, ~aliased]
        fit = fit_tobit(y, Xt, 0.0, cluster)
        fit.dropped = dropped
        targets = [c for c in X.columns if c in Xt.columns]
        fit.marginal_effects = tobit_marginal_effects(fit, Xt, targets)
    else:
        factors = ["unit*region*month"] + (["time"] if cfg.time_fe else [])
        fe = FixedEffectSpec(tuple(factors), month_fe=cfg.month_fe).codes(data)
        if estimator == "ols":
            fit = ols_fit(y, X, fe=fe, cluster=cluster)
        else:
            fit = fit_ppml(y, X, fe=fe, cluster=cluster)
    lost = [t for t in key_terms if t in fit.dropped]
    if lost:
        raise RankDeficient(f"key terms aliased with fixed effects or other terms: {lost}", lost)
    return fit


def estimate_ddd(
    data: PanelDataset,
    treated,
    cfg: EventConfig = EventConfig(),
    estimator: str = "ols",
    *,
    trend: bool | None = None,
) -> RegressionFit:
    """Triple difference of Post x Courtyard x focal region.

    The design carries Post x Courtyard and Post x focal as lower-order terms,
    an optional Year x Courtyard x region trend per region, unit x region x
    month fixed effects and (``cfg.time_fe``) year-month effects.  OLS and
    Tobit use ``ln(1+y)``; PPML the raw count.  For Tobit the coefficient of
    interest is the average marginal effect in ``fit.marginal_effects``
    (see :func:`ddd_effect`).
    """
    estimator = estimator.lower()
    if estimator not in ESTIMATORS:
        raise ValidationError(f"estimator must be one of {ESTIMATORS}")
    if data.region is None:
        raise ValidationError("stacked region panel required")
    if trend is not None:
        cfg = _replace(cfg, trend=trend)
    court = _courtyard_rows(data, treated)
    if court.sum() == 0:
        raise NoTreatedUnits("no treated units in the data")
    t0 = event_index(data, cfg)
    post = (data.time >= t0).astype(float)
    focal = (data.region == cfg.focal_region).astype(float)
    if focal.sum() == 0:
        raise ValidationError(f"focal region {cfg.focal_region!r} not in data")
    cols = {
        cfg.triple_term: post * court * focal,
        "Post×Courtyard": post * court,
        f"Post×{cfg.focal_region}": post * focal,
    }
    if estimator == "tobit" or not cfg.time_fe:
        cols["Post"] = post
    cols.update(_trend_columns(data, cfg, court))
    return _fit(data, pd.DataFrame(cols), cfg, estimator, [cfg.triple_term])


def _replace(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


def ddd_effect(fit: RegressionFit, term: str = "Post×Courtyard×US") -> tuple[float, float]:
    """(estimate, SE) of the triple term; Tobit reports the marginal effect."""
    if isinstance(fit, LikelihoodFit) and fit.estimator == "Tobit" and fit.marginal_effects is not None:
        row = fit.marginal_effects.loc[term]
        return float(row["ame"]), float(row["se"])
    return float(fit.params[term]), float(fit.bse[term])


def dd_by_region(
    data: PanelDataset,
    treated,
    cfg: EventConfig = EventConfig(),
    estimator: str = "ols",
) -> dict[str, RegressionFit]:
    """Post x Courtyard within each region with unit x month fixed effects."""
    out = {}
    for r in data.regions:
        sub = data.select(data.region == r)
        court = _courtyard_rows(sub, treated)
        post = (sub.time >= event_index(sub, cfg)).astype(float)
        X = pd.DataFrame({"Post×Courtyard": post * court, "Post": post})
        fe = FixedEffectSpec(("unit*month",), month_fe=cfg.month_fe).codes(sub)
        cluster = ClusterKey.from_factors(sub, "unit*month", cfg.month_fe)
        y = _outcome(sub, cfg, estimator)
        if estimator == "ppml":
            out[r] = fit_ppml(y, X, fe=fe, cluster=cluster)
        else:
            out[r] = ols_fit(y, X, fe=fe, cluster=cluster)
    return out


# -- event study -------------------------------------------------------------------

@dataclass
class EventStudyResult:
    coefs: pd.DataFrame
    dd1: pd.DataFrame
    dd2: pd.DataFrame
    tau: pd.DataFrame
    trend: pd.Series
    estimator: str
    fit: RegressionFit = field(repr=False)

    def pretrend_wald(self) -> tuple[float, int, float]:
        """Joint test that every pre-period triple coefficient is zero."""
        names = [f"DDD[{s}]" for s in self.coefs.index if s < 0]
        return self.fit.wald_test(names)

    def plot_frame(self) -> pd.DataFrame:
        return self.coefs.reset_index()[["s", "coef", "se", "lo", "hi"]]

    def to_csv(self, path) -> None:
        self.plot_frame().to_csv(path, index=False, lineterminator="\n")


def _period_frame(fit, prefix, periods, z=1.96):
    rows = []
    for s in periods:
        nm = f"{prefix}[{s}]"
        if nm in fit.params.index:
            b, se = float(fit.params[nm]), float(fit.bse[nm])
        else:
            b, se = np.nan, np.nan
        rows.append({"s": s, "coef": b, "se": se, "lo": b - z * se, "hi": b + z * se})
    return pd.DataFrame(rows).set_index("s")


def estimate_event_study(
    data: PanelDataset,
    treated,
    cfg: EventConfig = EventConfig(time_fe=False),
    estimator: str = "ols",
) -> EventStudyResult:
    """Leads/lags triple difference with the event month as reference.

    Relative months beyond the window are binned into the endpoint dummies.
    Each period carries the triple term plus the Courtyard, focal-region and
    common period terms; ``cfg.time_fe`` replaces the common terms by
    year-month effects.
    """
    estimator = estimator.lower()
    if estimator not in ESTIMATORS:
        raise ValidationError(f"estimator must be one of {ESTIMATORS}")
    t0 = event_index(data, cfg)
    T = data.n_periods
    if t0 < cfg.leads or T - 1 - t0 < cfg.lags:
        raise InsufficientPrePeriod(
            f"need {cfg.leads} months before and {cfg.lags} after the event; have {t0} and {T - 1 - t0}"
        )
    court = _courtyard_rows(data, treated)
    if court.sum() == 0:
        raise NoTreatedUnits("no treated units in the data")
    focal = (data.region == cfg.focal_region).astype(float)
    rel = np.clip(data.time - t0, -cfg.leads, cfg.lags)
    periods = [s for s in range(-cfg.leads, cfg.lags + 1) if s != cfg.omitted_period]
    cols = {}
    for s in periods:
        d = (rel == s).astype(float)
        cols[f"DDD[{s}]"] = d * court * focal
    for s in periods:
        cols[f"DD1[{s}]"] = (rel == s) * court
    for s in periods:
        cols[f"DD2[{s}]"] = (rel == s) * focal
    if not cfg.time_fe or estimator == "tobit":
        for s in periods:
            cols[f"tau[{s}]"] = (rel == s).astype(float)
    cols.update(_trend_columns(data, cfg, court))
    X = pd.DataFrame(cols).astype(float)
    fit = _fit(data, X, cfg, estimator, [f"DDD[{s}]" for s in periods])
    trend = pd.Series({k: float(fit.params[k]) for k in fit.params.index if k.startswith("Year×")}, dtype=float)
    return EventStudyResult(
        coefs=_period_frame(fit, "DDD", periods),
        dd1=_period_frame(fit, "DD1", periods),
        dd2=_period_frame(fit, "DD2", periods),
        tau=_period_frame(fit, "tau", periods),
        trend=trend,
        estimator=estimator,
        fit=fit,
    )


# -- descriptive indices -------------------------------------------------------------

def compute_gap(uscit, cncit):
    """``UScit / (UScit + CNcit)``; scalar or elementwise."""
    u = np.asarray(uscit, dtype=float)
    c = np.asarray(cncit, dtype=float)
    if np.any(u < 0) or np.any(c < 0):
        raise ValidationError("citation counts must be nonnegative")
    both = (u == 0) & (c == 0)
    if np.any(both):
        idx = np.flatnonzero(np.atleast_1d(both)).tolist()
        raise BothZero(f"both citation counts are zero at positions {idx[:10]}")
    out = u / (u + c)
    return float(out) if out.ndim == 0 else out


def compute_treat_ratio(yard_share, gross_share):
    """``100 * (YardShare / GrossShare - 1)``."""
    y = np.asarray(yard_share, dtype=float)
    g = np.asarray(gross_share, dtype=float)
    if np.any(g <= 0):
        raise ZeroGrossShare("gross share must be positive")
    out = 100.0 * (y / g - 1.0)
    return float(out) if out.ndim == 0 else out


def treat_ratio_table(concordance: pd.DataFrame, field_totals: pd.Series, courtyard: pd.Series) -> pd.DataFrame:
    """TreatRatio per industry from a field -> industry mapping.

    ``concordance`` has columns ``field`` and ``industry``; ``field_totals``
    maps field to total applications; ``courtyard`` maps field to 0/1.
    """
    m = concordance[["field", "industry"]].copy()
    m["total"] = m["field"].map(field_totals).fillna(0.0).astype(float)
    m["yard"] = m["total"] * m["field"].map(courtyard).fillna(0).astype(float)
    agg = m.groupby("industry", sort=True)[["total", "yard"]].sum()
    gross_all, yard_all = agg["total"].sum(), agg["yard"].sum()
    if yard_all == 0:
        raise ValidationError("no applications in affected fields")
    out = pd.DataFrame(
        {
            "gross_total": agg["total"],
            "yard_share": agg["yard"] / yard_all,
            "gross_share": agg["total"] / gross_all,
        }
    )
    out = out[out["gross_share"] > 0]
    out["treat_ratio"] = compute_treat_ratio(out["yard_share"].to_numpy(), out["gross_share"].to_numpy())
    return out


COVARIATES = ("ScienceCit", "USshare", "gap")


def build_determinants_table(
    flags: pd.DataFrame,
    covariates: pd.DataFrame,
    *,
    on_missing: str = "raise",
) -> pd.DataFrame:
    """One row per field with inflow/outflow/both outcomes and the covariates.

    ``flags`` has ``field`` and any of ``inflow``/``outflow``; ``covariates``
    has ``field``, ``ScienceCit``, ``USshare``, ``gap`` and optionally ``ipc4``.
    """
    cov = covariates.copy()
    for c in COVARIATES:
        if c not in cov.columns:
            raise MissingCovariate(f"covariate column {c!r} missing")
        cov[c] = pd.to_numeric(cov[c].mask(cov[c].astype(str).str.strip() == ""), errors="coerce")
    table = flags.merge(cov, on="field", how="left", sort=True)
    bad = table[list(COVARIATES)].isna().any(axis=1)
    if bad.any():
        first = table.loc[bad, "field"].iloc[0]
        if on_missing == "raise":
            raise MissingCovariate(f"field {first!r} has a missing covariate", field=first)
        logger.info("dropping %d fields with missing covariates (first %s)", int(bad.sum()), first)
        table = table.loc[~bad]
    if "inflow" in table and "outflow" in table:
        table["both"] = ((table["inflow"] == 1) & (table["outflow"] == 1)).astype(int)
    return table.reset_index(drop=True)


def courtyard_summary(table: pd.DataFrame, total_fields: int | None = None) -> pd.DataFrame:
    total = len(table) if total_fields is None else total_fields
    rows = {}
    for c in ("inflow", "outflow", "both"):
        if c in table:
            n = int(table[c].sum())
            rows[c] = {"count": n, "share_pct": 100.0 * n / total}
    return pd.DataFrame.from_dict(rows, orient="index")


def determinants_probit(
    table: pd.DataFrame,
    outcome: str,
    *,
    ipc4_fe: bool = False,
    cluster: str | None = "ipc4",
) -> LikelihoodFit:
    """Probit of a Courtyard flag on the three drivers; AMEs attached."""
    if ipc4_fe:
        # groups where the outcome never varies are perfectly predicted by their dummy
        varies = table.groupby("ipc4")[outcome].transform("nunique") > 1
        if not varies.all():
            logger.info("dropping %d fields in IPC4 groups without outcome variation", int((~varies).sum()))
        table = table.loc[varies].reset_index(drop=True)
    X = pd.DataFrame({"const": 1.0, **{c: table[c].to_numpy(dtype=float) for c in COVARIATES}})
    if ipc4_fe:
        d = pd.get_dummies(table["ipc4"], prefix="fe[ipc4", prefix_sep="=", drop_first=True, dtype=float)
        d.columns = [f"{c}]" for c in d.columns]
        X = pd.concat([X, d.reset_index(drop=True)], axis=1)
    cl = table[cluster].to_numpy() if cluster and cluster in table else None
    fit = fit_probit(table[outcome].to_numpy(dtype=float), X, cluster=cl)
    fit.marginal_effects = probit_ame(fit, X, list(COVARIATES))
    return fit
