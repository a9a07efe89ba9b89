"""Staged end-to-end driver: configuration, artifacts and the text report.

Each stage reads its inputs (raw files and upstream artifacts) from disk and
writes its artifacts atomically, so any stage can be rerun on its own.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from .classo import ClassoConfig, classify_courtyard, fit_classo, post_lasso
from .exceptions import MissingArtifact, ValidationError
from .panel import FixedEffectSpec, PanelDataset, load_csv
from .placebo import run_placebo
from .regress import ols_fit
from .study import (
    EventConfig,
    build_determinants_table,
    build_grouped_eventstudy,
    classo_panel,
    courtyard_summary,
    dd_by_region,
    ddd_effect,
    determinants_probit,
    estimate_ddd,
    estimate_event_study,
    treat_ratio_table,
)

__all__ = [
    "PipelineConfig",
    "STAGES",
    "ARTIFACTS",
    "load_config",
    "run_pipeline",
    "run_stage",
    "emit_report",
    "stars",
]

logger = logging.getLogger(__name__)

STAGES = ("classo", "courtyard", "ddd", "event_study", "placebo", "determinants", "treatratio")
ARTIFACTS = (
    "classo_fit.json",
    "courtyard.csv",
    "table2.json",
    "table3.json",
    "table4.json",
    "event_study.csv",
    "placebo.csv",
    "table5.json",
)
DIMENSIONS = ("inflow", "outflow")


@dataclass
class PipelineConfig:
    inflow: Path
    output: Path
    outflow: Path | None = None
    covariates: Path | None = None
    concordance: Path | None = None
    schema: dict = field(default_factory=lambda: {"unit": "field", "region": "region", "year": "year", "month": "month"})
    outcome: str = "sq"
    counter: dict = field(default_factory=lambda: {"inflow": ("NonUS",), "outflow": ("EPO", "WIPO")})
    classo: ClassoConfig = ClassoConfig()
    rule: str = "literal"
    grid: tuple = ()
    event: EventConfig = EventConfig()
    event_estimator: str = "ols"
    placebo_estimator: str = "ppml"
    reps: int = 1000
    seed: int = 0
    treatratio_dimension: str = "inflow"
    source_text: str = ""

    def panel_path(self, dim: str) -> Path | None:
        return self.inflow if dim == "inflow" else self.outflow

    @property
    def dimensions(self) -> list[str]:
        return [d for d in DIMENSIONS if self.panel_path(d) is not None]

    def canonical(self) -> dict:
        """Every setting that can change an output byte, plus input digests."""
        def digest(p):
            if p is None:
                return None
            return hashlib.sha256(Path(p).read_bytes()).hexdigest()

        return {
            "inputs": {
                "inflow": digest(self.inflow),
                "outflow": digest(self.outflow),
                "covariates": digest(self.covariates),
                "concordance": digest(self.concordance),
            },
            "schema": dict(sorted(self.schema.items())),
            "outcome": self.outcome,
            "counter": {k: list(v) for k, v in sorted(self.counter.items())},
            "classo": _asdict(self.classo),
            "rule": self.rule,
            "grid": [list(g) for g in self.grid],
            "event": _asdict(self.event),
            "event_estimator": self.event_estimator,
            "placebo_estimator": self.placebo_estimator,
            "reps": self.reps,
            "seed": self.seed,
            "treatratio_dimension": self.treatratio_dimension,
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _asdict(obj) -> dict:
    from dataclasses import asdict

    return asdict(obj)


def _split(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def parse_grid(text: str) -> tuple[tuple[int, float], ...]:
    """``"2,3x0.1,0.25"`` -> every (K, c) pair."""
    try:
        ks, cs = text.lower().replace("×", "x").split("x")
        return tuple((int(k), float(c)) for k in _split(ks) for c in _split(cs))
    except ValueError as exc:
        raise ValidationError(f"grid must look like 'k1,k2xc1,c2', got {text!r}") from exc


def load_config(path, **overrides) -> PipelineConfig:
    """Read an INI config; relative paths resolve against the config's folder.

    ``overrides`` (k, c, grid, estimator, reps, seed, output) replace file values.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} not found")
    text = path.read_text(encoding="utf-8")
    cp = configparser.ConfigParser()
    cp.read_string(text)
    base = path.parent

    def get(section, key, fallback=None):
        return cp.get(section, key, fallback=fallback) if cp.has_section(section) else fallback

    def file_opt(key, required=False):
        v = get("inputs", key)
        if not v:
            if required:
                raise ValidationError(f"[inputs] {key} is required")
            return None
        p = (base / v).resolve()
        if not p.exists():
            raise ValidationError(f"input file {p} does not exist")
        return p

    seed_text = get("run", "seed")
    if seed_text is None and overrides.get("seed") is None:
        raise ValidationError("[run] seed must be set explicitly")
    seed = int(overrides["seed"]) if overrides.get("seed") is not None else int(seed_text)

    event_ym = get("event", "event", "2018-01")
    try:
        ey, em = (int(x) for x in event_ym.split("-"))
    except ValueError as exc:
        raise ValidationError(f"[event] event must be YYYY-MM, got {event_ym!r}") from exc
    event = EventConfig(
        event_year=ey,
        event_month=em,
        leads=int(get("event", "leads", 20)),
        lags=int(get("event", "lags", 20)),
        focal_region=get("event", "focal", "US"),
        cluster=get("event", "cluster", "unit*region*month"),
        month_fe=get("event", "month_fe", "calendar"),
    )
    classo = ClassoConfig(
        K=int(overrides["k"]) if overrides.get("k") is not None else int(get("classo", "K", 3)),
        c=float(overrides["c"]) if overrides.get("c") is not None else float(get("classo", "c", 0.25)),
        tol=float(get("classo", "tol", 1e-6)),
        max_iter=int(get("classo", "max_iter", 500)),
        seed=seed,
        penalty=get("classo", "penalty", "product"),
    )
    grid_text = overrides.get("grid") or get("classo", "grid", "")
    estimator = overrides.get("estimator")
    if overrides.get("output"):
        output = Path(overrides["output"]).resolve()
    else:
        output = (base / get("run", "output", "artifacts")).resolve()
    cfg = PipelineConfig(
        inflow=file_opt("inflow", required=True),
        outflow=file_opt("outflow"),
        covariates=file_opt("covariates"),
        concordance=file_opt("concordance"),
        output=output,
        schema={
            "unit": get("schema", "unit", "field"),
            "region": get("schema", "region", "region"),
            "year": get("schema", "year", "year"),
            "month": get("schema", "month", "month"),
        },
        outcome=get("schema", "outcome", "sq"),
        counter={
            "inflow": _split(get("event", "counter_inflow", "NonUS")),
            "outflow": _split(get("event", "counter_outflow", "EPO,WIPO")),
        },
        classo=classo,
        rule=get("classo", "rule", "literal"),
        grid=parse_grid(grid_text) if grid_text else (),
        event=event,
        event_estimator=(estimator or get("estimation", "event_study", "ols")).lower(),
        placebo_estimator=(estimator or get("estimation", "placebo", "ppml")).lower(),
        reps=int(overrides["reps"]) if overrides.get("reps") is not None else int(get("placebo", "reps", 1000)),
        seed=seed,
        treatratio_dimension=get("treatratio", "dimension", "inflow"),
        source_text=text,
    )
    for est in (cfg.event_estimator, cfg.placebo_estimator):
        if est not in ("ols", "ppml", "tobit"):
            raise ValidationError(f"unknown estimator {est!r}")
    if cfg.rule not in ("literal", "significant_only"):
        raise ValidationError(f"unknown courtyard rule {cfg.rule!r}")
    return cfg


# -- serialization ---------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


class _Writer:
    """Collects a stage's artifacts under ``.partial`` names, renames on success."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.pending: list[Path] = []

    def _stamp(self):
        return {"config_hash": self.cfg.config_hash, "seed": self.cfg.seed}

    def _target(self, name) -> Path:
        p = self.cfg.output / (name + ".partial")
        self.pending.append(p)
        return p

    def json(self, name, payload: dict):
        body = {"meta": self._stamp(), **payload}
        text = json.dumps(_clean(body), indent=2, sort_keys=True, allow_nan=False)
        self._target(name).write_text(text + "\n", encoding="utf-8")

    def csv(self, name, frame: pd.DataFrame):
        buf = io.StringIO()
        buf.write(f"# config_hash={self.cfg.config_hash} seed={self.cfg.seed}\n")
        frame.to_csv(buf, index=False, lineterminator="\n", float_format="%.17g")
        self._target(name).write_text(buf.getvalue(), encoding="utf-8")

    def commit(self):
        for p in self.pending:
            os.replace(p, p.with_suffix(""))
        self.pending = []


def read_json(outdir: Path, name: str) -> dict:
    p = Path(outdir) / name
    if not p.exists():
        raise MissingArtifact(f"{name} not found in {outdir}; run the upstream stage first")
    return json.loads(p.read_text(encoding="utf-8"))


def read_csv(outdir: Path, name: str) -> pd.DataFrame:
    p = Path(outdir) / name
    if not p.exists():
        raise MissingArtifact(f"{name} not found in {outdir}; run the upstream stage first")
    return pd.read_csv(p, comment="#", dtype={"field": str})


# -- stages ------------------------------------------------------------------------

def _load_panel(cfg: PipelineConfig, dim: str) -> PanelDataset:
    schema = dict(cfg.schema, outcomes=[cfg.outcome], counts=[cfg.outcome])
    return load_csv(cfg.panel_path(dim), schema)


def _grouped(cfg, dim):
    data = _load_panel(cfg, dim)
    panel = classo_panel(data, cfg.event.focal_region, cfg.counter[dim], cfg.outcome)
    return build_grouped_eventstudy(panel, cfg.event)


def _fit_dict(fit) -> dict:
    d = fit.to_dict()
    d.pop("vcov", None)
    return d


def stage_classo(cfg: PipelineConfig, w: _Writer) -> None:
    fits, table2 = {}, {}
    for dim in cfg.dimensions:
        design = _grouped(cfg, dim)
        cf = fit_classo(design.data, design.outcome, design.regressors, design.fe, cfg.classo)
        if cf.penalty_weight == 0:
            logger.info("%s: c=0, PLS degenerates to per-unit OLS; centroids are group averages", dim)
        post = post_lasso(design.data, cf, design.outcome, design.regressors, design.fe)
        pooled = ols_fit(
            design.data[design.outcome],
            pd.DataFrame({r: design.data[r] for r in design.regressors}),
            fe=design.fe.codes(design.data),
            cluster=_fe_cluster(design),
        )
        fits[dim] = {**cf.to_dict(), "degenerate_event": design.degenerate}
        table2[dim] = {
            "pooled": _fit_dict(pooled),
            "classo": {
                f"Group{k + 1}": {r: cf.alpha[k, j] for j, r in enumerate(cf.names)} for k in range(cf.config.K)
            },
            "post_lasso": {
                f"Group{g}": {
                    "coef": {r: post.coef(r, g) for r in post.regressors},
                    "se": {r: post.se(r, g) for r in post.regressors},
                    "pvalue": {r: float(post.fit.pvalues[f"{r}:g{g}"]) for r in post.regressors},
                }
                for g in post.groups
            },
            "group_sizes": {f"Group{k + 1}": int(s) for k, s in enumerate(cf.group_sizes)},
            "n_obs": post.fit.n_obs,
            "r_squared": post.fit.r_squared,
            "penalty_weight": cf.penalty_weight,
            "degenerate": cf.penalty_weight == 0,
        }
    w.json("classo_fit.json", {"fits": fits})
    w.json("table2.json", {"columns": table2})
    if cfg.grid:
        sweep = []
        for dim in cfg.dimensions:
            design = _grouped(cfg, dim)
            for K, c in cfg.grid:
                cf = fit_classo(design.data, design.outcome, design.regressors, design.fe, replace(cfg.classo, K=K, c=c))
                sweep.append(
                    {
                        "dimension": dim,
                        "K": K,
                        "c": c,
                        "group_sizes": cf.group_sizes.tolist(),
                        "alpha": cf.to_dict()["alpha"],
                        "converged": cf.converged,
                    }
                )
        w.json("classo_grid.json", {"grid": sweep})


def _fe_cluster(design):
    from .panel import ClusterKey

    return ClusterKey.from_factors(design.data, design.fe.factors[0], design.fe.month_fe)


def stage_courtyard(cfg: PipelineConfig, w: _Writer) -> None:
    fits = read_json(cfg.output, "classo_fit.json")["fits"]
    out = None
    for dim in cfg.dimensions:
        if dim not in fits:
            raise MissingArtifact(f"classo_fit.json has no {dim} fit")
        design = _grouped(cfg, dim)
        assignment = pd.Series(fits[dim]["assignment"], name="group")
        post = post_lasso(design.data, assignment, design.outcome, design.regressors, design.fe)
        flags = classify_courtyard(post, "Post", cfg.rule)
        frame = pd.DataFrame({"field": flags.index.astype(str), f"group_{dim}": assignment.reindex(flags.index).to_numpy(), dim: flags.to_numpy()})
        out = frame if out is None else out.merge(frame, on="field", how="outer")
    out = out.sort_values("field").reset_index(drop=True)
    w.csv("courtyard.csv", out)


def _treated(cfg, dim) -> np.ndarray:
    flags = read_csv(cfg.output, "courtyard.csv")
    if dim not in flags:
        raise MissingArtifact(f"courtyard.csv has no {dim} column")
    return np.sort(flags.loc[flags[dim] == 1, "field"].astype(str).to_numpy())


def _effect_dict(est, se) -> dict:
    est, se = float(est), float(se)
    return {"coef": est, "se": se, "pvalue": float(2 * stats.norm.sf(abs(est / se))) if se > 0 else None}


def _effect_row(fit, term):
    return _effect_dict(*ddd_effect(fit, term))


def stage_ddd(cfg: PipelineConfig, w: _Writer) -> None:
    ev = cfg.event
    term = ev.triple_term
    table3, table4 = {}, {}
    columns = (("1", "ols", False), ("2", "ols", True), ("3", "ppml", False), ("4", "tobit", False), ("5", "tobit", True))
    for dim in cfg.dimensions:
        data = _load_panel(cfg, dim)
        treated = _treated(cfg, dim)
        cols = {}
        for tag, est, trend in columns:
            fit = estimate_ddd(data, treated, ev, est, trend=trend)
            row = {"estimator": est.upper() if est != "tobit" else "Tobit", "trend": trend, "n_obs": fit.n_obs}
            row[term] = _effect_row(fit, term)
            tname = f"Year×Courtyard×{ev.focal_region}"
            if trend:
                if est == "tobit":
                    row[tname] = _effect_row(fit, tname)
                else:
                    row[tname] = {"coef": float(fit.params[tname]), "se": float(fit.bse[tname]),
                                  "pvalue": float(fit.pvalues[tname])}
            row["r_squared"] = getattr(fit, "pseudo_r_squared", None) if est != "ols" else fit.r_squared
            cols[tag] = row
        table3[dim] = cols
        dd = {}
        for est in ("ols", "ppml"):
            for region, fit in dd_by_region(data, treated, ev, est).items():
                dd[f"{est}:{region}"] = {
                    "estimator": est.upper(),
                    "region": region,
                    "Post×Courtyard": {
                        "coef": float(fit.params["Post×Courtyard"]),
                        "se": float(fit.bse["Post×Courtyard"]),
                        "pvalue": float(fit.pvalues["Post×Courtyard"]),
                    },
                    "n_obs": fit.n_obs,
                }
        table4[dim] = dd
    w.json("table3.json", {"columns": table3, "term": term})
    w.json("table4.json", {"columns": table4})


def stage_event_study(cfg: PipelineConfig, w: _Writer) -> None:
    ev = replace(cfg.event, time_fe=False)
    for dim in cfg.dimensions:
        data = _load_panel(cfg, dim)
        res = estimate_event_study(data, _treated(cfg, dim), ev, cfg.event_estimator)
        name = "event_study.csv" if dim == "inflow" else f"event_study_{dim}.csv"
        w.csv(name, res.plot_frame())
        stat, df, p = res.pretrend_wald()
        w.json(name.replace(".csv", ".json"), {"estimator": cfg.event_estimator, "pretrend_wald": {"stat": stat, "df": df, "pvalue": p}})


def stage_placebo(cfg: PipelineConfig, w: _Writer) -> None:
    data = _load_panel(cfg, "inflow")
    dist = run_placebo(data, _treated(cfg, "inflow"), cfg.event, R=cfg.reps, seed=cfg.seed, estimator=cfg.placebo_estimator)
    w.csv("placebo.csv", dist.to_frame())
    w.json("placebo.json", dist.summary())


def _flags_table(cfg) -> pd.DataFrame:
    flags = read_csv(cfg.output, "courtyard.csv")
    keep = ["field"] + [d for d in DIMENSIONS if d in flags]
    return flags[keep]


def stage_determinants(cfg: PipelineConfig, w: _Writer) -> None:
    if cfg.covariates is None:
        raise ValidationError("determinants stage needs [inputs] covariates")
    cov = pd.read_csv(cfg.covariates, dtype={"field": str, "ipc4": str}, keep_default_na=False)
    table = build_determinants_table(_flags_table(cfg), cov)
    cols = {}
    outcomes = [d for d in ("inflow", "outflow", "both") if d in table]
    n = 0
    for y in outcomes:
        for fe in (False, True):
            if fe and "ipc4" not in table:
                continue
            n += 1
            fit = determinants_probit(table, y, ipc4_fe=fe)
            me = fit.marginal_effects
            cols[str(n)] = {
                "outcome": y,
                "ipc4_fe": fe,
                "ame": {k: _effect_dict(me.loc[k, "ame"], me.loc[k, "se"]) for k in me.index},
                "n_obs": fit.n_obs,
                "n_dropped": fit.n_dropped,
                "pseudo_r_squared": fit.pseudo_r_squared,
            }
    summary = courtyard_summary(table)
    w.json("table5.json", {"columns": cols, "summary": summary.to_dict(orient="index")})


def stage_treatratio(cfg: PipelineConfig, w: _Writer) -> None:
    if cfg.concordance is None:
        logger.info("no concordance configured; treatratio skipped")
        return
    dim = cfg.treatratio_dimension
    data = _load_panel(cfg, dim)
    totals = pd.Series(data[cfg.outcome]).groupby(data.unit).sum()
    flags = read_csv(cfg.output, "courtyard.csv").set_index("field")[dim]
    conc = pd.read_csv(cfg.concordance, dtype=str, keep_default_na=False)
    for c in ("field", "industry"):
        if c not in conc:
            raise ValidationError(f"concordance needs a {c!r} column")
    table = treat_ratio_table(conc, totals, flags)
    w.csv("treatratio.csv", table.reset_index())


STAGE_FUNCS = {
    "classo": stage_classo,
    "courtyard": stage_courtyard,
    "ddd": stage_ddd,
    "event_study": stage_event_study,
    "placebo": stage_placebo,
    "determinants": stage_determinants,
    "treatratio": stage_treatratio,
}


def run_stage(cfg: PipelineConfig, stage: str) -> None:
    if stage not in STAGE_FUNCS:
        raise ValidationError(f"unknown stage {stage!r}; choose from {STAGES}")
    cfg.output.mkdir(parents=True, exist_ok=True)
    w = _Writer(cfg)
    logger.info("stage %s", stage)
    STAGE_FUNCS[stage](cfg, w)
    w.commit()


def run_pipeline(cfg: PipelineConfig, stages=None) -> Path:
    """Run the stages in order; raises on the first failure, leaving ``.partial`` files."""
    for stage in stages or STAGES:
        if stage == "determinants" and cfg.covariates is None:
            logger.info("no covariates configured; determinants skipped")
            continue
        try:
            run_stage(cfg, stage)
        except Exception as exc:
            exc.stage = stage
            raise
    return cfg.output


# -- report ------------------------------------------------------------------------

def stars(p) -> str:
    if p is None or not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def _g(x) -> str:
    return "" if x is None else f"{x:.6g}"


def _cell(d) -> str:
    return f"{_g(d['coef'])}{stars(d.get('pvalue'))} ({_g(d['se'])})"


def emit_report(outdir) -> str:
    """Markdown summary of a complete artifact directory."""
    outdir = Path(outdir)
    for name in ARTIFACTS:
        if not (outdir / name).exists():
            raise MissingArtifact(f"missing artifact {name}")
    lines = ["# Pipeline report", ""]
    meta = read_json(outdir, "table2.json")["meta"]
    lines += [f"config hash `{meta['config_hash']}`, seed {meta['seed']}", "", "## Artifacts", ""]
    present = [n for n in ARTIFACTS] + [n for n in ("treatratio.csv",) if (outdir / n).exists()]
    lines += [f"- {n}" for n in present] + [""]

    t2 = read_json(outdir, "table2.json")["columns"]
    lines += ["## Grouped event study (post-Lasso)", ""]
    for dim, col in t2.items():
        groups = list(col["post_lasso"])
        regs = list(next(iter(col["post_lasso"].values()))["coef"]) if groups else []
        lines += [f"### {dim}", "", "| term | pooled | " + " | ".join(groups) + " |", "|---" * (len(groups) + 2) + "|"]
        for r in regs:
            pooled = {k: col["pooled"][k].get(r) for k in ("coef", "se")}
            pooled["pvalue"] = col["pooled"]["pvalue"].get(r)
            cells = [_cell({k: col["post_lasso"][g][k][r] for k in ("coef", "se", "pvalue")}) for g in groups]
            lines.append(f"| {r} | {_cell(pooled)} | " + " | ".join(cells) + " |")
        lines.append("")

    t3 = read_json(outdir, "table3.json")
    term = t3["term"]
    lines += ["## Triple differences", ""]
    for dim, cols in t3["columns"].items():
        tags = list(cols)
        lines += [f"### {dim}", "", "| | " + " | ".join(f"({t}) {cols[t]['estimator']}" for t in tags) + " |", "|---" * (len(tags) + 1) + "|"]
        lines.append(f"| {term} | " + " | ".join(_cell(cols[t][term]) for t in tags) + " |")
        lines.append("")

    t4 = read_json(outdir, "table4.json")["columns"]
    lines += ["## Difference in differences by region", ""]
    for dim, cols in t4.items():
        lines += [f"### {dim}", "", "| column | Post×Courtyard |", "|---|---|"]
        lines += [f"| {k} | {_cell(v['Post×Courtyard'])} |" for k, v in cols.items()]
        lines.append("")

    es = read_csv(outdir, "event_study.csv")
    lines += ["## Event study", "", f"{len(es)} coefficients in event_study.csv (columns s, coef, se, lo, hi).", ""]

    pj = outdir / "placebo.json"
    if pj.exists():
        ps = json.loads(pj.read_text(encoding="utf-8"))
        lines += [
            "## Placebo",
            "",
            f"R={ps['R']}, actual {_g(ps['actual'])}, placebo mean {_g(ps['mean'])}, sd {_g(ps['sd'])}, "
            f"two-sided p {_g(ps['p_value'])}. Histogram data in placebo.csv.",
            "",
        ]

    t5 = read_json(outdir, "table5.json")
    lines += ["## Determinants (Probit average marginal effects)", ""]
    cols = t5["columns"]
    if cols:
        tags = list(cols)
        names = list(next(iter(cols.values()))["ame"])
        lines += ["| | " + " | ".join(f"({t}) {cols[t]['outcome']}{' +IPC4 FE' if cols[t]['ipc4_fe'] else ''}" for t in tags) + " |",
                  "|---" * (len(tags) + 1) + "|"]
        for nm in names:
            lines.append(f"| {nm} | " + " | ".join(_cell(cols[t]["ame"][nm]) for t in tags) + " |")
        lines.append("")
    if (outdir / "treatratio.csv").exists():
        tr = read_csv(outdir, "treatratio.csv")
        lines += ["## TreatRatio", "", "| industry | TreatRatio |", "|---|---|"]
        lines += [f"| {r.industry} | {_g(r.treat_ratio)} |" for r in tr.itertuples()]
        lines.append("")
    return "\n".join(lines)
