"""Randomization inference over the treated field set."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .exceptions import TooManyTreated, ValidationError
from .panel import PanelDataset
from .study import EventConfig, ddd_effect, estimate_ddd

__all__ = ["PlaceboDistribution", "run_placebo", "draw_placebo_set", "ks_normal"]


@dataclass
class PlaceboDistribution:
    estimates: np.ndarray
    actual: float
    seed: int
    n_treated: int
    estimator: str

    @property
    def R(self) -> int:
        return len(self.estimates)

    @property
    def p_value(self) -> float:
        """Two-sided rank p: ``(1 + #{|placebo| >= |actual|}) / (R + 1)``."""
        hits = np.sum(np.abs(self.estimates) >= abs(self.actual))
        return float((1 + hits) / (self.R + 1))

    def band(self, level: float = 0.99) -> tuple[float, float]:
        a = (1 - level) / 2
        lo, hi = np.quantile(self.estimates, [a, 1 - a])
        return float(lo), float(hi)

    def outside_band(self, level: float = 0.99) -> bool:
        lo, hi = self.band(level)
        return not (lo <= self.actual <= hi)

    def summary(self) -> dict:
        est = self.estimates
        return {
            "R": self.R,
            "seed": self.seed,
            "n_treated": self.n_treated,
            "estimator": self.estimator,
            "actual": float(self.actual),
            "mean": float(est.mean()),
            "sd": float(est.std(ddof=1)) if self.R > 1 else float("nan"),
            "p_value": self.p_value,
            "band_99": list(self.band(0.99)),
            "ks_normal": ks_normal(est) if self.R > 2 else float("nan"),
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"rep": np.arange(self.R), "estimate": self.estimates})

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    def to_json(self, **kw) -> str:
        return json.dumps(self.summary(), **kw)


def ks_normal(x) -> float:
    """Kolmogorov-Smirnov distance to the normal with the sample mean and sd."""
    x = np.asarray(x, dtype=float)
    return float(stats.kstest(x, "norm", args=(x.mean(), x.std(ddof=1))).statistic)


def draw_placebo_set(units: np.ndarray, n_treated: int, seed: int, rep: int) -> np.ndarray:
    """Placebo treated fields for one replication; depends only on (seed, rep)."""
    rng = np.random.default_rng([seed, rep])
    return np.sort(rng.choice(units, size=n_treated, replace=False))


def run_placebo(
    data: PanelDataset,
    treated,
    cfg: EventConfig = EventConfig(),
    *,
    R: int = 1000,
    seed: int = 0,
    estimator: str = "ppml",
    trend: bool | None = None,
    n_treated: int | None = None,
) -> PlaceboDistribution:
    """Re-estimate the triple difference under ``R`` random treated sets.

    Fields are drawn uniformly without replacement, as many as in
    ``treated`` unless ``n_treated`` says otherwise.
    """
    if R < 1:
        raise ValidationError("R must be at least 1")
    units = data.units
    treated = np.asarray(list(treated), dtype=object)
    n = len(treated) if n_treated is None else int(n_treated)
    if n > len(units):
        raise TooManyTreated(f"{n} treated fields but only {len(units)} in the panel")
    if n < 1:
        raise ValidationError("need at least one treated field")
    term = cfg.triple_term
    actual, _ = ddd_effect(estimate_ddd(data, treated, cfg, estimator, trend=trend), term)
    est = np.empty(R)
    for rep in range(R):
        fake = draw_placebo_set(units, n, seed, rep)
        est[rep] = ddd_effect(estimate_ddd(data, fake, cfg, estimator, trend=trend), term)[0]
    return PlaceboDistribution(estimates=est, actual=actual, seed=seed, n_treated=n, estimator=estimator)
