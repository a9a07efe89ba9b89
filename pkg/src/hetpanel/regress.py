"""Weighted least squares with absorbed fixed effects and clustered covariance.

This is the linear core shared by the pooled and post-Lasso regressions, the
triple-difference designs and the IRLS loop of PPML.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import linalg, sparse, stats

from .exceptions import RankDeficient, TooFewClusters, ValidationError
from .panel import ClusterKey, _Factor, demean

__all__ = [
    "RegressionFit",
    "ols_fit",
    "clustered_vcov",
    "sandwich",
    "design_matrix",
    "find_aliased",
]

logger = logging.getLogger(__name__)

ALIAS_TOL = 1e-9


@dataclass
class RegressionFit:
    params: pd.Series
    vcov: pd.DataFrame
    n_obs: int
    dof_resid: int
    r_squared: float
    estimator: str = "OLS"
    n_clusters: int | None = None
    small_sample: float = 1.0
    r_squared_within: float | None = None
    dropped: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    resid: np.ndarray | None = field(default=None, repr=False)

    @property
    def coef(self) -> dict[str, float]:
        return self.params.to_dict()

    @property
    def bse(self) -> pd.Series:
        return pd.Series(np.sqrt(np.clip(np.diag(self.vcov.to_numpy()), 0, None)), index=self.params.index)

    @property
    def tvalues(self) -> pd.Series:
        return self.params / self.bse

    @property
    def pvalues(self) -> pd.Series:
        return pd.Series(2 * stats.norm.sf(np.abs(self.tvalues)), index=self.params.index)

    def conf_int(self, level: float = 0.95) -> pd.DataFrame:
        z = stats.norm.ppf(0.5 + level / 2)
        se = self.bse
        return pd.DataFrame({"lo": self.params - z * se, "hi": self.params + z * se})

    def wald_test(self, names: Sequence[str], values=None) -> tuple[float, int, float]:
        """Joint chi-square test of ``params[names] == values`` (default zero)."""
        names = [n for n in names if n in self.params.index]
        b = self.params[names].to_numpy()
        if values is not None:
            b = b - np.asarray(values, dtype=float)
        V = self.vcov.loc[names, names].to_numpy()
        stat = float(b @ np.linalg.lstsq(V, b, rcond=None)[0])
        df = len(names)
        return stat, df, float(stats.chi2.sf(stat, df))

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"coef": self.params, "se": self.bse, "t": self.tvalues, "p": self.pvalues}
        )

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "coef": {k: float(v) for k, v in self.params.items()},
            "se": {k: float(v) for k, v in self.bse.items()},
            "pvalue": {k: float(v) for k, v in self.pvalues.items()},
            "vcov": self.vcov.to_numpy().tolist(),
            "n_obs": int(self.n_obs),
            "dof_resid": int(self.dof_resid),
            "r_squared": float(self.r_squared),
            "n_clusters": None if self.n_clusters is None else int(self.n_clusters),
            "small_sample": float(self.small_sample),
            "dropped": list(self.dropped),
        }


def design_matrix(X, names: Sequence[str] | None = None) -> tuple[np.ndarray, list[str]]:
    if isinstance(X, pd.DataFrame):
        return X.to_numpy(dtype=float), [str(c) for c in X.columns]
    if isinstance(X, pd.Series):
        return X.to_numpy(dtype=float)[:, None], [str(X.name)]
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if names is None:
        names = [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValidationError("names do not match the number of columns")
    return X, list(names)


def find_aliased(Xw: np.ndarray, raw_norms: np.ndarray, tol: float = ALIAS_TOL) -> np.ndarray:
    """Boolean mask of columns linearly dependent on earlier columns.

    Unpivoted Householder QR: ``|R_jj|`` is the norm of column j after
    projecting out every column before it, so a tiny diagonal flags the later
    column of an aliased set.
    """
    if Xw.shape[1] == 0:
        return np.zeros(0, dtype=bool)
    R = linalg.qr(Xw, mode="r", check_finite=False)[0]
    diag = np.abs(np.diag(R[: Xw.shape[1], :]))
    if len(diag) < Xw.shape[1]:
        diag = np.concatenate([diag, np.zeros(Xw.shape[1] - len(diag))])
    return (raw_norms == 0) | (diag <= tol * np.maximum(raw_norms, 1e-300))


def _cluster_ids(cluster, n):
    if cluster is None:
        return None
    ids = cluster.ids if isinstance(cluster, ClusterKey) else ClusterKey(np.asarray(cluster)).ids
    if len(ids) != n:
        raise ValidationError("cluster key length does not match the number of rows")
    return ids


def _nested(fe_codes, cluster_ids) -> bool:
    """True when every fixed-effect level sits inside a single cluster."""
    for codes in fe_codes:
        pairs = np.unique(np.column_stack([codes, cluster_ids]), axis=0)
        if len(pairs) != len(np.unique(codes)):
            return False
    return True


def _fe_dof(fe_codes) -> int:
    if not fe_codes:
        return 0
    levels = [int(np.max(c)) + 1 for c in fe_codes]
    return sum(levels) - (len(levels) - 1)


def sandwich(bread: np.ndarray, scores: np.ndarray, cluster_ids=None, factor: float = 1.0) -> np.ndarray:
    """``factor * B (sum_g s_g s_g') B`` with per-row scores summed within clusters."""
    if cluster_ids is None:
        S = scores
    else:
        G = int(cluster_ids.max()) + 1
        ind = sparse.csr_matrix(
            (np.ones(len(cluster_ids)), (cluster_ids, np.arange(len(cluster_ids)))),
            shape=(G, len(cluster_ids)),
        )
        S = np.asarray(ind @ scores)
    meat = S.T @ S
    V = factor * bread @ meat @ bread
    return (V + V.T) / 2


def clustered_vcov(X, resid, cluster, weights=None, *, bread=None, k=None) -> np.ndarray:
    """CR1 cluster-robust covariance of least-squares coefficients.

    Small-sample factor ``G/(G-1) * (n-1)/(n-k)``; ``k`` defaults to the
    number of columns of ``X``.
    """
    X, _ = design_matrix(X)
    resid = np.asarray(resid, dtype=float)
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    ids = _cluster_ids(cluster, n)
    G = int(ids.max()) + 1
    if G < 2:
        raise TooFewClusters(f"need at least 2 clusters, got {G}")
    if bread is None:
        bread = np.linalg.inv(X.T @ (X * w[:, None]))
    k = p if k is None else k
    factor = G / (G - 1) * (n - 1) / (n - k)
    return sandwich(bread, X * (w * resid)[:, None], ids, factor)


def ols_fit(
    y,
    X,
    weights=None,
    fe: Sequence[np.ndarray] | None = None,
    cluster=None,
    *,
    names: Sequence[str] | None = None,
    on_rank_deficient: str = "drop",
    estimator: str = "OLS",
    demean_tol: float = 1e-10,
) -> RegressionFit:
    """Weighted least squares on the fixed-effect-absorbed design.

    ``fe`` is a list of integer code arrays (see ``FixedEffectSpec.codes``);
    ``cluster`` a :class:`ClusterKey` or array of cluster labels.  Without a
    cluster key the HC1 robust covariance is returned.  Columns aliased with
    earlier columns (or with the fixed effects) are dropped and listed in
    ``fit.dropped``; pass ``on_rank_deficient="raise"`` to get
    :class:`RankDeficient` instead.
    """
    X, names = design_matrix(X, names)
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    if X.shape[0] != n:
        raise ValidationError(f"X has {X.shape[0]} rows but y has {n}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).ravel()
    if np.any(w < 0):
        raise ValidationError("weights must be nonnegative")
    fe = list(fe) if fe else []
    factors = [_Factor(c) for c in fe]
    sw = np.sqrt(w)

    raw_norms = np.linalg.norm(X * sw[:, None], axis=0)
    if factors:
        Z = demean(np.column_stack([y, X]), factors, weights if weights is not None else None, tol=demean_tol)
        yd, Xd = Z[:, 0], Z[:, 1:]
    else:
        yd, Xd = y, X

    aliased = find_aliased(Xd * sw[:, None], raw_norms)
    dropped = [nm for nm, a in zip(names, aliased) if a]
    if dropped:
        if on_rank_deficient == "raise":
            raise RankDeficient(f"aliased columns: {dropped}", dropped)
        logger.info("dropping aliased columns %s", dropped)
    keep = ~aliased
    Xk = Xd[:, keep]
    kept = [nm for nm, a in zip(names, aliased) if not a]
    p = Xk.shape[1]

    Xw = Xk * sw[:, None]
    yw = yd * sw
    if p:
        Q, R, piv = linalg.qr(Xw, mode="economic", pivoting=True)
        coef_piv = linalg.solve_triangular(R, Q.T @ yw)
        beta = np.empty(p)
        beta[piv] = coef_piv
        Rinv = linalg.solve_triangular(R, np.eye(p))
        bread_piv = Rinv @ Rinv.T
        bread = np.empty((p, p))
        bread[np.ix_(piv, piv)] = bread_piv
    else:
        beta = np.zeros(0)
        bread = np.zeros((0, 0))
    resid = yd - Xk @ beta

    ids = _cluster_ids(cluster, n)
    fe_dof = _fe_dof(fe)
    diagnostics = {}
    if ids is not None:
        G = int(ids.max()) + 1
        if G < 2:
            raise TooFewClusters(f"need at least 2 clusters, got {G}")
        nested = bool(fe) and _nested(fe, ids)
        k_df = p + (0 if nested else fe_dof)
        factor = G / (G - 1) * (n - 1) / (n - k_df)
        if G > 0.9 * n:
            diagnostics["near_singleton_clusters"] = True
            logger.info("%d clusters for %d rows: clustering is close to heteroskedasticity-robust", G, n)
        diagnostics["fe_nested_in_clusters"] = nested
    else:
        G = None
        k_df = p + fe_dof
        factor = n / (n - k_df)
    V = sandwich(bread, Xk * (w * resid)[:, None], ids, factor) if p else np.zeros((0, 0))

    ssr = float(np.sum(w * resid**2))
    ybar = np.sum(w * y) / np.sum(w)
    tss = float(np.sum(w * (y - ybar) ** 2))
    tss_within = float(np.sum(w * yd**2))
    r2 = 1 - ssr / tss if tss > 0 else float("nan")
    r2w = 1 - ssr / tss_within if tss_within > 0 else float("nan")

    return RegressionFit(
        params=pd.Series(beta, index=kept, dtype=float),
        vcov=pd.DataFrame(V, index=kept, columns=kept),
        n_obs=n,
        dof_resid=n - p - fe_dof,
        r_squared=r2,
        r_squared_within=r2w if factors else None,
        estimator=estimator,
        n_clusters=G,
        small_sample=factor,
        dropped=dropped,
        diagnostics=diagnostics,
        resid=resid,
    )
