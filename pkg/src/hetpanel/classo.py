"""Classifier-Lasso: penalized least squares with latent group structure.

The estimator minimizes

    (1/NT) sum_i sum_t (y_it - x_it' b_i)^2 + (lam/N) sum_i prod_k ||b_i - a_k||

over unit slopes ``b_i`` and group centroids ``a_k`` with
``lam = c * Var(y) * T**(-1/3)``.  Each outer iteration visits the groups
in turn.  For group k the product is frozen at the current values of the
other factors, which leaves a convex problem in ``(b, a_k)``:

    sum_i LS_i(b_i) + mu_i ||b_i - a_k||,   mu_i = (lam/N) prod_{l!=k} ||b_i - a_l||.

For fixed ``a_k`` each ``b_i`` has a closed form up to a scalar root, and the
profiled objective is smooth and convex in ``a_k``, so the block is solved
exactly by L-BFGS on ``a_k``.  A backtracking guard keeps the full
objective non-increasing.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import optimize

from .exceptions import DegenerateUnit, EmptyGroup, ValidationError
from .panel import ClusterKey, FixedEffectSpec, PanelDataset, factor_codes
from .regress import RegressionFit, ols_fit

__all__ = [
    "ClassoConfig",
    "ClassoFit",
    "fit_classo",
    "assign_groups",
    "post_lasso",
    "PostLassoResult",
    "classify_courtyard",
    "penalty_weight",
    "pls_objective",
    "unit_ols",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassoConfig:
    K: int = 3
    c: float = 0.25
    tol: float = 1e-6
    max_iter: int = 500
    seed: int = 0
    penalty: str = "product"
    n_init: int = 10

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be at least 1")
        if self.c < 0:
            raise ValidationError("c must be nonnegative")
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if self.penalty not in ("product", "additive"):
            raise ValidationError("penalty must be 'product' or 'additive'")


@dataclass
class ClassoFit:
    units: np.ndarray
    names: list[str]
    beta: np.ndarray
    alpha: np.ndarray
    assignment: np.ndarray
    objective_trace: list[float]
    converged: bool
    iterations: int
    config: ClassoConfig
    penalty_weight: float
    ols: np.ndarray = field(repr=False, default=None)

    @property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.config.K + 1)[1:]

    @property
    def empty_groups(self) -> list[int]:
        return [k + 1 for k, s in enumerate(self.group_sizes) if s == 0]

    def assignment_series(self) -> pd.Series:
        return pd.Series(self.assignment, index=pd.Index(self.units, name="unit"), name="group")

    def centroid_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            self.alpha.T, index=self.names, columns=[f"Group{k + 1}" for k in range(len(self.alpha))]
        )

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "penalty_weight": float(self.penalty_weight),
            "names": list(self.names),
            "alpha": [[None if not np.isfinite(v) else float(v) for v in row] for row in self.alpha],
            "assignment": {str(u): int(g) for u, g in zip(self.units, self.assignment)},
            "objective_trace": [float(v) for v in self.objective_trace],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def penalty_weight(y: np.ndarray, T: int, c: float) -> float:
    """``c * Var(y) * T**(-1/3)`` on the pooled outcome."""
    return float(c * np.var(y) * T ** (-1.0 / 3.0))


def assign_groups(beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Nearest centroid in Euclidean norm, 1-based, ties to the lowest index."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    d = np.linalg.norm(beta[:, None, :] - alpha[None, :, :], axis=2)
    d[:, ~np.all(np.isfinite(alpha), axis=1)] = np.inf
    return np.argmin(d, axis=1) + 1


# -- sufficient statistics -----------------------------------------------------

@dataclass
class _Moments:
    G: np.ndarray  # (N, p, p)  X_i'X_i / NT
    h: np.ndarray  # (N, p)     X_i'y_i / NT
    c: np.ndarray  # (N,)       y_i'y_i / NT
    evals: np.ndarray
    evecs: np.ndarray

    @classmethod
    def from_arrays(cls, Y, X):
        N, T = Y.shape
        G = np.einsum("itp,itq->ipq", X, X) / (N * T)
        h = np.einsum("itp,it->ip", X, Y) / (N * T)
        c = np.einsum("it,it->i", Y, Y) / (N * T)
        evals, evecs = np.linalg.eigh(G)
        return cls(G, h, c, evals, evecs)

    def ls(self, beta):
        return self.c - 2 * np.einsum("ip,ip->i", beta, self.h) + np.einsum("ip,ipq,iq->i", beta, self.G, beta)

    def ls_grad(self, beta):
        return 2 * np.einsum("ipq,iq->ip", self.G, beta) - 2 * self.h


def unit_ols(Y: np.ndarray, X: np.ndarray, units=None) -> np.ndarray:
    """Per-unit least squares slopes, shape (N, p)."""
    N, T, p = X.shape
    if T < p + 2:
        raise ValidationError(f"need T >= p + 2 observations per unit, have T={T}, p={p}")
    out = np.empty((N, p))
    for i in range(N):
        XtX = X[i].T @ X[i]
        scale = max(np.trace(XtX), 1e-300)
        if np.linalg.cond(XtX) > 1e12 or np.linalg.eigvalsh(XtX).min() <= 1e-12 * scale:
            u = units[i] if units is not None else i
            raise DegenerateUnit(f"unit {u!r} has collinear or constant regressors", unit=u)
        out[i] = np.linalg.solve(XtX, X[i].T @ Y[i])
    return out


def pls_objective(mom: _Moments, beta, alpha, lam, penalty="product") -> float:
    N = len(beta)
    ls = float(np.sum(mom.ls(beta)))
    if lam == 0:
        return ls
    d = np.linalg.norm(beta[:, None, :] - alpha[None, :, :], axis=2)
    if penalty == "product":
        pen = np.prod(d, axis=1)
    else:
        pen = np.sum(d**2, axis=1)
    return ls + lam / N * float(np.sum(pen))


# -- block solver --------------------------------------------------------------

def _prox_units(mom: _Moments, alpha_k: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """delta_i minimizing LS_i(alpha_k + delta) + mu_i ||delta|| for every unit."""
    N, p = mom.h.shape
    b = mom.h - mom.G @ alpha_k  # half the negative LS gradient at alpha_k
    delta = np.zeros((N, p))
    two_b = 2 * b
    norm2b = np.linalg.norm(two_b, axis=1)
    free = mu <= 0
    if free.any():
        delta[free] = np.linalg.solve(mom.G[free], b[free][..., None])[..., 0]
    active = (~free) & (norm2b > mu)
    if not active.any():
        return delta
    Q = mom.evecs[active]
    lam = mom.evals[active]
    cvec = np.einsum("ipq,ip->iq", Q, two_b[active])
    m = mu[active][:, None]
    c2 = cvec**2
    # phi(s) = (sum c_j^2 / (2 lam_j s + m)^2)^(-1/2) - 1 is concave increasing;
    # Newton from s = 0 climbs monotonically to the root.
    s = np.zeros(len(m))
    for _ in range(200):
        den = 2 * lam * s[:, None] + m
        g = np.sum(c2 / den**2, axis=1)
        gp = -4 * np.sum(c2 * lam / den**3, axis=1)
        phi = g ** -0.5 - 1
        if np.all(np.abs(phi) < 1e-15):
            break
        dphi = -0.5 * g ** -1.5 * gp
        s = s - phi / dphi
    den = 2 * lam * s[:, None] + m
    coef = cvec * s[:, None] / den
    delta[active] = np.einsum("ipq,iq->ip", Q, coef)
    return delta


def _solve_block(mom: _Moments, alpha_k0: np.ndarray, mu: np.ndarray):
    """Jointly minimize sum_i LS_i(b_i) + mu_i ||b_i - a|| over (b, a)."""

    def profiled(a):
        delta = _prox_units(mom, a, mu)
        beta = a + delta
        val = np.sum(mom.ls(beta)) + np.sum(mu * np.linalg.norm(delta, axis=1))
        grad = np.sum(mom.ls_grad(beta), axis=0)
        return val, grad

    res = optimize.minimize(
        profiled,
        alpha_k0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-12},
    )
    a = res.x
    return a + _prox_units(mom, a, mu), a


def _additive_fit(mom, beta, alpha, lam, tol, max_iter):
    """Block updates for the additive squared penalty (closed form)."""
    N, p = beta.shape
    K = len(alpha)
    trace = [pls_objective(mom, beta, alpha, lam, "additive")]
    eye = np.eye(p)
    for it in range(1, max_iter + 1):
        prev = alpha.copy()
        rhs = mom.h + lam / N * alpha.sum(axis=0)
        beta = np.linalg.solve(mom.G + lam * K / N * eye, rhs[..., None])[..., 0]
        alpha = np.repeat(beta.mean(axis=0)[None, :], K, axis=0)
        trace.append(pls_objective(mom, beta, alpha, lam, "additive"))
        if np.max(np.linalg.norm(alpha - prev, axis=1)) < tol:
            return beta, alpha, trace, True, it
    return beta, alpha, trace, False, max_iter


def _kmeans_init(beta, K, seed, n_init):
    from sklearn.cluster import KMeans

    if K == 1:
        return beta.mean(axis=0, keepdims=True)
    n_distinct = len(np.unique(np.round(beta, 12), axis=0))
    km = KMeans(n_clusters=min(K, n_distinct), init="k-means++", n_init=n_init, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        km.fit(beta)
    centers = km.cluster_centers_
    if len(centers) < K:
        extra = beta[np.random.default_rng(seed).choice(len(beta), K - len(centers))]
        centers = np.vstack([centers, extra])
    return centers


def _panel_arrays(data: PanelDataset, outcome: str, regressors: Sequence[str]):
    key = "unit*region" if data.region is not None else "unit"
    codes = factor_codes(data, key)
    N = int(codes.max()) + 1
    T = data.n_periods
    if data.n_rows != N * T:
        raise ValidationError("C-Lasso needs a balanced panel")
    order = np.lexsort((data.time, codes))
    Y = data[outcome][order].reshape(N, T)
    X = np.stack([data[r][order] for r in regressors], axis=-1).reshape(N, T, len(regressors))
    if data.region is not None:
        ids = np.array([f"{u}|{r}" for u, r in zip(data.unit[order][::T], data.region[order][::T])], dtype=object)
    else:
        ids = data.unit[order][::T]
    return Y, X, ids


def fit_classo(
    data: PanelDataset,
    outcome: str,
    regressors: Sequence[str],
    fe: FixedEffectSpec | None = FixedEffectSpec(("unit*month",)),
    cfg: ClassoConfig = ClassoConfig(),
    *,
    init_centroids: np.ndarray | None = None,
) -> ClassoFit:
    """Estimate unit slopes, K group centroids and the group assignment.

    Outcome and regressors are demeaned within ``fe`` first (pass ``fe=None``
    for data that is already transformed).
    """
    regressors = list(regressors)
    if fe is not None:
        from .panel import within_transform

        data = within_transform(data, [outcome] + regressors, fe)
    Y, X, units = _panel_arrays(data, outcome, regressors)
    N, T, p = X.shape
    if cfg.K > N:
        raise ValidationError(f"K={cfg.K} exceeds the number of units {N}")

    ols = unit_ols(Y, X, units)
    mom = _Moments.from_arrays(Y, X)
    lam = penalty_weight(Y.ravel(), T, cfg.c)

    if init_centroids is not None:
        alpha = np.array(init_centroids, dtype=float).reshape(cfg.K, p)
    else:
        alpha = _kmeans_init(ols, cfg.K, cfg.seed, cfg.n_init)

    if lam == 0:
        logger.info("penalty weight is zero: PLS degenerates to per-unit OLS")
        beta = ols.copy()
        assign = assign_groups(beta, alpha)
        for k in range(cfg.K):
            if np.any(assign == k + 1):
                alpha[k] = beta[assign == k + 1].mean(axis=0)
        trace = [pls_objective(mom, beta, alpha, 0.0)]
        return _finish(units, regressors, beta, alpha, trace, True, 0, cfg, lam, ols)

    if cfg.penalty == "additive":
        beta, alpha, trace, conv, it = _additive_fit(mom, ols.copy(), alpha, lam, cfg.tol, cfg.max_iter)
        return _finish(units, regressors, beta, alpha, trace, conv, it, cfg, lam, ols)

    beta = ols.copy()
    obj = pls_objective(mom, beta, alpha, lam)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        prev = alpha.copy()
        for k in range(cfg.K):
            others = [l for l in range(cfg.K) if l != k]
            if others:
                d = np.linalg.norm(beta[:, None, :] - alpha[None, others, :], axis=2)
                mu = lam / N * np.prod(d, axis=1)
            else:
                mu = np.full(N, lam / N)
            beta_new, a_new = _solve_block(mom, alpha[k].copy(), mu)
            alpha_new = alpha.copy()
            alpha_new[k] = a_new
            obj_new = pls_objective(mom, beta_new, alpha_new, lam)
            t = 1.0
            while obj_new > obj and t > 1e-6:
                t /= 2
                b_try = beta + t * (beta_new - beta)
                a_try = alpha.copy()
                a_try[k] = alpha[k] + t * (a_new - alpha[k])
                o_try = pls_objective(mom, b_try, a_try, lam)
                if o_try <= obj:
                    beta_new, alpha_new, obj_new = b_try, a_try, o_try
                    break
            if obj_new <= obj:
                beta, alpha, obj = beta_new, alpha_new, obj_new
        trace.append(obj)
        if np.max(np.linalg.norm(alpha - prev, axis=1)) < cfg.tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"C-Lasso did not converge in {cfg.max_iter} iterations; returning last iterate")
    return _finish(units, regressors, beta, alpha, trace, converged, it, cfg, lam, ols)


def _finish(units, names, beta, alpha, trace, converged, it, cfg, lam, ols):
    assign = assign_groups(beta, alpha)
    alpha = alpha.copy()
    for k in range(cfg.K):
        if not np.any(assign == k + 1):
            alpha[k] = np.nan
    return ClassoFit(
        units=np.asarray(units),
        names=list(names),
        beta=beta,
        alpha=alpha,
        assignment=assign,
        objective_trace=list(trace),
        converged=converged,
        iterations=it,
        config=cfg,
        penalty_weight=lam,
        ols=ols,
    )


# -- post-Lasso ----------------------------------------------------------------

@dataclass
class PostLassoResult:
    fit: RegressionFit
    regressors: list[str]
    groups: list[int]
    assignment: pd.Series

    def coef(self, regressor: str, group: int) -> float:
        return float(self.fit.params[f"{regressor}:g{group}"])

    def se(self, regressor: str, group: int) -> float:
        return float(self.fit.bse[f"{regressor}:g{group}"])

    def group_fit(self, group: int) -> pd.DataFrame:
        rows = {}
        for r in self.regressors:
            nm = f"{r}:g{group}"
            if nm in self.fit.params.index:
                rows[r] = {"coef": self.fit.params[nm], "se": self.fit.bse[nm], "t": self.fit.tvalues[nm]}
        return pd.DataFrame.from_dict(rows, orient="index")

    def table(self) -> pd.DataFrame:
        """Regressors x {coef, se} rows by Group1..GroupK columns."""
        idx = pd.MultiIndex.from_product([self.regressors, ["coef", "se"]])
        out = pd.DataFrame(index=idx, columns=[f"Group{g}" for g in self.groups], dtype=float)
        for g in self.groups:
            for r in self.regressors:
                nm = f"{r}:g{g}"
                if nm in self.fit.params.index:
                    out.loc[(r, "coef"), f"Group{g}"] = self.fit.params[nm]
                    out.loc[(r, "se"), f"Group{g}"] = self.fit.bse[nm]
        return out


def _unit_keys(data: PanelDataset) -> np.ndarray:
    if data.region is not None:
        return np.array([f"{u}|{r}" for u, r in zip(data.unit, data.region)], dtype=object)
    return data.unit


def post_lasso(
    data: PanelDataset,
    assignment,
    outcome: str,
    regressors: Sequence[str],
    fe: FixedEffectSpec = FixedEffectSpec(("unit*month",)),
    cluster: ClusterKey | str | None = "auto",
) -> PostLassoResult:
    """Pooled regression with every slope interacted with the group dummies.

    ``assignment`` maps unit id to group (a Series, dict or
    :class:`ClassoFit`).  The default cluster key is the fixed-effect cell.
    """
    if isinstance(assignment, ClassoFit):
        assignment = assignment.assignment_series()
    assignment = pd.Series(assignment)
    keys = _unit_keys(data)
    missing = set(np.unique(keys)) - set(assignment.index)
    if missing:
        raise ValidationError(f"assignment does not cover units {sorted(missing)[:5]}")
    g_row = assignment.reindex(keys).to_numpy(dtype=int)
    K = int(max(assignment.max(), 1))
    groups = []
    cols = {}
    for g in range(1, K + 1):
        mask = g_row == g
        if not mask.any():
            warnings.warn(f"group {g} is empty and is dropped from the post-Lasso design", stacklevel=2)
            continue
        groups.append(g)
        for r in regressors:
            cols[f"{r}:g{g}"] = data[r] * mask
    X = pd.DataFrame(cols)
    if cluster == "auto":
        cluster = ClusterKey.from_factors(data, fe.factors[0], fe.month_fe)
    elif isinstance(cluster, str):
        cluster = ClusterKey.from_factors(data, cluster, fe.month_fe)
    fit = ols_fit(data[outcome], X, fe=fe.codes(data), cluster=cluster, estimator="OLS post-Lasso")
    return PostLassoResult(fit=fit, regressors=list(regressors), groups=groups, assignment=assignment)


def classify_courtyard(
    post: PostLassoResult,
    term: str = "Post",
    rule: str = "literal",
    *,
    t_crit: float = 1.96,
    min_magnitude: float = 0.0,
) -> pd.Series:
    """Unit -> 1 if its group's ``term`` coefficient is negative.

    ``rule="significant_only"`` additionally requires ``|t| > t_crit``;
    ``min_magnitude`` requires ``coef < -min_magnitude``.
    """
    if rule not in ("literal", "significant_only"):
        raise ValidationError("rule must be 'literal' or 'significant_only'")
    flagged = set()
    for g in post.groups:
        nm = f"{term}:g{g}"
        if nm not in post.fit.params.index:
            continue
        b = post.fit.params[nm]
        ok = b < 0 and b < -min_magnitude
        if rule == "significant_only":
            ok = ok and abs(post.fit.tvalues[nm]) > t_crit
        if ok:
            flagged.add(g)
    out = post.assignment.isin(flagged).astype(int)
    out.name = "courtyard"
    return out
