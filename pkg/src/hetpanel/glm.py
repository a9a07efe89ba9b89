"""Likelihood estimators: Poisson PML with absorbed fixed effects, left-censored
Tobit and Probit, with average marginal effects.

Log-likelihoods and analytic scores are exposed as plain functions so they
can be checked against finite differences.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import linalg, special, stats

from .exceptions import (
    AllZeroOutcome,
    NoConvergence,
    NoVariation,
    Separation,
    TooFewClusters,
    ValidationError,
)
from .panel import _Factor, demean
from .regress import RegressionFit, _cluster_ids, design_matrix, find_aliased, sandwich

__all__ = [
    "LikelihoodFit",
    "fit_ppml",
    "fit_tobit",
    "fit_probit",
    "tobit_ame",
    "tobit_marginal_effects",
    "probit_ame",
    "poisson_loglik",
    "poisson_score",
    "probit_loglik",
    "probit_score",
    "tobit_loglik",
    "tobit_score",
]

logger = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


@dataclass
class LikelihoodFit(RegressionFit):
    log_likelihood: float = float("nan")
    pseudo_r_squared: float = float("nan")
    trace: list[float] = field(default_factory=list)
    converged: bool = True
    iterations: int = 0
    sigma: float | None = None
    censor_point: float | None = None
    n_dropped: int = 0
    marginal_effects: pd.DataFrame | None = None
    fitted: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = super().to_dict()
        out.update(
            log_likelihood=float(self.log_likelihood),
            pseudo_r_squared=float(self.pseudo_r_squared),
            converged=bool(self.converged),
            iterations=int(self.iterations),
        )
        if self.sigma is not None:
            out["sigma"] = float(self.sigma)
        if self.marginal_effects is not None:
            out["marginal_effects"] = {
                k: {"ame": float(r["ame"]), "se": float(r["se"])}
                for k, r in self.marginal_effects.iterrows()
            }
        return out


def _ml_vcov(bread, scores, cluster, n):
    ids = _cluster_ids(cluster, n)
    if ids is None:
        return sandwich(bread, scores, None, n / (n - 1)), None
    G = int(ids.max()) + 1
    if G < 2:
        raise TooFewClusters(f"need at least 2 clusters, got {G}")
    return sandwich(bread, scores, ids, G / (G - 1)), G


# -- Poisson -------------------------------------------------------------------

def poisson_loglik(beta, y, X) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - np.exp(eta) - special.gammaln(y + 1)))


def poisson_score(beta, y, X) -> np.ndarray:
    return X.T @ (y - np.exp(X @ beta))


def _deviance(y, mu):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(y > 0, y * np.log(y / mu), 0.0)
    return 2 * float(np.sum(t - (y - mu)))


def _drop_zero_cells(y, fe):
    """Rows in fixed-effect cells whose outcome is identically zero."""
    keep = np.ones(len(y), dtype=bool)
    while True:
        changed = False
        for codes in fe:
            tot = np.bincount(codes[keep], weights=y[keep], minlength=codes.max() + 1)
            bad = keep & (tot[codes] == 0)
            if bad.any():
                keep &= ~bad
                changed = True
        if not changed:
            return keep


def _check_separation_count(y, X, names):
    pos = y > 0
    for j, nm in enumerate(names):
        x = X[:, j]
        for s in (1.0, -1.0):
            z = s * x
            if np.any(z > 0) and np.all(z[pos] == 0) and np.all(z[~pos] >= 0):
                raise Separation(f"regressor {nm!r} separates zero outcomes", column=nm)


def fit_ppml(
    y,
    X,
    fe: Sequence[np.ndarray] | None = None,
    cluster=None,
    *,
    names: Sequence[str] | None = None,
    tol: float = 1e-10,
    max_iter: int = 100,
    on_rank_deficient: str = "drop",
) -> LikelihoodFit:
    """Poisson pseudo-maximum likelihood by IRLS.

    Fixed effects are absorbed by weighted demeaning of the working variable
    and regressors at every iteration.  Rows in fixed-effect cells with an
    all-zero outcome carry no information and are dropped first.
    """
    X, names = design_matrix(X, names)
    y = np.asarray(y, dtype=float).ravel()
    if np.any(y < 0):
        raise ValidationError("PPML needs a nonnegative outcome")
    if not np.any(y > 0):
        raise AllZeroOutcome("outcome is zero everywhere")
    fe = [np.asarray(c) for c in fe] if fe else []
    n_all = len(y)
    ids_all = _cluster_ids(cluster, n_all)

    keep = _drop_zero_cells(y, fe) if fe else np.ones(n_all, dtype=bool)
    n_dropped = int((~keep).sum())
    if n_dropped:
        y, X = y[keep], X[keep]
        fe = [np.unique(c[keep], return_inverse=True)[1].ravel() for c in fe]
        if ids_all is not None:
            ids_all = ids_all[keep]
    n = len(y)
    factors = [_Factor(c) for c in fe]

    raw_norms = np.linalg.norm(X, axis=0)
    Xd0 = demean(X, factors) if factors else X
    aliased = find_aliased(Xd0, raw_norms)
    dropped = [nm for nm, a in zip(names, aliased) if a]
    if dropped:
        if on_rank_deficient == "raise":
            from .exceptions import RankDeficient

            raise RankDeficient(f"aliased columns: {dropped}", dropped)
        logger.info("dropping aliased columns %s", dropped)
    X = X[:, ~aliased]
    names = [nm for nm, a in zip(names, aliased) if not a]
    _check_separation_count(y, X, names)
    p = X.shape[1]

    mu = (y + y.mean()) / 2
    eta = np.log(mu)
    # the starting mu is not in the model space; never step-halve toward it
    dev = np.inf
    beta = np.zeros(p)
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = eta + (y - mu) / mu
        if factors:
            Z = demean(np.column_stack([z, X]), factors, mu)
            zd, Xd = Z[:, 0], Z[:, 1:]
        else:
            zd, Xd = z, X
        sw = np.sqrt(mu)
        beta_new = linalg.lstsq(Xd * sw[:, None], zd * sw, check_finite=False)[0] if p else np.zeros(0)
        e = zd - Xd @ beta_new
        eta_new = z - e
        mu_new = np.exp(eta_new)
        dev_new = _deviance(y, mu_new)
        halvings = 0
        while it > 1 and dev_new > dev * (1 + 1e-12) + 1e-12 and halvings < 30:
            eta_new = (eta + eta_new) / 2
            beta_new = (beta + beta_new) / 2
            mu_new = np.exp(eta_new)
            dev_new = _deviance(y, mu_new)
            halvings += 1
        step = np.max(np.abs(beta_new - beta)) if p else 0.0
        change = abs(dev - dev_new) / max(min(dev, dev_new), 0.1) if it > 1 else np.inf
        eta, mu, beta, dev = eta_new, mu_new, beta_new, dev_new
        trace.append(dev)
        if change < tol or step < 1e-13:
            converged = True
            break
    if not converged:
        raise NoConvergence(f"PPML did not converge in {max_iter} iterations", residual=change)

    if factors:
        Xd = demean(X, factors, mu)
    else:
        Xd = X
    info = Xd.T @ (Xd * mu[:, None])
    bread = np.linalg.inv(info) if p else np.zeros((0, 0))
    V, G = _ml_vcov(bread, Xd * (y - mu)[:, None], ids_all, n)

    ll = float(np.sum(y * eta - mu - special.gammaln(y + 1)))
    ybar = y.mean()
    ll0 = float(np.sum(y * np.log(ybar) - ybar - special.gammaln(y + 1)))
    return LikelihoodFit(
        params=pd.Series(beta, index=names, dtype=float),
        vcov=pd.DataFrame(V, index=names, columns=names),
        n_obs=n,
        dof_resid=n - p,
        r_squared=float(np.corrcoef(y, mu)[0, 1] ** 2) if np.std(mu) > 0 and np.std(y) > 0 else float("nan"),
        estimator="PPML",
        n_clusters=G,
        dropped=dropped,
        log_likelihood=ll,
        pseudo_r_squared=1 - ll / ll0 if ll0 != 0 else float("nan"),
        trace=trace,
        converged=converged,
        iterations=it,
        n_dropped=n_dropped,
        fitted=mu,
        resid=y - mu,
    )


# -- Newton with line search -----------------------------------------------------

def _newton(loglik, score, hessian, theta0, *, tol=1e-10, max_iter=200, label="model"):
    """Maximize ``loglik``; returns (theta, trace, iterations).

    Uses the Newton direction when the Hessian is negative definite and a
    ridge-regularized one otherwise; backtracking keeps the log-likelihood
    non-decreasing.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    ll = loglik(theta)
    trace = [ll]
    for it in range(1, max_iter + 1):
        g = score(theta)
        H = hessian(theta)
        negH = -H
        tau = 0.0
        scale = max(1.0, float(np.max(np.abs(np.diag(negH)))))
        while True:
            try:
                c = linalg.cho_factor(negH + tau * np.eye(len(theta)))
                break
            except linalg.LinAlgError:
                tau = max(2 * tau, 1e-8 * scale)
        step = linalg.cho_solve(c, g)
        t = 1.0
        while True:
            cand = theta + t * step
            ll_new = loglik(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t /= 2
            if t < 1e-12:
                cand, ll_new = theta, ll
                break
        moved = float(np.max(np.abs(cand - theta))) if len(theta) else 0.0
        theta, ll = cand, ll_new
        trace.append(ll)
        if moved < tol * (1 + float(np.max(np.abs(theta)))):
            return theta, trace, it
    raise NoConvergence(f"{label} Newton iterations did not converge in {max_iter} steps")


# -- Probit -----------------------------------------------------------------------

def _probit_parts(beta, y, X):
    q = 2 * y - 1
    xb = X @ beta
    qxb = q * xb
    logcdf = special.log_ndtr(qxb)
    lam = np.exp(-0.5 * qxb**2 - LOG_SQRT_2PI - logcdf)
    return q, xb, qxb, logcdf, lam


def probit_loglik(beta, y, X) -> float:
    return float(np.sum(special.log_ndtr((2 * y - 1) * (X @ beta))))


def probit_score(beta, y, X) -> np.ndarray:
    q, _, _, _, lam = _probit_parts(beta, y, X)
    return X.T @ (q * lam)


def _probit_hessian(beta, y, X):
    q, _, qxb, _, lam = _probit_parts(beta, y, X)
    w = lam * (lam + qxb)
    return -(X.T @ (X * w[:, None]))


def _check_separation_binary(y, X, names):
    one = y == 1
    for j, nm in enumerate(names):
        x = X[:, j]
        if np.ptp(x) == 0:
            continue
        if x[one].min() > x[~one].max() or x[one].max() < x[~one].min():
            raise Separation(f"regressor {nm!r} perfectly predicts the outcome", column=nm)
        vals = np.unique(x)
        if len(vals) == 2 and set(vals) == {0.0, 1.0}:
            sub = y[x == 1]
            if np.all(sub == sub[0]):
                raise Separation(f"indicator {nm!r} perfectly predicts the outcome where it is 1", column=nm)


def fit_probit(y, X, cluster=None, *, names=None, tol=1e-10, max_iter=100) -> LikelihoodFit:
    X, names = design_matrix(X, names)
    y = np.asarray(y, dtype=float).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("Probit outcome must be 0/1")
    if y.min() == y.max():
        raise NoVariation("Probit outcome has no variation")
    _check_separation_binary(y, X, names)
    n, p = X.shape

    theta, trace, it = _newton(
        lambda b: probit_loglik(b, y, X),
        lambda b: probit_score(b, y, X),
        lambda b: _probit_hessian(b, y, X),
        np.zeros(p),
        tol=tol,
        max_iter=max_iter,
        label="Probit",
    )
    bread = np.linalg.inv(-_probit_hessian(theta, y, X))
    q, _, _, _, lam = _probit_parts(theta, y, X)
    V, G = _ml_vcov(bread, X * (q * lam)[:, None], cluster, n)
    ll = probit_loglik(theta, y, X)
    ybar = y.mean()
    ll0 = n * (ybar * np.log(ybar) + (1 - ybar) * np.log(1 - ybar))
    return LikelihoodFit(
        params=pd.Series(theta, index=names, dtype=float),
        vcov=pd.DataFrame(V, index=names, columns=names),
        n_obs=n,
        dof_resid=n - p,
        r_squared=float("nan"),
        estimator="Probit",
        n_clusters=G,
        log_likelihood=ll,
        pseudo_r_squared=1 - ll / ll0,
        trace=trace,
        iterations=it,
        fitted=stats.norm.cdf(X @ theta),
    )


def _default_targets(names):
    return [n for n in names if n.lower() not in ("const", "intercept", "ln_sigma") and not n.startswith("fe[")]


def probit_ame(fit: LikelihoodFit, X, targets: Sequence[str] | None = None) -> pd.DataFrame:
    """Average marginal effects ``mean(phi(x'b)) * b_j`` with delta-method SEs."""
    X, names = design_matrix(X, list(fit.params.index) if not isinstance(X, pd.DataFrame) else None)
    names = list(fit.params.index)
    beta = fit.params.to_numpy()
    targets = _default_targets(names) if targets is None else list(targets)
    xb = X @ beta
    dens = stats.norm.pdf(xb)
    rows = {}
    V = fit.vcov.to_numpy()
    for nm in targets:
        j = names.index(nm)
        ame = float(np.mean(dens) * beta[j])
        grad = -np.mean((dens * xb)[:, None] * X, axis=0) * beta[j]
        grad[j] += np.mean(dens)
        rows[nm] = {"ame": ame, "se": float(np.sqrt(grad @ V @ grad))}
    return pd.DataFrame.from_dict(rows, orient="index", columns=["ame", "se"])


# -- Tobit ------------------------------------------------------------------------

def _tobit_parts(theta, y, X, c):
    beta, log_sigma = theta[:-1], theta[-1]
    sigma = np.exp(log_sigma)
    xb = X @ beta
    cens = y <= c
    e = np.where(cens, 0.0, (y - xb) / sigma)
    zc = np.where(cens, (c - xb) / sigma, 0.0)
    logcdf = special.log_ndtr(zc)
    lam = np.where(cens, np.exp(-0.5 * zc**2 - LOG_SQRT_2PI - logcdf), 0.0)
    return beta, log_sigma, sigma, xb, cens, e, zc, logcdf, lam


def tobit_loglik(theta, y, X, c=0.0) -> float:
    _, log_sigma, _, _, cens, e, _, logcdf, _ = _tobit_parts(theta, y, X, c)
    ll = np.where(cens, logcdf, -0.5 * e**2 - LOG_SQRT_2PI - log_sigma)
    return float(np.sum(ll))


def tobit_score(theta, y, X, c=0.0) -> np.ndarray:
    _, _, sigma, _, cens, e, zc, _, lam = _tobit_parts(theta, y, X, c)
    gb = np.where(cens, -lam, e) / sigma
    gs = np.where(cens, -lam * zc, e**2 - 1)
    return np.append(X.T @ gb, gs.sum())


def _tobit_hessian(theta, y, X, c=0.0):
    _, _, sigma, _, cens, e, zc, _, lam = _tobit_parts(theta, y, X, c)
    g2 = -lam * (zc + lam)  # second derivative of log Phi at zc
    hbb = np.where(cens, g2, -1.0) / sigma**2
    hbs = np.where(cens, (g2 * zc + lam) / sigma, -2 * e / sigma)
    hss = np.where(cens, g2 * zc**2 + lam * zc, -2 * e**2)
    p = X.shape[1]
    H = np.empty((p + 1, p + 1))
    H[:p, :p] = X.T @ (X * hbb[:, None])
    H[:p, p] = H[p, :p] = X.T @ hbs
    H[p, p] = hss.sum()
    return H


def fit_tobit(y, X, censor_point: float = 0.0, cluster=None, *, names=None, tol=1e-10, max_iter=200) -> LikelihoodFit:
    """Left-censored Tobit by Newton on ``(beta, ln sigma)``.

    Fixed effects, if any, must be passed as explicit dummy columns of ``X``.
    The returned parameters include ``ln_sigma`` as the last entry.
    """
    X, names = design_matrix(X, names)
    y = np.asarray(y, dtype=float).ravel()
    c = float(censor_point)
    if np.any(y < c - 1e-12):
        raise ValidationError("outcome below the censoring point")
    unc = y > c
    if not unc.any():
        raise NoVariation("every observation is censored")
    n, p = X.shape

    b0 = linalg.lstsq(X, y, check_finite=False)[0]
    s0 = max(float(np.std(y - X @ b0)), 1e-3 * max(1.0, float(np.std(y))), 1e-8)
    theta0 = np.append(b0, np.log(s0))
    theta, trace, it = _newton(
        lambda t: tobit_loglik(t, y, X, c),
        lambda t: tobit_score(t, y, X, c),
        lambda t: _tobit_hessian(t, y, X, c),
        theta0,
        tol=tol,
        max_iter=max_iter,
        label="Tobit",
    )
    H = _tobit_hessian(theta, y, X, c)
    bread = np.linalg.inv(-H)
    # per-row scores for the sandwich
    _, _, sigma, _, cens, e, zc, _, lam = _tobit_parts(theta, y, X, c)
    gb = np.where(cens, -lam, e) / sigma
    gs = np.where(cens, -lam * zc, e**2 - 1)
    scores = np.column_stack([X * gb[:, None], gs])
    V, G = _ml_vcov(bread, scores, cluster, n)
    all_names = list(names) + ["ln_sigma"]
    ll = tobit_loglik(theta, y, X, c)
    # constant-only Tobit for the pseudo R-squared
    ones = np.ones((n, 1))
    th0, _, _ = _newton(
        lambda t: tobit_loglik(t, y, ones, c),
        lambda t: tobit_score(t, y, ones, c),
        lambda t: _tobit_hessian(t, y, ones, c),
        np.array([y.mean(), np.log(max(np.std(y), 1e-8))]),
        label="Tobit (null)",
    )
    ll0 = tobit_loglik(th0, y, ones, c)
    return LikelihoodFit(
        params=pd.Series(theta, index=all_names, dtype=float),
        vcov=pd.DataFrame(V, index=all_names, columns=all_names),
        n_obs=n,
        dof_resid=n - p - 1,
        r_squared=float("nan"),
        estimator="Tobit",
        n_clusters=G,
        log_likelihood=ll,
        pseudo_r_squared=1 - ll / ll0 if ll0 != 0 else float("nan"),
        trace=trace,
        iterations=it,
        sigma=float(np.exp(theta[-1])),
        censor_point=c,
    )


def tobit_marginal_effects(fit: LikelihoodFit, X, targets: Sequence[str] | None = None) -> pd.DataFrame:
    """AMEs on ``E[y|x]`` of the censored outcome, with delta-method SEs.

    ``dE[y|x]/dx_j = Phi((x'b - c)/sigma) * b_j``.
    """
    names = [n for n in fit.params.index if n != "ln_sigma"]
    X, _ = design_matrix(X, names)
    theta = fit.params.to_numpy()
    beta, sigma = theta[:-1], np.exp(theta[-1])
    c = fit.censor_point or 0.0
    z = (X @ beta - c) / sigma
    cdf, pdf = stats.norm.cdf(z), stats.norm.pdf(z)
    targets = _default_targets(names) if targets is None else list(targets)
    V = fit.vcov.to_numpy()
    rows = {}
    for nm in targets:
        j = names.index(nm)
        ame = float(np.mean(cdf) * beta[j])
        grad = np.empty(len(theta))
        grad[:-1] = np.mean(pdf[:, None] * X, axis=0) / sigma * beta[j]
        grad[j] += np.mean(cdf)
        grad[-1] = float(np.mean(-pdf * z)) * beta[j]
        rows[nm] = {"ame": ame, "se": float(np.sqrt(grad @ V @ grad))}
    return pd.DataFrame.from_dict(rows, orient="index", columns=["ame", "se"])


def tobit_ame(fit: LikelihoodFit, X, target: str) -> float:
    return float(tobit_marginal_effects(fit, X, [target]).loc[target, "ame"])
