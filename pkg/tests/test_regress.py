import numpy as np
import pandas as pd
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from hetpanel.exceptions import RankDeficient, TooFewClusters
from hetpanel.regress import clustered_vcov, ols_fit, sandwich


def _with_const(x):
    return pd.DataFrame({"const": 1.0, "x": np.asarray(x, dtype=float)})


def test_exact_line():
    fit = ols_fit([1, 2, 3], _with_const([0, 1, 2]))
    np.testing.assert_allclose(fit.params.to_numpy(), [1, 1], atol=1e-12)
    np.testing.assert_allclose(fit.resid, 0, atol=1e-12)


def test_normal_equations_oracle():
    fit = ols_fit([0, 1, 1, 2], _with_const([0, 1, 2, 3]))
    assert fit.params["x"] == pytest.approx(0.6, abs=1e-12)
    assert fit.params["const"] == pytest.approx(0.1, abs=1e-12)


def test_matches_statsmodels_cluster(rng):
    n = 300
    X = pd.DataFrame({"const": 1.0, "a": rng.normal(size=n), "b": rng.normal(size=n)})
    g = rng.integers(0, 25, n)
    y = X @ [1.0, 2.0, -0.5] + rng.normal(size=n) + rng.normal(size=25)[g]
    fit = ols_fit(y, X, cluster=g)
    ref = sm.OLS(y, X).fit(cov_type="cluster", cov_kwds={"groups": g})
    np.testing.assert_allclose(fit.params, ref.params, rtol=1e-10)
    np.testing.assert_allclose(fit.vcov.to_numpy(), ref.cov_params().to_numpy(), rtol=1e-8)
    assert fit.n_clusters == 25


def test_hc1_without_clusters(rng):
    n = 80
    X = pd.DataFrame({"const": 1.0, "a": rng.normal(size=n)})
    y = X["a"] * 2 + rng.normal(size=n) * (1 + np.abs(X["a"]))
    fit = ols_fit(y, X)
    ref = sm.OLS(y, X).fit(cov_type="HC1")
    np.testing.assert_allclose(fit.vcov.to_numpy(), ref.cov_params().to_numpy(), rtol=1e-10)


def test_singleton_clusters_collapse_to_hc(rng):
    n = 50
    X = pd.DataFrame({"const": 1.0, "a": rng.normal(size=n)})
    y = rng.normal(size=n)
    clustered = ols_fit(y, X, cluster=np.arange(n))
    hc1 = ols_fit(y, X)
    # G/(G-1) * (n-1)/(n-k) with G = n is the HC1 factor n/(n-k)
    np.testing.assert_allclose(clustered.vcov.to_numpy(), hc1.vcov.to_numpy(), rtol=1e-10)
    assert clustered.diagnostics["near_singleton_clusters"]


def test_zero_residuals_zero_vcov():
    X = _with_const([0, 1, 2, 3])
    V = clustered_vcov(X, np.zeros(4), np.array([0, 0, 1, 1]))
    assert np.all(V == 0)


def test_two_cluster_brute_force():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    e = np.array([0.5, -1.0, 0.25, 2.0])
    g = np.array([0, 0, 1, 1])
    bread = np.linalg.inv(X.T @ X)
    s0 = X[:2].T @ e[:2]
    s1 = X[2:].T @ e[2:]
    meat = np.outer(s0, s0) + np.outer(s1, s1)
    factor = 2 / 1 * 3 / 3
    expected = factor * bread @ meat @ bread
    np.testing.assert_allclose(clustered_vcov(X, e, g), expected, rtol=1e-12, atol=1e-14)


def test_vcov_invariant_to_within_cluster_permutation(rng):
    n = 40
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    e = rng.normal(size=n)
    g = np.repeat(np.arange(8), 5)
    perm = np.concatenate([rng.permutation(np.flatnonzero(g == k)) for k in range(8)])
    np.testing.assert_allclose(clustered_vcov(X, e, g), clustered_vcov(X[perm], e[perm], g[perm]), rtol=1e-12)


def test_too_few_clusters():
    with pytest.raises(TooFewClusters):
        ols_fit([1, 2, 3, 4], _with_const([0, 1, 3, 2]), cluster=np.zeros(4))


def test_aliased_column_dropped_or_raised(rng):
    n = 30
    X = pd.DataFrame({"const": 1.0, "a": rng.normal(size=n)})
    X["a2"] = 2 * X["a"]
    y = rng.normal(size=n)
    fit = ols_fit(y, X)
    assert fit.dropped == ["a2"] and list(fit.params.index) == ["const", "a"]
    with pytest.raises(RankDeficient) as err:
        ols_fit(y, X, on_rank_deficient="raise")
    assert "a2" in err.value.columns


def test_column_absorbed_by_fixed_effects_is_dropped(rng):
    codes = np.repeat(np.arange(10), 4)
    X = pd.DataFrame({"within": rng.normal(size=40), "between": rng.normal(size=10)[codes]})
    fit = ols_fit(rng.normal(size=40), X, fe=[codes])
    assert fit.dropped == ["between"]


def _explicit(y, X, codes_list, w=None):
    D = [np.eye(c.max() + 1)[c][:, 1 if j else 0:] for j, c in enumerate(codes_list)]
    Z = np.column_stack([X] + D)
    if w is None:
        return np.linalg.lstsq(Z, y, rcond=None)[0][: X.shape[1]]
    sw = np.sqrt(w)
    return np.linalg.lstsq(Z * sw[:, None], y * sw, rcond=None)[0][: X.shape[1]]


@settings(max_examples=30, deadline=None)
@given(n=st.integers(20, 80), la=st.integers(2, 6), lb=st.integers(2, 5), seed=st.integers(0, 2**31 - 1))
def test_frisch_waugh(n, la, lb, seed):
    r = np.random.default_rng(seed)
    a = r.integers(0, la, n)
    b = r.integers(0, lb, n)
    X = r.normal(size=(n, 2))
    y = X @ [1.0, -1.0] + r.normal(size=la)[a] + r.normal(size=lb)[b] + r.normal(size=n)
    fit = ols_fit(y, X, fe=[a, b])
    if fit.dropped:
        return
    np.testing.assert_allclose(fit.params.to_numpy(), _explicit(y, X, [a, b]), atol=1e-8)


def test_weighted_frisch_waugh(rng):
    n = 60
    a = rng.integers(0, 5, n)
    X = rng.normal(size=(n, 2))
    w = rng.uniform(0.2, 3, n)
    y = X @ [0.5, 2.0] + rng.normal(size=5)[a] + rng.normal(size=n)
    fit = ols_fit(y, X, weights=w, fe=[a])
    np.testing.assert_allclose(fit.params.to_numpy(), _explicit(y, X, [a], w), atol=1e-10)


def test_unit_weights_equal_unweighted(rng):
    n = 50
    X = _with_const(rng.normal(size=n))
    y = rng.normal(size=n)
    g = rng.integers(0, 10, n)
    a = ols_fit(y, X, cluster=g)
    b = ols_fit(y, X, weights=np.ones(n), cluster=g)
    assert np.array_equal(a.params.to_numpy(), b.params.to_numpy())
    np.testing.assert_array_equal(a.vcov.to_numpy(), b.vcov.to_numpy())


def test_row_permutation_invariance(rng):
    n = 50
    X = pd.DataFrame({"const": 1.0, "a": rng.normal(size=n)})
    y = rng.normal(size=n)
    perm = rng.permutation(n)
    a = ols_fit(y, X)
    b = ols_fit(y[perm], X.iloc[perm].reset_index(drop=True))
    np.testing.assert_allclose(a.params.to_numpy(), b.params.to_numpy(), atol=1e-12)


def test_vcov_psd_and_se(rng):
    n = 100
    X = pd.DataFrame({"const": 1.0, "a": rng.normal(size=n), "b": rng.normal(size=n)})
    fit = ols_fit(rng.normal(size=n), X, cluster=rng.integers(0, 12, n))
    V = fit.vcov.to_numpy()
    assert np.allclose(V, V.T)
    assert np.linalg.eigvalsh(V).min() > -1e-10 * np.trace(V)
    np.testing.assert_allclose(fit.bse.to_numpy(), np.sqrt(np.diag(V)))


def test_nested_fe_do_not_count_against_dof(rng):
    codes = np.repeat(np.arange(20), 5)
    X = pd.DataFrame({"a": rng.normal(size=100)})
    y = rng.normal(size=100)
    nested = ols_fit(y, X, fe=[codes], cluster=codes)
    assert nested.diagnostics["fe_nested_in_clusters"]
    assert nested.small_sample == pytest.approx(20 / 19 * 99 / 99)
    crossed = ols_fit(y, X, fe=[codes], cluster=np.tile(np.arange(5), 20))
    assert crossed.small_sample == pytest.approx(5 / 4 * 99 / (100 - 1 - 20))


def test_sandwich_without_clusters_is_outer_product():
    B = np.eye(2)
    S = np.array([[1.0, 0.0], [0.0, 2.0]])
    np.testing.assert_allclose(sandwich(B, S), np.diag([1.0, 4.0]))


def test_wald_and_summary(rng):
    n = 200
    X = pd.DataFrame({"const": 1.0, "a": rng.normal(size=n), "b": rng.normal(size=n)})
    y = 1 + 3 * X["a"] + rng.normal(size=n)
    fit = ols_fit(y, X)
    stat, df, p = fit.wald_test(["a", "b"])
    assert df == 2 and p < 1e-10
    stat1, _, _ = fit.wald_test(["a"], [fit.params["a"]])
    assert stat1 == pytest.approx(0.0, abs=1e-20)
    frame = fit.summary_frame()
    assert list(frame.columns) == ["coef", "se", "t", "p"]
    ci = fit.conf_int()
    assert np.all(ci["lo"] < fit.params) and np.all(fit.params < ci["hi"])
