import json

import numpy as np
import pytest

from hetpanel.exceptions import TooManyTreated, ValidationError
from hetpanel.placebo import PlaceboDistribution, draw_placebo_set, ks_normal, run_placebo
from hetpanel.study import EventConfig, ddd_effect, estimate_ddd
from hetpanel.synthgen import DgpConfig, generate_ddd_panel

CFG = EventConfig(log_outcome=False, trend=False)


@pytest.fixture(scope="module")
def cont():
    return generate_ddd_panel(DgpConfig(N=20, T=72, mode="continuous", sigma=0.3, seed=0))


def test_draws_are_deterministic_and_distinct():
    units = np.array([f"u{i}" for i in range(30)], dtype=object)
    a = draw_placebo_set(units, 7, seed=3, rep=5)
    np.testing.assert_array_equal(a, draw_placebo_set(units, 7, seed=3, rep=5))
    assert len(set(a)) == 7
    assert not np.array_equal(a, draw_placebo_set(units, 7, seed=3, rep=6))


def test_single_rep_reproducible(cont):
    data, treated = cont
    a = run_placebo(data, treated, CFG, R=1, seed=11, estimator="ols")
    b = run_placebo(data, treated, CFG, R=1, seed=11, estimator="ols")
    assert a.estimates.tolist() == b.estimates.tolist()
    assert a.R == 1 and a.n_treated == len(treated)


def test_actual_matches_direct_estimate(cont):
    data, treated = cont
    dist = run_placebo(data, treated, CFG, R=2, estimator="ols")
    direct = ddd_effect(estimate_ddd(data, treated, CFG, "ols"), CFG.triple_term)[0]
    assert dist.actual == direct


def test_placebo_with_true_set_reproduces_actual(cont, monkeypatch):
    data, treated = cont
    import hetpanel.placebo as pl

    monkeypatch.setattr(pl, "draw_placebo_set", lambda units, n, seed, rep: np.asarray(treated))
    dist = pl.run_placebo(data, treated, CFG, R=3, estimator="ols")
    np.testing.assert_array_equal(dist.estimates, np.full(3, dist.actual))
    assert dist.p_value == 1.0


def test_too_many_treated(cont):
    data, treated = cont
    with pytest.raises(TooManyTreated):
        run_placebo(data, treated, CFG, R=1, n_treated=21, estimator="ols")
    with pytest.raises(ValidationError):
        run_placebo(data, treated, CFG, R=0, estimator="ols")


def test_p_value_and_band():
    d = PlaceboDistribution(np.array([-3.0, -1.0, 0.5, 2.0]), actual=1.5, seed=0, n_treated=2, estimator="ols")
    assert d.p_value == pytest.approx(3 / 5)
    lo, hi = d.band(0.5)
    assert lo == pytest.approx(np.quantile(d.estimates, 0.25))
    assert 1 / (d.R + 1) <= d.p_value <= 1
    s = json.loads(d.to_json())
    assert s["R"] == 4 and s["actual"] == 1.5
    assert list(d.to_frame().columns) == ["rep", "estimate"]


def test_ks_normal_small_for_gaussian(rng):
    assert ks_normal(rng.normal(size=2000)) < 0.03
    assert ks_normal(rng.exponential(size=2000)) > 0.05
