import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from hetpanel.classo import unit_ols
from hetpanel.exceptions import ValidationError
from hetpanel.panel import load_csv, write_csv
from hetpanel.synthgen import (
    DgpConfig,
    generate_ddd_panel,
    generate_determinants,
    generate_grouped_panel,
    largest_remainder,
    write_demo_inputs,
)


def test_largest_remainder_example():
    counts = largest_remainder((0.5, 0.3, 0.2), 1000)
    assert counts.tolist() == [500, 300, 200]


@settings(max_examples=100)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6), st.integers(1, 5000))
def test_largest_remainder_within_one(weights, n):
    p = np.asarray(weights) / np.sum(weights)
    counts = largest_remainder(p, n)
    assert counts.sum() == n
    assert np.all(np.abs(counts - p * n) < 1)


def test_grouped_deterministic():
    cfg = DgpConfig(N=10, T=12, seed=9)
    a, la = generate_grouped_panel(cfg)
    b, lb = generate_grouped_panel(cfg)
    for k in a.columns:
        assert a[k].tobytes() == b[k].tobytes()
    assert la.equals(lb)
    c, _ = generate_grouped_panel(cfg.with_(seed=10))
    assert not np.array_equal(a["y"], c["y"])


def test_noiseless_slopes_recovered():
    cfg = DgpConfig(N=12, T=20, sigma=0.0, fe_unit=0.0, fe_month=0.0, group_slopes=((2.0,), (-0.5,)), seed=1)
    data, labels = generate_grouped_panel(cfg)
    order = np.lexsort((data.time, data.unit))
    Y = data["y"][order].reshape(12, 20)
    X = data["x1"][order].reshape(12, 20, 1)
    b = unit_ols(Y, X)[:, 0]
    np.testing.assert_allclose(b, np.where(labels.to_numpy() == 1, 2.0, -0.5), atol=1e-12)


def test_ddd_panel_shape_and_treated():
    data, treated = generate_ddd_panel(DgpConfig(N=8, T=72, seed=0))
    assert data.n_rows == 8 * 3 * 72
    assert sorted(data.regions) == ["CN", "NonUS", "US"]
    assert len(treated) == 2
    assert data.calendar.iloc[36].tolist() == [2018, 1]


def test_ddd_group_effects_mark_negative_groups():
    cfg = DgpConfig(N=20, T=72, group_effects=(-0.5, 0.0, 0.4), proportions=(0.3, 0.3, 0.4), seed=2)
    _, treated = generate_ddd_panel(cfg)
    assert len(treated) == 6


def test_ddd_csv_round_trip(tmp_path):
    data, _ = generate_ddd_panel(DgpConfig(N=5, T=72, seed=3))
    path = tmp_path / "panel.csv"
    write_csv(data, path)
    back = load_csv(path)
    assert back["sq"].tobytes() == data["sq"].tobytes()


def test_config_validation():
    with pytest.raises(ValidationError):
        DgpConfig(proportions=(0.5, 0.6))
    with pytest.raises(ValidationError):
        DgpConfig(sigma=-1)
    with pytest.raises(ValidationError):
        DgpConfig(mode="binary")
    with pytest.raises(ValidationError):
        generate_ddd_panel(DgpConfig(T=30, event_t=36))


def test_determinants_shape():
    df = generate_determinants(500, seed=0, n_ipc4=5)
    assert len(df) == 500 and df["field"].is_unique
    assert set(df["inflow"].unique()) <= {0, 1}
    assert df["gap"].between(0, 1).all()


def test_demo_inputs(tmp_path):
    cfg = write_demo_inputs(tmp_path, n_fields=10, reps=3)
    assert cfg.exists()
    for name in ("inflow.csv", "outflow.csv", "covariates.csv", "concordance.csv"):
        assert (tmp_path / name).exists()
    assert "reps = 3" in cfg.read_text()
