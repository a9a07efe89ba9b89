import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from hetpanel.exceptions import (
    EmptyKey,
    MissingColumn,
    NegativeCount,
    NegativeInput,
    NonNumericCell,
    UnbalancedPanel,
)
from hetpanel.panel import (
    ClusterKey,
    FixedEffectSpec,
    PanelDataset,
    demean,
    factor_codes,
    load_csv,
    log1p_col,
    within_transform,
    write_csv,
)
from hetpanel.synthgen import DgpConfig, generate_grouped_panel

from conftest import small_panel


def _write(df, path):
    df.to_csv(path, index=False)
    return path


def test_minimal_balanced_panel(tmp_path):
    df = small_panel(2, 3)
    data = load_csv(_write(df, tmp_path / "p.csv"), {"outcomes": ["y", "x"]})
    assert (data.n_units, data.n_periods, data.n_rows) == (2, 3, 6)
    assert data.time.tolist() == [0, 1, 2, 0, 1, 2]
    # the sample crosses a year boundary
    assert data.calendar["year"].tolist() == [2017, 2017, 2018]


def test_missing_row_named(tmp_path):
    df = small_panel(2, 3).drop(index=4)
    with pytest.raises(UnbalancedPanel) as err:
        load_csv(_write(df, tmp_path / "p.csv"))
    assert ("u1", 1) in [tuple(m[:2]) for m in err.value.missing] or "u1" in str(err.value)


def test_duplicate_row_rejected(tmp_path):
    df = small_panel(2, 3)
    df = pd.concat([df, df.iloc[[0]]])
    with pytest.raises(UnbalancedPanel):
        load_csv(_write(df, tmp_path / "p.csv"))


def test_non_numeric_cell_reports_location(tmp_path):
    df = small_panel(2, 3).astype({"y": object})
    df.loc[2, "y"] = "abc"
    with pytest.raises(NonNumericCell) as err:
        load_csv(_write(df, tmp_path / "p.csv"))
    assert err.value.column == "y"


def test_empty_cell_is_not_a_zero(tmp_path):
    df = small_panel(2, 3).astype({"y": object})
    df.loc[2, "y"] = ""
    with pytest.raises(NonNumericCell):
        load_csv(_write(df, tmp_path / "p.csv"))


def test_negative_count(tmp_path):
    df = small_panel(2, 3)
    df.loc[1, "y"] = -1
    with pytest.raises(NegativeCount):
        load_csv(_write(df, tmp_path / "p.csv"), {"counts": ["y"]})


def test_empty_key(tmp_path):
    df = small_panel(2, 3)
    df["unit"] = df["unit"].astype(object)
    df.loc[0, "unit"] = ""
    with pytest.raises(EmptyKey):
        load_csv(_write(df, tmp_path / "p.csv"))


def test_missing_column(tmp_path):
    df = small_panel(2, 3).drop(columns="month")
    with pytest.raises(MissingColumn):
        load_csv(_write(df, tmp_path / "p.csv"))
    data = load_csv(_write(small_panel(2, 3), tmp_path / "q.csv"))
    with pytest.raises(MissingColumn):
        data["nope"]


def test_canonical_order_regardless_of_file_order(tmp_path):
    df = small_panel(3, 4, regions=["US", "CN"])
    a = load_csv(_write(df, tmp_path / "a.csv"))
    b = load_csv(_write(df.sample(frac=1, random_state=3), tmp_path / "b.csv"))
    assert np.array_equal(a.unit, b.unit) and np.array_equal(a.region, b.region)
    assert np.array_equal(a["y"], b["y"])
    assert a.regions.tolist() == ["CN", "US"]


def test_synthgen_round_trip(tmp_path):
    data, _ = generate_grouped_panel(DgpConfig(N=100, T=72, seed=4))
    write_csv(data, tmp_path / "g.csv")
    back = load_csv(tmp_path / "g.csv")
    for c in data.columns:
        assert np.array_equal(back[c], data[c])
    write_csv(back, tmp_path / "h.csv")
    assert (tmp_path / "g.csv").read_bytes() == (tmp_path / "h.csv").read_bytes()


def test_arrays_are_read_only(tmp_path):
    data = load_csv(_write(small_panel(2, 3), tmp_path / "p.csv"))
    with pytest.raises(ValueError):
        data["y"][0] = 5


def test_log1p_col(tmp_path):
    df = small_panel(1, 3)
    df["y"] = [0, 1, 7]
    data = load_csv(_write(df, tmp_path / "p.csv"))
    np.testing.assert_allclose(log1p_col(data, "y"), [0, 0.693147, 2.079442], atol=1e-6)
    data = data.with_columns(e=np.full(3, np.e - 1))
    np.testing.assert_allclose(log1p_col(data, "e"), 1.0)
    with pytest.raises(NegativeInput):
        log1p_col(data.with_columns(n=np.array([0.0, -1.0, 2.0])), "n")


def test_two_point_cell():
    out = demean(np.array([3.0, 5.0]), [np.array([0, 0])])
    assert out.tolist() == [-1.0, 1.0]


def test_singleton_cell_is_zero():
    out = demean(np.array([3.0, 5.0, 8.0]), [np.array([0, 1, 1])])
    assert out[0] == 0.0


def test_cell_constants_annihilated(rng):
    codes = rng.integers(0, 7, 200)
    consts = rng.normal(size=7)[codes]
    assert np.max(np.abs(demean(consts, [codes]))) < 1e-12


def _dummy_resid(y, codes_list):
    D = np.column_stack([np.eye(c.max() + 1)[c] for c in codes_list])
    beta = np.linalg.lstsq(D, y, rcond=None)[0]
    return y - D @ beta


def test_crossed_factors_match_dummy_projection(rng):
    a = np.repeat(np.arange(4), 4)
    b = np.tile(np.arange(4), 4)
    y = rng.normal(size=16)
    np.testing.assert_allclose(demean(y, [a, b]), _dummy_resid(y, [a, b]), atol=1e-8)


def test_unbalanced_crossed_factors_match_dummy_projection(rng):
    a = rng.integers(0, 6, 120)
    b = rng.integers(0, 9, 120)
    y = rng.normal(size=120)
    out, sweeps = demean(y, [a, b], return_sweeps=True)
    assert sweeps > 1
    np.testing.assert_allclose(out, _dummy_resid(y, [a, b]), atol=1e-8)


def test_weighted_single_factor(rng):
    codes = rng.integers(0, 5, 50)
    w = rng.uniform(0.5, 2, 50)
    y = rng.normal(size=50)
    out = demean(y, [codes], w)
    for g in range(5):
        m = codes == g
        assert abs(np.sum(w[m] * out[m])) < 1e-12


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(5, 60),
    la=st.integers(1, 6),
    lb=st.integers(1, 6),
    seed=st.integers(0, 2**31 - 1),
)
def test_demean_idempotent_and_orthogonal(n, la, lb, seed):
    r = np.random.default_rng(seed)
    a = r.integers(0, la, n)
    b = r.integers(0, lb, n)
    X = r.normal(size=(n, 2)) * 10
    once = demean(X, [a, b])
    twice = demean(once, [a, b])
    np.testing.assert_allclose(twice, once, atol=1e-9)
    for codes in (a, b):
        D = np.eye(codes.max() + 1)[codes]
        dots = np.abs(D.T @ once)
        assert np.all(dots <= 1e-8 * max(1.0, np.linalg.norm(X)) * np.sqrt(n))


def test_within_transform_keeps_absorbed_part():
    data, _ = generate_grouped_panel(DgpConfig(N=5, T=24, seed=1))
    fe = FixedEffectSpec(("unit*month",))
    out = within_transform(data, ["y"], fe)
    np.testing.assert_allclose(out["y"] + out.absorbed["y"], data["y"], atol=1e-12)
    again = within_transform(out, ["y"], fe)
    np.testing.assert_allclose(again["y"], out["y"], atol=1e-12)


def test_factor_codes_and_month_switch():
    data, _ = generate_grouped_panel(DgpConfig(N=2, T=30, seed=1))
    assert factor_codes(data, "unit*month").max() + 1 == 24
    assert factor_codes(data, "unit*month", "yearmonth").max() + 1 == 60
    assert FixedEffectSpec("unit*month").dummy_matrix(data).shape == (60, 24)


def test_cluster_key_partition():
    key = ClusterKey(np.array(["b", "a", "b", "c"]))
    assert key.ids.tolist() == [1, 0, 1, 2] and key.n_clusters == 3
