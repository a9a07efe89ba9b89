"""Long-format panel container, CSV ingestion and fixed-effect absorption.

A :class:`PanelDataset` holds one row per ``(unit, region, t)`` observation in
canonical order (unit, then region, then time).  Time is an integer month
index counted from the first calendar month in the file.  Fixed effects are
described by :class:`FixedEffectSpec` using factor tokens joined by ``*``:

``unit``, ``region``, ``month`` (month of year, or year-month when
``month_fe="yearmonth"``), ``year`` and ``time`` (the running month index).

So ``"unit*month"`` is the field-by-calendar-month effect and
``"unit*region*month"`` its stacked-region counterpart.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from .exceptions import (
    EmptyKey,
    MissingColumn,
    NegativeCount,
    NegativeInput,
    NoConvergence,
    NonNumericCell,
    UnbalancedPanel,
    ValidationError,
)

__all__ = [
    "PanelDataset",
    "FixedEffectSpec",
    "ClusterKey",
    "load_csv",
    "write_csv",
    "log1p_col",
    "within_transform",
    "demean",
    "factor_codes",
]

logger = logging.getLogger(__name__)

KEY_COLUMNS = ("unit", "region", "year", "month")
FACTOR_TOKENS = ("unit", "region", "month", "year", "time")


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced long-format panel.

    ``absorbed`` keeps, for columns produced by :func:`within_transform`, the
    fixed-effect component that was removed, so ``raw = column + absorbed``.
    """

    unit: np.ndarray
    year: np.ndarray
    month: np.ndarray
    time: np.ndarray
    columns: Mapping[str, np.ndarray]
    region: np.ndarray | None = None
    absorbed: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.unit)
        for name, col in self.columns.items():
            if len(col) != n:
                raise ValidationError(f"column {name!r} has {len(col)} rows, expected {n}")
            col.setflags(write=False)
        for arr in (self.unit, self.year, self.month, self.time):
            arr.setflags(write=False)
        if self.region is not None:
            self.region.setflags(write=False)

    # -- shape ---------------------------------------------------------------
    @property
    def n_rows(self) -> int:
        return len(self.unit)

    @property
    def units(self) -> np.ndarray:
        return np.unique(self.unit)

    @property
    def regions(self) -> np.ndarray | None:
        return None if self.region is None else np.unique(self.region)

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_periods(self) -> int:
        return int(self.time.max()) + 1 if self.n_rows else 0

    @property
    def calendar(self) -> pd.DataFrame:
        """Year and month-of-year for every time index."""
        cal = pd.DataFrame({"t": self.time, "year": self.year, "month": self.month})
        return cal.drop_duplicates("t").sort_values("t").set_index("t")

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise MissingColumn(f"no column {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    # -- derived datasets ----------------------------------------------------
    def with_columns(self, **cols) -> "PanelDataset":
        new = dict(self.columns)
        for name, values in cols.items():
            values = np.asarray(values, dtype=float).copy()
            new[name] = values
        return replace(self, columns=new)

    def select(self, mask: np.ndarray) -> "PanelDataset":
        """Row subset.  The caller is responsible for keeping it balanced."""
        mask = np.asarray(mask)
        return PanelDataset(
            unit=self.unit[mask].copy(),
            year=self.year[mask].copy(),
            month=self.month[mask].copy(),
            time=self.time[mask].copy(),
            region=None if self.region is None else self.region[mask].copy(),
            columns={k: v[mask].copy() for k, v in self.columns.items()},
            absorbed={k: v[mask].copy() for k, v in self.absorbed.items()},
        )

    def select_regions(self, regions: Sequence[str]) -> "PanelDataset":
        if self.region is None:
            raise ValidationError("dataset has no region column")
        return self.select(np.isin(self.region, list(regions)))

    def to_frame(self) -> pd.DataFrame:
        out = {"unit": self.unit}
        if self.region is not None:
            out["region"] = self.region
        out["year"] = self.year
        out["month"] = self.month
        out.update(self.columns)
        return pd.DataFrame(out)

    @classmethod
    def from_frame(
        cls,
        df: pd.DataFrame,
        *,
        unit: str = "unit",
        region: str | None = "region",
        year: str = "year",
        month: str = "month",
        columns: Sequence[str] | None = None,
        counts: Sequence[str] = (),
    ) -> "PanelDataset":
        """Validate a long frame and put it in canonical order."""
        if region is not None and region not in df.columns:
            region = None
        keys = [unit, year, month] + ([region] if region else [])
        for key in keys:
            if key not in df.columns:
                raise MissingColumn(f"missing key column {key!r}")
        if columns is None:
            columns = [c for c in df.columns if c not in keys]
        if not columns:
            raise MissingColumn("no outcome columns")
        for c in list(columns) + list(counts):
            if c not in df.columns:
                raise MissingColumn(f"missing column {c!r}")

        units = df[unit].astype(str).to_numpy(dtype=object)
        if np.any(units == "") or df[unit].isna().any():
            raise EmptyKey(f"empty value in key column {unit!r}")
        regions = None
        if region:
            if df[region].isna().any() or np.any(df[region].astype(str) == ""):
                raise EmptyKey(f"empty value in key column {region!r}")
            regions = df[region].astype(str).to_numpy(dtype=object)

        years = _numeric_key(df, year)
        months = _numeric_key(df, month)
        if np.any((months < 1) | (months > 12)):
            bad = int(np.flatnonzero((months < 1) | (months > 12))[0])
            raise ValidationError(f"month out of range 1..12 at row {bad}")
        ym = years * 12 + (months - 1)
        time = ym - ym.min()

        values = {}
        for c in columns:
            values[c] = _numeric_column(df, c)
        for c in counts:
            v = values[c] if c in values else _numeric_column(df, c)
            if np.any(v < 0):
                raise NegativeCount(f"negative count in column {c!r} at row {int(np.flatnonzero(v < 0)[0])}")
            if np.any(v != np.round(v)):
                raise ValidationError(f"non-integer count in column {c!r}")

        _check_balance(units, regions, time)

        ucode = np.unique(units, return_inverse=True)[1].ravel()
        rcode = np.zeros(len(units)) if regions is None else np.unique(regions, return_inverse=True)[1].ravel()
        order = np.lexsort((time, rcode, ucode))
        return cls(
            unit=units[order],
            region=None if regions is None else regions[order],
            year=years[order],
            month=months[order],
            time=time[order],
            columns={k: v[order] for k, v in values.items()},
        )


def _numeric_key(df: pd.DataFrame, col: str) -> np.ndarray:
    v = _numeric_column(df, col)
    if np.any(v != np.round(v)):
        raise ValidationError(f"non-integer value in key column {col!r}")
    return v.astype(np.int64)


def _numeric_column(df: pd.DataFrame, col: str) -> np.ndarray:
    raw = df[col]
    # python's float() is correctly rounded, so written values read back exactly
    try:
        values = np.array([float(v) for v in raw.to_numpy()], dtype=float)
    except (TypeError, ValueError):
        values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise NonNumericCell(
            f"non-numeric or empty cell in column {col!r} at row {row}: {raw.iloc[row]!r}",
            row=row,
            column=col,
        )
    return values


def _check_balance(units, regions, time) -> None:
    cells = pd.DataFrame({"unit": units, "t": time})
    if regions is not None:
        cells["region"] = regions
    keys = ["unit", "region"] if regions is not None else ["unit"]
    dup = cells.duplicated(keys + ["t"], keep="first")
    duplicated = [tuple(r) for r in cells.loc[dup, keys + ["t"]].itertuples(index=False)]
    T = int(time.max()) + 1
    present = cells.drop_duplicates(keys + ["t"])
    full = present[keys].drop_duplicates().merge(pd.DataFrame({"t": np.arange(T)}), how="cross")
    merged = full.merge(present, on=keys + ["t"], how="left", indicator=True)
    missing = [tuple(r) for r in merged.loc[merged["_merge"] == "left_only", keys + ["t"]].itertuples(index=False)]
    if missing or duplicated:
        parts = []
        if missing:
            parts.append(f"{len(missing)} missing (unit, t) pairs, first {missing[:5]}")
        if duplicated:
            parts.append(f"{len(duplicated)} duplicated, first {duplicated[:5]}")
        raise UnbalancedPanel("unbalanced panel: " + "; ".join(parts), missing, duplicated)


DEFAULT_SCHEMA = {"unit": "unit", "region": "region", "year": "year", "month": "month"}


def load_csv(path, schema: Mapping | None = None) -> PanelDataset:
    """Read a long-format panel CSV.

    ``schema`` maps roles to column names: ``unit``, ``region`` (optional),
    ``year``, ``month``, ``outcomes`` (list, defaults to every non-key
    column) and ``counts`` (outcomes that must be nonnegative integers).
    """
    explicit_region = "region" in (schema or {})
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    region = schema.get("region")
    if region and region not in df.columns:
        if explicit_region:
            raise MissingColumn(f"missing key column {region!r}")
        region = None
    for role in ("unit", "year", "month"):
        if schema[role] not in df.columns:
            raise MissingColumn(f"missing key column {schema[role]!r}")
    for col in [schema["unit"]] + ([region] if region else []):
        empty = (df[col] == "").to_numpy()
        if empty.any():
            raise EmptyKey(f"empty value in key column {col!r} at row {int(np.flatnonzero(empty)[0])}")
    return PanelDataset.from_frame(
        df,
        unit=schema["unit"],
        region=region,
        year=schema["year"],
        month=schema["month"],
        columns=schema.get("outcomes"),
        counts=schema.get("counts", ()),
    )


def write_csv(data: PanelDataset, path) -> None:
    """Write the canonical CSV form read back by :func:`load_csv`."""
    df = data.to_frame()
    for c in data.columns:
        v = df[c].to_numpy()
        if np.all(np.isfinite(v)) and np.all(v == np.round(v)) and np.all(np.abs(v) < 2**53):
            df[c] = v.astype(np.int64)
    df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n", float_format="%.17g")


def log1p_col(data: PanelDataset, col: str) -> np.ndarray:
    """``ln(1 + x)`` of a nonnegative column."""
    x = data[col]
    if np.any(x < 0):
        raise NegativeInput(f"column {col!r} has negative values; log1p needs x >= 0")
    return np.log1p(x)


# -- fixed effects -------------------------------------------------------------

def factor_codes(data: PanelDataset, factor: str, month_fe: str = "calendar") -> np.ndarray:
    """Integer category code per row for a ``*``-joined factor expression."""
    parts = []
    for token in factor.split("*"):
        token = token.strip()
        if token == "unit":
            parts.append(np.unique(data.unit, return_inverse=True)[1])
        elif token == "region":
            if data.region is None:
                raise ValidationError("factor 'region' requested but dataset has no regions")
            parts.append(np.unique(data.region, return_inverse=True)[1])
        elif token == "month":
            parts.append(data.month - 1 if month_fe == "calendar" else data.time)
        elif token == "year":
            parts.append(data.year - data.year.min())
        elif token == "time":
            parts.append(data.time)
        else:
            raise ValidationError(f"unknown fixed-effect token {token!r}; use {FACTOR_TOKENS}")
    if len(parts) == 1:
        return np.unique(parts[0], return_inverse=True)[1].astype(np.int64)
    stacked = np.column_stack(parts)
    return np.unique(stacked, axis=0, return_inverse=True)[1].ravel().astype(np.int64)


@dataclass(frozen=True)
class FixedEffectSpec:
    """Fixed effects to absorb, e.g. ``FixedEffectSpec(("unit*month",))``."""

    factors: tuple[str, ...] = ("unit*month",)
    absorb_method: str = "demean"
    month_fe: str = "calendar"

    def __post_init__(self):
        if isinstance(self.factors, str):
            object.__setattr__(self, "factors", (self.factors,))
        if self.absorb_method not in ("demean", "dummies"):
            raise ValidationError("absorb_method must be 'demean' or 'dummies'")
        if self.month_fe not in ("calendar", "yearmonth"):
            raise ValidationError("month_fe must be 'calendar' or 'yearmonth'")

    def codes(self, data: PanelDataset) -> list[np.ndarray]:
        return [factor_codes(data, f, self.month_fe) for f in self.factors]

    def dummy_matrix(self, data: PanelDataset) -> pd.DataFrame:
        """Indicator columns: all levels of the first factor, later factors drop level 0."""
        cols = {}
        for j, (name, codes) in enumerate(zip(self.factors, self.codes(data))):
            for level in range(1 if j else 0, codes.max() + 1):
                cols[f"fe[{name}={level}]"] = (codes == level).astype(float)
        return pd.DataFrame(cols)


@dataclass(frozen=True)
class ClusterKey:
    """Row-to-cluster partition as integer codes ``0..G-1``."""

    ids: np.ndarray
    label: str = ""

    def __post_init__(self):
        ids = np.unique(np.asarray(self.ids), return_inverse=True)[1].ravel().astype(np.int64)
        object.__setattr__(self, "ids", ids)

    @property
    def n_clusters(self) -> int:
        return int(self.ids.max()) + 1 if len(self.ids) else 0

    @classmethod
    def from_factors(cls, data: PanelDataset, factors: str | Sequence[str], month_fe: str = "calendar"):
        if not isinstance(factors, str):
            factors = "*".join(factors)
        return cls(factor_codes(data, factors, month_fe), label=factors)


class _Factor:
    def __init__(self, codes: np.ndarray):
        self.codes = np.asarray(codes, dtype=np.int64)
        self.n_levels = int(self.codes.max()) + 1
        n = len(self.codes)
        self.indicator = sparse.csr_matrix(
            (np.ones(n), (np.arange(n), self.codes)), shape=(n, self.n_levels)
        )

    def means(self, X: np.ndarray, w: np.ndarray | None) -> np.ndarray:
        if w is None:
            tot = self.indicator.T @ X
            cnt = np.bincount(self.codes, minlength=self.n_levels).astype(float)
        else:
            tot = self.indicator.T @ (X * w[:, None])
            cnt = np.bincount(self.codes, weights=w, minlength=self.n_levels)
        with np.errstate(invalid="ignore", divide="ignore"):
            m = tot / cnt[:, None]
        m[cnt == 0] = 0.0
        return m


def demean(
    X: np.ndarray,
    codes: Sequence[np.ndarray],
    weights: np.ndarray | None = None,
    *,
    tol: float = 1e-10,
    max_sweeps: int = 200,
    return_sweeps: bool = False,
):
    """Remove (weighted) fixed-effect cell means by alternating projections.

    A single factor is exact in one pass.  Several factors are swept in turn
    until the largest remaining cell mean is below ``tol`` times the column
    scale.
    """
    X = np.asarray(X, dtype=float)
    vector = X.ndim == 1
    R = X.reshape(len(X), -1).copy()
    if not codes:
        return (R.ravel() if vector else R, 0) if return_sweeps else (R.ravel() if vector else R)
    factors = [c if isinstance(c, _Factor) else _Factor(c) for c in codes]
    w = None if weights is None else np.asarray(weights, dtype=float)
    scale = np.maximum(1.0, np.abs(R).max(axis=0)) if R.size else np.ones(R.shape[1])

    sweeps = 0
    if len(factors) == 1:
        f = factors[0]
        R -= f.means(R, w)[f.codes]
        sweeps = 1
    else:
        converged = False
        prev = np.inf
        while True:
            for f in factors:
                R -= f.means(R, w)[f.codes]
            sweeps += 1
            resid = max(float(np.max(np.abs(f.means(R, w)) / scale)) for f in factors)
            converged = converged or resid < tol
            # past the tolerance, polish to round-off so a second pass is a no-op
            if converged and (resid < 1e-15 or resid >= prev or sweeps >= max_sweeps):
                break
            prev = resid
            if not converged and sweeps >= max_sweeps:
                raise NoConvergence(
                    f"alternating demeaning did not converge in {max_sweeps} sweeps "
                    f"(max scaled cell mean {resid:.3e})",
                    residual=resid,
                )
    out = R.ravel() if vector else R
    return (out, sweeps) if return_sweeps else out


def within_transform(
    data: PanelDataset,
    cols: Sequence[str],
    fe: FixedEffectSpec,
    *,
    tol: float = 1e-10,
    max_sweeps: int = 200,
) -> PanelDataset:
    """Demean ``cols`` within every fixed-effect cell of ``fe``."""
    if isinstance(cols, str):
        cols = [cols]
    X = np.column_stack([data[c] for c in cols])
    Xd = demean(X, fe.codes(data), tol=tol, max_sweeps=max_sweeps)
    new_cols = dict(data.columns)
    absorbed = dict(data.absorbed)
    for j, c in enumerate(cols):
        new_cols[c] = Xd[:, j].copy()
        absorbed[c] = X[:, j] - Xd[:, j] + absorbed.get(c, 0.0)
    return replace(data, columns=new_cols, absorbed=absorbed)
