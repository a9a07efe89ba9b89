import numpy as np
import pandas as pd
import pytest

from hetpanel.panel import PanelDataset


def small_panel(n_units=3, n_periods=4, regions=None, seed=0, start=(2017, 11)):
    """Balanced toy panel with columns y and x."""
    rng = np.random.default_rng(seed)
    rows = []
    regions = regions or [None]
    y0, m0 = start
    for u in range(n_units):
        for r in regions:
            for t in range(n_periods):
                ym = y0 * 12 + m0 - 1 + t
                rows.append(
                    {"unit": f"u{u}", "region": r, "year": ym // 12, "month": ym % 12 + 1,
                     "y": rng.poisson(3), "x": rng.normal()}
                )
    df = pd.DataFrame(rows)
    if regions == [None]:
        df = df.drop(columns="region")
    return df


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_frame():
    return small_panel()


# acceptance verdicts, filled by test_acceptance and echoed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
