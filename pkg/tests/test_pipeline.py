import json
import logging
import shutil

import numpy as np
import pandas as pd
import pytest

from hetpanel.classo import unit_ols
from hetpanel.cli import main
from hetpanel.exceptions import MissingArtifact, ValidationError
from hetpanel.pipeline import (
    ARTIFACTS,
    _grouped,
    emit_report,
    load_config,
    parse_grid,
    read_csv,
    run_pipeline,
    run_stage,
    stars,
)
from hetpanel.synthgen import write_demo_inputs


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    cfg_path = write_demo_inputs(root, n_fields=30, reps=5, seed=0)
    cfg = load_config(cfg_path)
    run_pipeline(cfg)
    return cfg_path, cfg


def test_stars():
    assert stars(0.04) == "**"
    assert stars(0.009) == "***"
    assert stars(0.07) == "*"
    assert stars(0.2) == ""
    assert stars(float("nan")) == ""


def test_parse_grid():
    assert parse_grid("2,3x0.1,0.25") == ((2, 0.1), (2, 0.25), (3, 0.1), (3, 0.25))
    with pytest.raises(ValidationError):
        parse_grid("2,3")


def test_config_requires_seed(tmp_path):
    cfg_path = write_demo_inputs(tmp_path, n_fields=6, reps=2)
    text = cfg_path.read_text().replace("seed = 0\n", "")
    cfg_path.write_text(text)
    with pytest.raises(ValidationError):
        load_config(cfg_path)
    assert load_config(cfg_path, seed=4).seed == 4


def test_config_hash_tracks_settings(tmp_path):
    cfg_path = write_demo_inputs(tmp_path, n_fields=6, reps=2)
    a = load_config(cfg_path)
    assert a.config_hash == load_config(cfg_path).config_hash
    assert a.config_hash != load_config(cfg_path, c=0.5).config_hash
    assert a.config_hash != load_config(cfg_path, seed=1).config_hash


def test_demo_completes_all_stages(demo):
    _, cfg = demo
    for name in ARTIFACTS:
        assert (cfg.output / name).exists()
    assert not list(cfg.output.glob("*.partial"))
    es = read_csv(cfg.output, "event_study.csv")
    assert len(es) == 40
    assert sorted(es["s"]) == [s for s in range(-20, 21) if s != 0]
    assert (cfg.output / "treatratio.csv").exists()


def test_artifacts_stamped(demo):
    _, cfg = demo
    t2 = json.loads((cfg.output / "table2.json").read_text())
    assert t2["meta"] == {"config_hash": cfg.config_hash, "seed": 0}
    first = (cfg.output / "courtyard.csv").read_text().splitlines()[0]
    assert first == f"# config_hash={cfg.config_hash} seed=0"


def test_report_lists_artifacts(demo):
    _, cfg = demo
    text = emit_report(cfg.output)
    for name in ARTIFACTS:
        assert f"- {name}" in text


def test_report_empty_dir(tmp_path):
    with pytest.raises(MissingArtifact, match="classo_fit.json"):
        emit_report(tmp_path)


def test_report_names_first_missing(demo, tmp_path):
    _, cfg = demo
    shutil.copytree(cfg.output, tmp_path / "a")
    (tmp_path / "a" / "table4.json").unlink()
    (tmp_path / "a" / "placebo.csv").unlink()
    with pytest.raises(MissingArtifact, match="table4.json"):
        emit_report(tmp_path / "a")


def test_stage_needs_upstream(tmp_path):
    cfg = load_config(write_demo_inputs(tmp_path, n_fields=6, reps=2))
    with pytest.raises(MissingArtifact):
        run_stage(cfg, "ddd")


def test_c_zero_degenerates(demo, tmp_path, caplog):
    cfg_path, _ = demo
    cfg = load_config(cfg_path, c=0.0, output=str(tmp_path / "c0"))
    with caplog.at_level(logging.INFO, logger="hetpanel.pipeline"):
        run_stage(cfg, "classo")
    assert any("degenerates" in r.message for r in caplog.records)
    t2 = json.loads((cfg.output / "table2.json").read_text())["columns"]
    fits = json.loads((cfg.output / "classo_fit.json").read_text())["fits"]
    for dim in cfg.dimensions:
        assert t2[dim]["degenerate"]
        design = _grouped(cfg, dim)
        d = design.data
        from hetpanel.panel import within_transform

        dm = within_transform(d, [design.outcome] + design.regressors, design.fe)
        order = np.lexsort((dm.time, dm.unit))
        N, T = len(np.unique(dm.unit)), dm.n_periods
        Y = dm[design.outcome][order].reshape(N, T)
        X = np.stack([dm[r][order] for r in design.regressors], -1).reshape(N, T, -1)
        ols = pd.DataFrame(unit_ols(Y, X), index=dm.unit[order][::T], columns=design.regressors)
        assign = pd.Series(fits[dim]["assignment"])
        for g, cents in t2[dim]["classo"].items():
            members = assign[assign == int(g[5:])].index
            if len(members):
                for r in design.regressors:
                    assert cents[r] == pytest.approx(ols.loc[members, r].mean(), abs=1e-8)


def test_grid_sweep(demo, tmp_path):
    cfg_path, _ = demo
    cfg = load_config(cfg_path, grid="2,3x0.25", output=str(tmp_path / "g"))
    run_stage(cfg, "classo")
    grid = json.loads((cfg.output / "classo_grid.json").read_text())["grid"]
    assert [(g["K"], g["c"]) for g in grid if g["dimension"] == "inflow"] == [(2, 0.25), (3, 0.25)]


# -- cli ---------------------------------------------------------------------------

def test_cli_report_and_exit_codes(demo, tmp_path, capsys):
    _, cfg = demo
    assert main(["report", str(cfg.output)]) == 0
    assert "Triple differences" in capsys.readouterr().out
    assert main(["report", str(tmp_path)]) == 1
    assert "MissingArtifact" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "nope.ini")]) == 1


def test_cli_stage_failure_names_stage(tmp_path, capsys):
    cfg_path = write_demo_inputs(tmp_path, n_fields=6, reps=2)
    assert main(["run", str(cfg_path), "--stage", "placebo"]) == 1
    assert "stage placebo failed" in capsys.readouterr().err


def test_cli_demo_and_single_stage(tmp_path, capsys):
    assert main(["demo", str(tmp_path / "d"), "--fields", "8", "--reps", "2"]) == 0
    cfg_path = capsys.readouterr().out.strip()
    assert main(["run", cfg_path, "--stage", "classo", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "classo_fit.json").exists()
    assert not (tmp_path / "o" / "courtyard.csv").exists()


def test_cli_no_treated_is_validation_error(tmp_path, capsys):
    cfg_path = write_demo_inputs(tmp_path, n_fields=8, reps=2)
    out = tmp_path / "o"
    assert main(["run", cfg_path.as_posix(), "--stage", "classo", "--out", str(out)]) == 0
    assert main(["run", cfg_path.as_posix(), "--stage", "courtyard", "--out", str(out)]) == 0
    flags = (out / "courtyard.csv").read_text().splitlines()
    header, rows = flags[:2], flags[2:]
    cols = header[1].split(",")
    fixed = []
    for line in rows:
        parts = line.split(",")
        for dim in ("inflow", "outflow"):
            parts[cols.index(dim)] = "0"
        fixed.append(",".join(parts))
    (out / "courtyard.csv").write_text("\n".join(header + fixed) + "\n")
    code = main(["run", cfg_path.as_posix(), "--stage", "ddd", "--out", str(out)])
    # no treated fields is a validation problem, not an estimation failure
    assert code == 1
    assert "NoTreatedUnits" in capsys.readouterr().err


def test_cli_estimation_failure_exit_two(tmp_path, monkeypatch, capsys):
    import hetpanel.cli as cli
    from hetpanel.exceptions import RankDeficient

    def boom(cfg, stage):
        raise RankDeficient("key term aliased", ["Post"])

    monkeypatch.setattr(cli, "run_stage", boom)
    cfg_path = write_demo_inputs(tmp_path, n_fields=6, reps=2)
    assert main(["run", str(cfg_path), "--stage", "ddd"]) == 2
    assert "stage ddd failed: RankDeficient" in capsys.readouterr().err
