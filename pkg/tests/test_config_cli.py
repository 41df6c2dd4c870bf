import json
import math
import os

import numpy as np
import pytest

from lmse_portfolio import cli, report
from lmse_portfolio import config as cfgmod
from lmse_portfolio.errors import BlowUpError, ConfigError
from lmse_portfolio.hjb import GridSpec
from lmse_portfolio.presets import PRESETS, preset_rows, single
from lmse_portfolio.simulate import SimConfig, simulate


def _small(tmp_path, **kw):
    cfg = cfgmod.affine_config(
        0.01, 0.002, 1.0, horizon=1.0,
        grid=GridSpec(0.5, 5, 600), sim=SimConfig(paths=500, seed=3), out=str(tmp_path / "run"), **kw,
    )
    path = tmp_path / "exp.yaml"
    path.write_text(cfg.dumps())
    return cfg, str(path)


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("fmt", ["yaml", "json"])
def test_round_trip(fmt):
    for cfg in (cfgmod.affine_config(0.02, 0.001, 2.0), cfgmod.pension_config(5.0, grid=GridSpec(0.5, 5, 9000))):
        back = cfgmod.loads(cfg.dumps(fmt))
        assert back.equivalent(cfg)
        assert back.solve_hash() == cfg.solve_hash()


def test_pension_preset_shortcut():
    text = """
market: {r: 0.00001, b: [0.03, 0.048, 0.035, 0.05],
         sigma_cov: [[0.00297, 0.00182, -0.000439, -0.000541], [0.00182, 0.0495, -0.00778, 0.0119],
                     [-0.000439, -0.00778, 0.0181, 0.0147], [-0.000541, 0.0119, 0.0147, 0.0394]],
         leverage_cap: 1}
target: {variant: tabulated, preset: pension, kappa: 1.1}
"""
    cfg = cfgmod.loads(text)
    assert cfg.target_spec().initial_wealth == pytest.approx(5.293)
    assert cfg.target.horizon == 15.0


def test_errors_name_the_line():
    base = cfgmod.affine_config(0.01, 0.0, 1.0).dumps().splitlines()
    i = next(j for j, line in enumerate(base) if line.startswith("grid:"))
    base[i] = "grid: {h_x: -0.5, extra_nodes: 5, M: 6000}"
    with pytest.raises(ConfigError, match=f"line {i + 1}"):
        cfgmod.loads("\n".join(base))


def test_type_and_unknown_field_errors():
    text = cfgmod.affine_config(0.01, 0.0, 1.0).dumps()
    with pytest.raises(ConfigError, match="sim.paths"):
        cfgmod.loads(text.replace("paths: 10000", "paths: many"))
    with pytest.raises(ConfigError, match="unknown field"):
        cfgmod.loads(text + "colour: blue\n")
    with pytest.raises(ConfigError, match="line"):
        cfgmod.loads("market: [1, 2\n")
    with pytest.raises(ConfigError, match="rebalance"):
        cfgmod.loads(text.replace("monthly", "hourly"))


def test_rejects_drift_at_or_below_risk_free():
    text = cfgmod.affine_config(0.01, 0.0, 1.0).dumps().replace("b: [0.01, 0.05]", "b: [0.00001, 0.05]")
    with pytest.raises(ConfigError):
        cfgmod.loads(text)


def test_overrides_do_not_change_solve_hash():
    cfg = cfgmod.affine_config(0.01, 0.0, 1.0)
    other = cfg.with_overrides(out="elsewhere", seed=9, paths=200, threads=2)
    assert other.solve_hash() == cfg.solve_hash()
    assert other.sim.paths == 200 and other.out == "elsewhere"
    with pytest.raises(ConfigError):
        cfg.with_overrides(paths=1)


def test_presets_cover_every_row():
    counts = {name: len(preset_rows(name)) for name in PRESETS}
    assert counts["margin"] == 6 and counts["leverage"] == 9 and counts["rebalance"] == 10
    assert counts["empirical"] == 7
    cfg = single("leverage/rbar_2pct_cap_2")
    assert cfg.market.leverage_cap == 2.0 and cfg.grid.steps == 60_000
    assert preset_rows("margin", paths=50, seed=4)[0].config.sim.paths == 50
    with pytest.raises(KeyError):
        preset_rows("nope")


# ---------------------------------------------------------------- atomic writes


def test_atomic_write_keeps_old_file_on_failure(tmp_path, monkeypatch):
    path = tmp_path / "stats.csv"
    report.atomic_write(str(path), "old\n")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        report.atomic_write(str(path), "new\n")
    assert path.read_text() == "old\n"


# ---------------------------------------------------------------- end to end


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg, path = _small(tmp)
    assert cli.main(["solve", "--config", path]) == 0
    assert cli.main(["simulate", "--config", path]) == 0
    assert cli.main(["report", "--out", cfg.out, "--lattice", "5", "9"]) == 0
    return cfg, path


def test_solve_writes_checkpoint_and_report(pipeline):
    cfg, _ = pipeline
    doc = json.loads(open(os.path.join(cfg.out, "solve_report.json")).read())
    assert doc["config_hash"] == cfg.solve_hash()
    assert doc["steps"] == 600
    assert cfgmod.load(os.path.join(cfg.out, "config.yaml")).equivalent(cfg)


def test_stats_have_one_row_per_rebalance_date(pipeline):
    cfg, _ = pipeline
    cols = report.read_columns(os.path.join(cfg.out, "stats.csv"), report.STATS_COLUMNS)
    np.testing.assert_allclose(cols["t"], np.arange(13) / 12)
    hist = report.read_columns(os.path.join(cfg.out, "histogram.csv"), report.HISTOGRAM_COLUMNS)
    assert hist["mass"].sum() == pytest.approx(1.0)
    summary = report.read_summary(os.path.join(cfg.out, "summary.json"))
    assert summary["config_hash"] == cfg.solve_hash()
    assert summary["seed"] == 3 and summary["paths"] == 500


def test_report_files_and_heatmap_dimensions(pipeline):
    cfg, _ = pipeline
    plots = os.path.join(cfg.out, "plots")
    names = set(os.listdir(plots))
    assert {"wealth_curve.txt", "achievement_curve.txt", "percentile_curve.txt",
            "tracking_error_histogram.txt", "leverage_heatmap.txt", "weight_grid.csv"} <= names
    for name in ("weights_heatmap_1.txt", "weights_heatmap_2.txt", "leverage_heatmap.txt"):
        t, x, v = report.read_heatmap(os.path.join(plots, name))
        assert v.shape == (5, 9) == (t.size, x.size)
    rows = report.read_columns(os.path.join(plots, "weight_grid.csv"), ("t", "x", "pi_1", "pi_2", "leverage"))
    assert rows["t"].size == 45


def test_report_is_reproducible(pipeline, tmp_path):
    cfg, _ = pipeline
    assert cli.main(["report", "--stats", cfg.out, "--out", str(tmp_path), "--lattice", "5", "9"]) == 0
    for name in os.listdir(tmp_path):
        assert (tmp_path / name).read_bytes() == open(os.path.join(cfg.out, "plots", name), "rb").read()


def test_simulate_is_reproducible_across_invocations(pipeline, tmp_path):
    cfg, path = pipeline
    ckpt = os.path.join(cfg.out, "surface.csv")
    assert cli.main(["simulate", "--config", path, "--out", str(tmp_path), "--checkpoint", ckpt]) == 0
    assert (tmp_path / "stats.csv").read_bytes() == open(os.path.join(cfg.out, "stats.csv"), "rb").read()


def test_exit_code_invalid_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("market: {}\n")
    assert cli.main(["solve", "--config", str(bad)]) == 2
    assert cli.main(["solve", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_exit_code_numerical_failure(tmp_path, monkeypatch):
    _, path = _small(tmp_path)

    def blow_up(*a, **k):
        raise BlowUpError("non-finite value", step=10, node=3)

    monkeypatch.setattr(cli, "solve_hjb", blow_up)
    assert cli.main(["solve", "--config", path]) == 3


def test_exit_code_hash_mismatch(pipeline, tmp_path):
    cfg, _ = pipeline
    other = cfgmod.affine_config(
        0.02, 0.002, 1.0, horizon=1.0, grid=GridSpec(0.5, 5, 600), sim=SimConfig(paths=50), out=str(tmp_path)
    )
    p = tmp_path / "other.yaml"
    p.write_text(other.dumps())
    code = cli.main(["simulate", "--config", str(p), "--checkpoint", os.path.join(cfg.out, "surface.csv")])
    assert code == 4


def test_exit_code_missing_series(tmp_path):
    assert cli.main(["report", "--stats", str(tmp_path), "--out", str(tmp_path / "plots")]) == 5
    (tmp_path / "stats.csv").write_text("t,mean_wealth\n0.0,100.0\n")
    (tmp_path / "histogram.csv").write_text("bin_left,bin_right,mass\n0.0,0.005,1.0\n")
    assert cli.main(["report", "--stats", str(tmp_path), "--out", str(tmp_path / "plots")]) == 5


def test_fresh_seed_moves_achievement_within_two_standard_errors(small_solve):
    market, spec, surface, _ = small_solve
    n = 4000
    a = simulate(market, spec, surface, SimConfig(paths=n, seed=1)).summary()["achievement_T"]
    b = simulate(market, spec, surface, SimConfig(paths=n, seed=2)).summary()["achievement_T"]
    p = 0.5 * (a + b)
    assert abs(a - b) <= 2 * math.sqrt(2 * p * (1 - p) / n)
