import math
from dataclasses import replace

import numpy as np
import pytest

import experiments
from dealer_model import MarketConfig, TickSeries
from errors import ConfigurationError, MarketStalledError, UnderdeterminedFitError
from experiments import (
    COMMAND_KEYS,
    DEFAULT_D_GRID,
    STATUS_OK,
    STATUS_STALLED,
    SweepSpec,
    derive_seed,
    fit_line,
    ingest_ticks,
    load_config,
    market_config,
    parse_config_text,
    parse_overrides,
    read_manifest,
    record_items,
    run_one,
    run_sweep,
    sweep_spec,
    write_manifest,
)
from potential import AnalysisParams


def small_sweep(d_values):
    return SweepSpec(
        base=MarketConfig(n_dealers=100),
        d_values=tuple(d_values),
        analysis=AnalysisParams(window=500, stride=250),
        ticks_per_run=3000,
        base_seed=11,
    )


# ── seeds ──────────────────────────────────────────────────────────

def test_seed_is_deterministic():
    assert derive_seed(1, 0.25) == derive_seed(1, 0.25)
    assert 0 <= derive_seed(1, 0.25) < 2**64


def test_seed_depends_on_every_input():
    seeds = {derive_seed(1, 0.25), derive_seed(2, 0.25), derive_seed(1, 0.5), derive_seed(1, 0.25, 1)}
    assert len(seeds) == 4


def test_negative_zero_shares_the_seed():
    assert derive_seed(7, -0.0) == derive_seed(7, 0.0)


# ── line fit ───────────────────────────────────────────────────────

def test_exact_line():
    fit = fit_line([(d, 0.2 - 0.86 * d) for d in (-1.0, -0.5, 0.0, 0.5, 1.0)])
    assert fit.slope == pytest.approx(-0.86)
    assert fit.intercept == pytest.approx(0.2)
    assert fit.r_squared == pytest.approx(1.0)


def test_flat_line():
    fit = fit_line([(0.0, 1.0), (1.0, 1.0)])
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert fit.intercept == pytest.approx(1.0)


def test_noisy_line():
    rng = np.random.default_rng(0)
    d = np.linspace(-1.0, 1.0, 41)
    b = 0.1 - 1.2 * d + rng.normal(0.0, 0.05, d.size)
    fit = fit_line(zip(d, b))
    assert fit.slope == pytest.approx(-1.2, abs=0.1)
    assert fit.intercept == pytest.approx(0.1, abs=0.05)
    assert fit.r_squared > 0.95


def test_affine_invariance_of_the_fit():
    points = [(-1.0, 0.9), (-0.5, 0.4), (0.0, 0.1), (0.5, -0.6), (1.0, -1.0)]
    base = fit_line(points)
    moved = fit_line([(d, 2.0 * b + 3.0) for d, b in points])
    assert moved.slope == pytest.approx(2.0 * base.slope)
    assert moved.intercept == pytest.approx(2.0 * base.intercept + 3.0)
    assert moved.r_squared == pytest.approx(base.r_squared)


@pytest.mark.parametrize("points", [[(0.5, 1.0)], [(0.5, 1.0), (0.5, 2.0)]])
def test_single_abscissa_is_underdetermined(points):
    with pytest.raises(UnderdeterminedFitError):
        fit_line(points)


# ── sweeps ─────────────────────────────────────────────────────────

def test_sweep_rows_follow_the_grid():
    result = run_sweep(small_sweep([0.0, 0.3]))
    assert [row.d for row in result.rows] == [0.0, 0.3]
    assert result.complete
    assert all(row.status == STATUS_OK and row.n_windows == 10 for row in result.rows)
    assert result.fit is not None
    assert list(result.to_frame().columns) == ["d", "b_star", "b_std", "n_windows", "n_degenerate", "seed", "status"]


def test_sweep_results_do_not_depend_on_grid_order():
    forward = {row.d: row for row in run_sweep(small_sweep([0.0, 0.3])).rows}
    backward = {row.d: row for row in run_sweep(small_sweep([0.3, 0.0])).rows}
    assert forward == backward


def test_single_point_sweep_has_no_fit():
    result = run_sweep(small_sweep([0.0]))
    assert result.fit is None
    assert result.fit_frame().empty


def test_sweep_rejects_short_runs():
    spec = SweepSpec(analysis=AnalysisParams(window=2000), ticks_per_run=1000)
    with pytest.raises(ConfigurationError) as info:
        spec.validate()
    assert info.value.field == "ticks_per_run"


def test_sweep_keeps_a_potential_curve_per_d():
    spec = small_sweep([0.0, 0.3])
    result = run_sweep(spec)
    assert sorted(result.curves) == [0.0, 0.3]
    for curve in result.curves.values():
        assert len(curve.bin_centers) == spec.analysis.n_bins
        assert 0 < curve.counts.sum() <= spec.analysis.window - spec.analysis.m_analysis


def test_stalled_run_is_reported_not_raised():
    spec = replace(small_sweep([0.0]), base=MarketConfig(n_dealers=100, max_steps=1))
    row, curve = run_one(spec, 0.0)
    assert row.status == STATUS_STALLED
    assert math.isnan(row.b_star) and row.n_windows == 0
    assert curve is None


def test_fully_stalled_sweep_has_no_fit():
    spec = replace(small_sweep([0.0, 0.3]), base=MarketConfig(n_dealers=100, max_steps=1))
    result = run_sweep(spec)
    assert [row.status for row in result.rows] == [STATUS_STALLED, STATUS_STALLED]
    assert not result.complete
    assert result.fit is None and result.curves == {}


def test_line_is_fitted_over_the_runs_that_finished(monkeypatch):
    simulate_market = experiments.run_simulation

    def stall_at_zero(config):
        if config.d == 0.0:
            raise MarketStalledError(0, config.n_ticks, config.max_steps)
        return simulate_market(config)

    monkeypatch.setattr(experiments, "run_simulation", stall_at_zero)
    result = run_sweep(small_sweep([-0.3, 0.0, 0.3]))
    assert [row.status for row in result.rows] == [STATUS_OK, STATUS_STALLED, STATUS_OK]
    assert not result.complete
    assert result.fit is not None
    expected = fit_line([(row.d, row.b_star) for row in result.rows if row.status == STATUS_OK])
    assert result.fit == expected
    assert sorted(result.curves) == [-0.3, 0.3]


def test_default_grid():
    assert len(DEFAULT_D_GRID) == 9
    assert DEFAULT_D_GRID[0] == -1.0 and DEFAULT_D_GRID[-1] == 1.0


# ── ingestion ──────────────────────────────────────────────────────

def test_ingest_round_trip(tmp_path):
    series = TickSeries(100.0 + np.cumsum(np.full(50, 0.1)))
    series.to_csv(tmp_path / "ticks.csv")
    assert ingest_ticks(tmp_path / "ticks.csv").equals(series)


def test_smoothing_constant_series(tmp_path):
    TickSeries(np.full(10, 3.5)).to_csv(tmp_path / "flat.csv")
    smoothed = ingest_ticks(tmp_path / "flat.csv", smoothing=4)
    assert len(smoothed) == 7
    np.testing.assert_array_equal(smoothed.prices, 3.5)


def test_smoothing_width_three(tmp_path):
    TickSeries([1.0, 2.0, 3.0, 4.0]).to_csv(tmp_path / "short.csv")
    smoothed = ingest_ticks(tmp_path / "short.csv", smoothing=3)
    np.testing.assert_allclose(smoothed.prices, [2.0, 3.0])


def test_ingest_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_ticks(tmp_path / "absent.csv")


def test_ingest_rejects_zero_smoothing(tmp_path):
    with pytest.raises(ConfigurationError):
        ingest_ticks(tmp_path / "absent.csv", smoothing=0)


# ── config files ───────────────────────────────────────────────────

def test_parse_config_text():
    values = parse_config_text("# market\nn_dealers = 50\nd = -0.25  # contrarian\nwindow = 1000\n")
    assert values == {"n_dealers": "50", "d": "-0.25", "window": "1000"}
    config = market_config(values)
    assert config.n_dealers == 50 and config.d == -0.25
    assert config.spread == 1.0


def test_unknown_config_key():
    with pytest.raises(ConfigurationError) as info:
        parse_config_text("n_dealer = 50\n")
    assert info.value.field == "n_dealer"


def test_bad_config_value():
    with pytest.raises(ConfigurationError) as info:
        market_config({"n_dealers": "many"})
    assert info.value.field == "n_dealers"


def test_overrides():
    assert parse_overrides(["d=0.5", " seed = 3 "]) == {"d": "0.5", "seed": "3"}
    with pytest.raises(ConfigurationError):
        parse_overrides(["d"])


def test_sweep_spec_from_values():
    spec = sweep_spec({"d_values": "-0.5, 0, 0.5", "ticks_per_run": "5000", "window": "1000", "n_dealers": "80"})
    assert spec.d_values == (-0.5, 0.0, 0.5)
    assert spec.analysis.window == 1000
    assert spec.base.n_dealers == 80


def test_sweep_spec_bad_grid():
    with pytest.raises(ConfigurationError) as info:
        sweep_spec({"d_values": "0.1, x"})
    assert info.value.field == "d_values"


def test_manifest_round_trip(tmp_path):
    config = MarketConfig(d=0.1, seed=9)
    path = write_manifest(
        tmp_path / "manifest.ini",
        "simulate",
        {"output_dir": str(tmp_path)},
        record_items(config),
        {"d=0.1": "12345"},
    )
    command, run, values = read_manifest(path)
    assert command == "simulate"
    assert run == {"output_dir": str(tmp_path)}
    assert market_config(values) == config
    assert math.isclose(float(values["d"]), 0.1)


@pytest.mark.parametrize("command, key", [
    ("simulate", "n_dealers"),
    ("analyze", "window"),
    ("null", "seed"),
    ("null", "kind"),
    ("sweep", "d_values"),
    ("sweep", "integrator"),
])
def test_command_accepts_its_keys(command, key):
    assert key in COMMAND_KEYS[command]


def test_command_keys_are_checked(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("n_dealers = 50\nwindow = 1000\n")
    assert load_config(path, COMMAND_KEYS["sweep"]) == {"n_dealers": "50", "window": "1000"}
    with pytest.raises(ConfigurationError) as info:
        load_config(path, COMMAND_KEYS["simulate"])
    assert info.value.field == "window"
    with pytest.raises(ConfigurationError):
        parse_overrides(["n_dealers=5"], COMMAND_KEYS["analyze"])


def test_integrator_is_read_as_text():
    assert market_config({"integrator": "step"}).integrator == "step"
    with pytest.raises(ConfigurationError) as info:
        market_config({"integrator": "rk4"})
    assert info.value.field == "integrator"
