"""
End-to-end checks of the estimator against known answers and of the
dealer model's qualitative behaviour. The ``slow`` ones run the standard
300-dealer market for 100,000 ticks per value of d.
"""

from dataclasses import replace

import numpy as np
import pytest

from dealer_model import MarketConfig, init_market, run_simulation, simulate
from experiments import SweepSpec, run_sweep
from potential import (
    AnalysisParams,
    diffusion_curve,
    diffusion_ratio,
    displacement_series,
    potential_curve,
    rolling_b,
    summarize_estimates,
)
from surrogate import SurrogateSpec, generate, shuffled_surrogate

DISJOINT = AnalysisParams(window=2000, stride=2000)


def test_random_walk_curvature_is_null():
    spec = SurrogateSpec(length=200 * 2000 + 16, seed=21)
    summary = summarize_estimates(rolling_b(generate(spec), DISJOINT))
    assert summary["n_windows"] == 200
    assert abs(summary["b_star"]) < 0.05
    assert 0.15 <= summary["b_std"] <= 0.25


@pytest.mark.parametrize("planted_b", [-0.5, 0.0, 0.5, 1.0])
def test_planted_curvature_is_recovered(planted_b):
    spec = SurrogateSpec(kind="planted", length=200_000, seed=31, planted_b=planted_b)
    summary = summarize_estimates(rolling_b(generate(spec), DISJOINT))
    assert summary["b_star"] == pytest.approx(planted_b, abs=0.1)


# ── full-size dealer markets ───────────────────────────────────────

STANDARD = MarketConfig(n_ticks=100_000, seed=3)


@pytest.mark.slow
def test_curvature_sign_follows_d():
    sweep = run_sweep(SweepSpec(d_values=(-0.5, 0.0, 0.5, 1.0), ticks_per_run=100_000, base_seed=3, workers=-1))
    assert sweep.complete
    contrarian, neutral, follower, strong = (row.b_star for row in sweep.rows)
    assert strong < follower < 0 < contrarian
    assert follower < neutral < contrarian


@pytest.mark.slow
def test_curvature_falls_linearly_with_d():
    sweep = run_sweep(SweepSpec(ticks_per_run=100_000, base_seed=5, workers=-1))
    assert sweep.complete
    assert sweep.fit.r_squared >= 0.95
    assert sweep.fit.slope == pytest.approx(-0.86, abs=0.25)
    assert sweep.fit.intercept == pytest.approx(0.2, abs=0.1)


@pytest.mark.slow
def test_diffusion_orders_contrarians_below_followers():
    contrarian = run_simulation(replace(STANDARD, d=-0.5))
    follower = run_simulation(replace(STANDARD, d=1.0))
    shuffled = shuffled_surrogate(contrarian, seed=1)
    ratio = {
        name: diffusion_ratio(diffusion_curve(series, 100), 100)
        for name, series in [("contrarian", contrarian), ("shuffled", shuffled), ("follower", follower)]
    }
    assert ratio["contrarian"] < ratio["shuffled"] < ratio["follower"]


@pytest.mark.slow
def test_long_run_conserves_positions():
    state = init_market(replace(STANDARD, d=0.25))
    buyers = int((state.positions > 0).sum())
    ticks = simulate(state, n_ticks=100_000, max_steps=STANDARD.max_steps)
    assert len(ticks) == 100_000
    assert int((state.positions > 0).sum()) == buyers
    assert np.all(np.isfinite(ticks.prices))


@pytest.mark.slow
@pytest.mark.parametrize("d, opens_up", [(-0.5, True), (1.0, False)])
def test_potential_opens_up_for_contrarians(d, opens_up):
    ticks = run_simulation(replace(STANDARD, d=d))
    curve = potential_curve(displacement_series(ticks, AnalysisParams()), 16)
    populated = curve.counts > 0
    quadratic = np.polyfit(curve.bin_centers[populated], curve.u_values[populated], 2, w=np.sqrt(curve.counts[populated]))
    assert (quadratic[0] > 0) == opens_up
