"""
Potential-force estimation on tick series.

Prices are modelled as a random walk in a quadratic potential centred on the
super-moving average P_M (the mean of the last M prices):

    P(u+1) = P(u) - b/(M-1) * (P(u) - P_M(u)) + F(u)

The curvature b is estimated per window by regressing the drift
y(u) = P(u+1) - P(u) on the displacement x(u) = P(u) - P_M(u);
b > 0 pulls the price back to P_M, b < 0 pushes it away.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from dealer_model import PRICE_FORMAT, TickSeries
from errors import (
    ConfigurationError,
    DegenerateWindowError,
    InsufficientHistoryError,
    NoEstimatesError,
)

logger = logging.getLogger(__name__)

PriceInput = Union[TickSeries, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class AnalysisParams:
    """
    Args:
        m_analysis: Size M of the super-moving average.
        window: Ticks per estimation window.
        stride: Ticks between successive window starts.
        min_displacement_spread: Smallest std of x(u) a window may have.
        n_bins: Bins of the empirical potential curve.
        curve_coverage: Central quantile range of x(u) covered by the bins.
    """

    m_analysis: int = 16
    window: int = 2000
    stride: int = 100
    min_displacement_spread: float = 1e-12
    n_bins: int = 25
    curve_coverage: float = 0.98

    def validate(self) -> "AnalysisParams":
        if self.m_analysis < 2:
            raise ConfigurationError("m_analysis", f"must be >= 2, got {self.m_analysis}")
        if self.window <= self.m_analysis:
            raise ConfigurationError("window", f"must exceed m_analysis={self.m_analysis}, got {self.window}")
        if self.stride < 1:
            raise ConfigurationError("stride", f"must be >= 1, got {self.stride}")
        if not self.min_displacement_spread > 0:
            raise ConfigurationError("min_displacement_spread", "must be > 0")
        if self.n_bins < 3:
            raise ConfigurationError("n_bins", f"must be >= 3, got {self.n_bins}")
        if not 0 < self.curve_coverage <= 1:
            raise ConfigurationError("curve_coverage", f"must be in (0, 1], got {self.curve_coverage}")
        return self

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class PotentialEstimate:
    """One window's curvature fit. ``b == -(M - 1) * slope`` by construction."""

    window_start: int
    b: float
    slope: float
    intercept: float
    residual_std: float
    n_points: int


ESTIMATE_COLUMNS = [f.name for f in fields(PotentialEstimate)]


@dataclass(frozen=True)
class RollingResult:
    estimates: List[PotentialEstimate]
    n_degenerate: int = 0

    @property
    def b_values(self) -> np.ndarray:
        return np.array([est.b for est in self.estimates], dtype=np.float64)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(est) for est in self.estimates], columns=ESTIMATE_COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format=PRICE_FORMAT)
        return path


@dataclass(frozen=True, eq=False)
class PotentialCurve:
    """
    Empirical (M-1)U(x) per displacement bin; ``u_values`` is NaN for
    empty bins.
    """

    bin_centers: np.ndarray
    u_values: np.ndarray
    counts: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.bin_centers, "u_of_x": self.u_values, "count": self.counts})

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format=PRICE_FORMAT)
        return path


def _as_prices(prices: PriceInput) -> np.ndarray:
    if isinstance(prices, TickSeries):
        return prices.prices
    return np.asarray(prices, dtype=np.float64)


def _xy(pairs) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(pairs, pd.DataFrame):
        return pairs["x"].to_numpy(dtype=np.float64), pairs["y"].to_numpy(dtype=np.float64)
    x, y = pairs
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)


def _check_spread(x: np.ndarray, min_displacement_spread: float) -> None:
    if len(x) < 2 or np.ptp(x) == 0.0:
        raise DegenerateWindowError("fewer than two distinct displacements")
    spread = float(np.std(x))
    if spread < min_displacement_spread:
        raise DegenerateWindowError(f"displacement std {spread:.3g} below {min_displacement_spread:.3g}")


# ────────────────────────────────────────────────────────────────────
# Displacements
# ────────────────────────────────────────────────────────────────────

def super_moving_average(prices: PriceInput, u: int, m: int) -> float:
    """P_M(u) = (1/m) * sum_{k=0}^{m-1} P(u-k)."""
    p = _as_prices(prices)
    if m < 1:
        raise ConfigurationError("m", f"must be >= 1, got {m}")
    if u < m - 1:
        raise InsufficientHistoryError(f"P_M({u}) needs {m} prices, only {u + 1} available")
    if u >= len(p):
        raise IndexError(f"tick {u} beyond series of length {len(p)}")
    return float(np.mean(p[u - m + 1 : u + 1]))


def _displacements(p: np.ndarray, m: int) -> Tuple[np.ndarray, np.ndarray]:
    n = len(p)
    if n <= m + 1:
        raise InsufficientHistoryError(f"series of {n} ticks too short for M={m}")
    # p_m[k] is P_M at u = k + m - 1
    p_m = sliding_window_view(p, m).mean(axis=1)
    x = p[m - 1 : n - 1] - p_m[: n - m]
    y = p[m:] - p[m - 1 : n - 1]
    return x, y


def displacement_series(prices: PriceInput, params: AnalysisParams) -> pd.DataFrame:
    """
    Pairs x(u) = P(u) - P_M(u), y(u) = P(u+1) - P(u) for every tick u that
    has both; columns ``u, x, y``.
    """
    p = _as_prices(prices)
    m = params.m_analysis
    x, y = _displacements(p, m)
    return pd.DataFrame({"u": np.arange(m - 1, len(p) - 1), "x": x, "y": y})


# ────────────────────────────────────────────────────────────────────
# Curvature
# ────────────────────────────────────────────────────────────────────

def estimate_b(
    pairs,
    m_analysis: int,
    min_displacement_spread: float = AnalysisParams.min_displacement_spread,
    window_start: int = 0,
) -> PotentialEstimate:
    """
    Least-squares fit y = slope * x + intercept over one window.

    Args:
        pairs: DataFrame with ``x``/``y`` columns, or an ``(x, y)`` tuple.
        m_analysis: M of the super-moving average the pairs were built with.

    Returns:
        PotentialEstimate with b = -(M - 1) * slope; the intercept absorbs
        net drift and does not enter b.

    Raises:
        DegenerateWindowError: Displacements have (almost) no spread.
    """
    x, y = _xy(pairs)
    _check_spread(x, min_displacement_spread)

    fit = stats.linregress(x, y)
    residuals = y - (fit.intercept + fit.slope * x)
    slope = float(fit.slope)
    return PotentialEstimate(
        window_start=int(window_start),
        b=-(m_analysis - 1) * slope,
        slope=slope,
        intercept=float(fit.intercept),
        residual_std=float(np.std(residuals)),
        n_points=len(x),
    )


def window_starts(n_ticks: int, params: AnalysisParams) -> range:
    """Starts 0, stride, 2*stride, ... while start + window + M <= n_ticks."""
    return range(0, n_ticks - params.window - params.m_analysis + 1, params.stride)


def _fit_window(x, y, start, params):
    try:
        return estimate_b(
            (x, y),
            params.m_analysis,
            min_displacement_spread=params.min_displacement_spread,
            window_start=start,
        )
    except DegenerateWindowError as exc:
        logger.debug("window %d skipped: %s", start, exc)
        return None


def rolling_b(prices: PriceInput, params: AnalysisParams, n_jobs: int = 1) -> RollingResult:
    """
    Curvature b(u) over sliding windows.

    The window starting at tick s covers ticks [s, s + window) and yields
    ``window - M`` pairs. Degenerate windows are skipped and counted.
    Results are in window order whatever ``n_jobs`` is.
    """
    params.validate()
    p = _as_prices(prices)
    m, width = params.m_analysis, params.window
    if len(p) < width + m:
        raise InsufficientHistoryError(f"series of {len(p)} ticks shorter than window {width} + M {m}")

    # pairs are computed once; pair index k corresponds to tick u = k + m - 1
    x, y = _displacements(p, m)
    n_pairs = width - m
    starts = window_starts(len(p), params)

    if n_jobs == 1:
        fitted = [_fit_window(x[s : s + n_pairs], y[s : s + n_pairs], s, params) for s in starts]
    else:
        fitted = Parallel(n_jobs=n_jobs)(
            delayed(_fit_window)(x[s : s + n_pairs], y[s : s + n_pairs], s, params) for s in starts
        )

    estimates = [est for est in fitted if est is not None]
    n_degenerate = len(fitted) - len(estimates)
    if n_degenerate:
        logger.warning("%d of %d windows degenerate and skipped", n_degenerate, len(fitted))
    return RollingResult(estimates=estimates, n_degenerate=n_degenerate)


def _b_values(estimates) -> np.ndarray:
    if isinstance(estimates, RollingResult):
        return estimates.b_values
    return np.array([est.b if isinstance(est, PotentialEstimate) else est for est in estimates], dtype=np.float64)


def b_star(estimates: Union[RollingResult, Iterable[PotentialEstimate]]) -> float:
    """Time average of b(u)."""
    values = _b_values(estimates)
    if values.size == 0:
        raise NoEstimatesError("no curvature estimates to average")
    return float(values.mean())


def summarize_estimates(result: RollingResult) -> dict:
    values = result.b_values
    return {
        "b_star": b_star(result),
        "b_std": float(values.std(ddof=1)) if values.size > 1 else 0.0,
        "n_windows": int(values.size),
        "n_degenerate": int(result.n_degenerate),
    }


# ────────────────────────────────────────────────────────────────────
# Potential shape
# ────────────────────────────────────────────────────────────────────

def potential_curve(
    pairs,
    m_analysis: int,
    n_bins: int = AnalysisParams.n_bins,
    coverage: float = AnalysisParams.curve_coverage,
    min_displacement_spread: float = AnalysisParams.min_displacement_spread,
) -> PotentialCurve:
    """
    Empirical (M-1)U(x): mean drift per displacement bin, integrated
    (trapezoid rule over populated bins) as -(M-1) * ybar and shifted so
    that min U = 0.
    """
    if n_bins < 3:
        raise ConfigurationError("n_bins", f"must be >= 3, got {n_bins}")
    x, y = _xy(pairs)
    _check_spread(x, min_displacement_spread)

    tail = (1.0 - coverage) / 2.0
    lo, hi = np.quantile(x, [tail, 1.0 - tail])
    if not hi > lo:
        lo, hi = float(x.min()), float(x.max())

    mean_drift, edges, _ = stats.binned_statistic(x, y, statistic="mean", bins=n_bins, range=(lo, hi))
    counts, _, _ = stats.binned_statistic(x, y, statistic="count", bins=n_bins, range=(lo, hi))
    centers = (edges[:-1] + edges[1:]) / 2.0
    counts = counts.astype(np.int64)

    populated = counts > 0
    u_values = np.full(n_bins, np.nan)
    if populated.sum() >= 2:
        force = -(m_analysis - 1) * mean_drift[populated]
        integrated = cumulative_trapezoid(force, centers[populated], initial=0.0)
        u_values[populated] = integrated - integrated.min()
    else:
        u_values[populated] = 0.0
    return PotentialCurve(bin_centers=centers, u_values=u_values, counts=counts)


def window_curve(prices: PriceInput, params: AnalysisParams, start: int = 0) -> PotentialCurve:
    """Potential curve of the estimation window that begins at tick ``start``."""
    p = _as_prices(prices)
    if start < 0 or start + params.window + params.m_analysis > len(p):
        raise InsufficientHistoryError(f"curve window at tick {start} runs past the series end ({len(p)} ticks)")
    n_pairs = params.window - params.m_analysis
    pairs = displacement_series(p, params).iloc[start : start + n_pairs]
    return potential_curve(
        pairs,
        params.m_analysis,
        n_bins=params.n_bins,
        coverage=params.curve_coverage,
        min_displacement_spread=params.min_displacement_spread,
    )

# ────────────────────────────────────────────────────────────────────
# Diffusion
# ────────────────────────────────────────────────────────────────────

def diffusion_curve(prices: PriceInput, max_lag: int) -> pd.DataFrame:
    """Variance of P(u + lag) - P(u) over all valid u, lag = 1..max_lag."""
    p = _as_prices(prices)
    if max_lag < 1:
        raise ConfigurationError("max_lag", f"must be >= 1, got {max_lag}")
    if len(p) <= max_lag + 1:
        raise InsufficientHistoryError(f"series of {len(p)} ticks too short for lag {max_lag}")

    lags = np.arange(1, max_lag + 1)
    variances = np.array([np.var(p[lag:] - p[:-lag]) for lag in lags])
    return pd.DataFrame({"lag": lags, "variance": variances})


def diffusion_ratio(curve: pd.DataFrame, lag: int) -> float:
    """
    variance(lag) / (lag * variance(1)): 1 for a random walk, below 1 for
    sub-diffusive (attracted) prices, above 1 for super-diffusive ones.
    """
    by_lag = curve.set_index("lag")["variance"]
    if lag not in by_lag.index:
        raise InsufficientHistoryError(f"lag {lag} not in diffusion curve")
    return float(by_lag.loc[lag] / (lag * by_lag.loc[1]))
