"""
Null models and oracles for the curvature estimator: Gaussian random walks,
shuffled-return surrogates and series with a planted quadratic potential.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dealer_model import TickSeries
from errors import ConfigurationError, InsufficientHistoryError
from potential import AnalysisParams, rolling_b, summarize_estimates

logger = logging.getLogger(__name__)

START_PRICE = 100.0

GAUSSIAN_WALK = "gaussian_walk"
SHUFFLED = "shuffled"
PLANTED = "planted"
KINDS = (GAUSSIAN_WALK, SHUFFLED, PLANTED)


@dataclass(frozen=True, eq=False)
class SurrogateSpec:
    kind: str = GAUSSIAN_WALK
    length: int = 100_000
    seed: int = 1
    volatility: float = 1.0
    planted_b: float = 0.0
    m_analysis: int = 16
    source: Optional[TickSeries] = None

    def validate(self) -> "SurrogateSpec":
        if self.kind not in KINDS:
            raise ConfigurationError("kind", f"must be one of {', '.join(KINDS)}, got {self.kind!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed", f"must be a 64-bit unsigned integer, got {self.seed}")
        if self.kind == SHUFFLED:
            if self.source is None:
                raise ConfigurationError("source", "shuffled surrogate needs a source series")
            return self
        if self.length < 2:
            raise ConfigurationError("length", f"must be >= 2, got {self.length}")
        if not self.volatility > 0:
            raise ConfigurationError("volatility", f"must be > 0, got {self.volatility}")
        if self.kind == PLANTED:
            if self.m_analysis < 2:
                raise ConfigurationError("m_analysis", f"must be >= 2, got {self.m_analysis}")
            if self.length <= self.m_analysis:
                raise ConfigurationError("length", f"must exceed m_analysis={self.m_analysis}")
            check_planted_stability(self.planted_b, self.m_analysis)
        return self


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ────────────────────────────────────────────────────────────────────
# Generators
# ────────────────────────────────────────────────────────────────────

def gaussian_walk(spec: SurrogateSpec) -> TickSeries:
    """P(0) = 100, i.i.d. N(0, volatility^2) increments."""
    spec.validate()
    rng = _generator(spec.seed)
    steps = rng.normal(0.0, spec.volatility, size=spec.length - 1)
    return TickSeries.from_returns(START_PRICE, steps)


def shuffled_surrogate(source: TickSeries, seed: int) -> TickSeries:
    """
    Same returns as ``source`` in a uniformly random order (Fisher-Yates via
    ``Generator.permutation``), rebuilt from the source's first price.
    """
    if len(source) < 3:
        raise InsufficientHistoryError(f"need at least 3 ticks to shuffle, got {len(source)}")
    rng = _generator(seed)
    shuffled = rng.permutation(source.returns())
    return TickSeries.from_returns(float(source.prices[0]), shuffled)


def check_planted_stability(planted_b: float, m_analysis: int) -> None:
    """
    The planted recursion P(u+1) = a_0 P(u) + ... + a_{M-1} P(u-M+1) always
    has a unit root; every other root of its characteristic polynomial must
    lie strictly inside the unit circle, and |b| < M - 1.
    """
    bound = m_analysis - 1
    if not abs(planted_b) < bound:
        raise ConfigurationError("planted_b", f"|planted_b| must be < m_analysis - 1 = {bound}, got {planted_b}")

    kappa = planted_b / (m_analysis - 1)
    coeffs = np.full(m_analysis, kappa / m_analysis)
    coeffs[0] = 1.0 - kappa + kappa / m_analysis
    roots = np.roots(np.concatenate(([1.0], -coeffs)))
    others = roots[np.argsort(np.abs(roots - 1.0))[1:]]
    if others.size and np.abs(others).max() >= 1.0 - 1e-12:
        raise ConfigurationError(
            "planted_b",
            f"planted_b={planted_b} makes the recursion unstable for M={m_analysis} "
            f"(root modulus {np.abs(others).max():.4f} >= 1)",
        )


def planted_recursion(initial: np.ndarray, noise: np.ndarray, planted_b: float, m_analysis: int) -> np.ndarray:
    """
    Forward simulation of P(u+1) = P(u) - b/(M-1) * (P(u) - P_M(u)) + noise(u)
    from ``initial`` (the first M prices), one step per noise value.
    """
    m = m_analysis
    if len(initial) != m:
        raise ConfigurationError("initial", f"need exactly {m} starting prices, got {len(initial)}")
    kappa = planted_b / (m - 1)
    prices = np.empty(m + len(noise))
    prices[:m] = initial
    for k, shock in enumerate(noise):
        u = m - 1 + k
        displacement = prices[u] - prices[u - m + 1 : u + 1].mean()
        prices[u + 1] = prices[u] - kappa * displacement + shock
    return prices


def planted_process(spec: SurrogateSpec) -> TickSeries:
    """Series with known curvature ``planted_b``; first M prices flat at 100."""
    spec.validate()
    rng = _generator(spec.seed)
    noise = rng.normal(0.0, spec.volatility, size=spec.length - spec.m_analysis)
    initial = np.full(spec.m_analysis, START_PRICE)
    return TickSeries(planted_recursion(initial, noise, spec.planted_b, spec.m_analysis))


def generate(spec: SurrogateSpec) -> TickSeries:
    spec.validate()
    if spec.kind == GAUSSIAN_WALK:
        return gaussian_walk(spec)
    if spec.kind == SHUFFLED:
        return shuffled_surrogate(spec.source, spec.seed)
    return planted_process(spec)


# ────────────────────────────────────────────────────────────────────
# Calibration
# ────────────────────────────────────────────────────────────────────

def null_calibration(spec: SurrogateSpec, params: AnalysisParams) -> dict:
    """
    Curvature statistics of the estimator on a surrogate series; for a
    random walk b* should sit near 0.
    """
    series = generate(spec)
    summary = summarize_estimates(rolling_b(series, params))
    logger.info(
        "null calibration (%s, %d ticks): b mean %.4f, std %.4f over %d windows",
        spec.kind, len(series), summary["b_star"], summary["b_std"], summary["n_windows"],
    )
    return {"kind": spec.kind, "length": len(series), **summary}
