"""
Deterministic dealer model.

N dealers each quote a bid price that drifts at the rate
``position * step_size + d * <dP>_M`` per unit of simulation time. Buyers
(position +1) raise their bid, sellers (position -1) lower it; a seller's ask
is its bid plus the constant spread L. Whenever the best buyer bid reaches
the best seller ask a unit trade happens at the mid price, the two dealers
swap roles and the market records one tick.

Between two ticks <dP>_M is constant, so every bid moves on a straight line
and the next crossing time is known in closed form. The default ``event``
integrator jumps straight to it; the ``step`` integrator advances in unit
steps and trades whatever crossed at the end of each step.

All randomness is confined to ``init_market``: once dealers are drawn the
evolution is fully deterministic.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Deque, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import (
    ConfigurationError,
    InsufficientHistoryError,
    MarketStalledError,
    TickFormatError,
    TradeInvariantError,
)

logger = logging.getLogger(__name__)

# Absorbs float accumulation in bids so that exact-equality crossings trade.
CROSS_TOLERANCE = 1e-9

# Tick CSV: 17 significant digits round-trips any IEEE-754 double.
PRICE_FORMAT = "%.17g"

BUYER = 1
SELLER = -1

EVENT = "event"
STEP = "step"
INTEGRATORS = (EVENT, STEP)


# ────────────────────────────────────────────────────────────────────
# Domain types
# ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class DealerState:
    """One dealer: bid price, position sign and per-step price change."""

    id: int
    bid: float
    position: int
    step_size: float


@dataclass(frozen=True)
class MarketConfig:
    """
    All simulation parameters. Defaults are the standard setup of the
    dealer model: 300 dealers, spread 1.0, step sizes in [0.01, 0.02].

    Args:
        n_dealers: Number of dealers N (at least 2).
        spread: Constant bid/ask spread L.
        c_min, c_max: Bounds of the uniform step-size draw.
        d: Foreseeing coefficient; > 0 trend followers, < 0 contrarians.
        m_dealer: Window of the weighted moving average of price changes.
        initial_price: Centre of the initial bid draw.
        seed: Seed of the PCG64 generator used for initialization.
        n_ticks: Number of transactions to generate.
        max_steps: Safety cap on simulation time, in unit steps.
        integrator: ``event`` (exact crossing times) or ``step`` (unit steps).
    """

    n_dealers: int = 300
    spread: float = 1.0
    c_min: float = 0.01
    c_max: float = 0.02
    d: float = 0.0
    m_dealer: int = 16
    initial_price: float = 100.0
    seed: int = 1
    n_ticks: int = 100_000
    max_steps: int = 50_000_000
    integrator: str = EVENT

    def validate(self) -> "MarketConfig":
        if self.n_dealers < 2:
            raise ConfigurationError("n_dealers", f"must be >= 2 for a trade pair, got {self.n_dealers}")
        if not self.spread > 0:
            raise ConfigurationError("spread", f"must be > 0, got {self.spread}")
        if not 0 < self.c_min <= self.c_max:
            raise ConfigurationError("c_min", f"need 0 < c_min <= c_max, got [{self.c_min}, {self.c_max}]")
        if self.m_dealer < 1:
            raise ConfigurationError("m_dealer", f"must be >= 1, got {self.m_dealer}")
        if not np.isfinite(self.d):
            raise ConfigurationError("d", f"must be finite, got {self.d}")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed", f"must be a 64-bit unsigned integer, got {self.seed}")
        if self.n_ticks < 0:
            raise ConfigurationError("n_ticks", f"must be >= 0, got {self.n_ticks}")
        if self.max_steps < 1:
            raise ConfigurationError("max_steps", f"must be >= 1, got {self.max_steps}")
        if self.integrator not in INTEGRATORS:
            raise ConfigurationError("integrator", f"must be one of {', '.join(INTEGRATORS)}, got {self.integrator!r}")
        return self

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True, eq=False)
class TickSeries:
    """
    Transaction prices P(u) in tick order.

    ``meta`` is the config that produced the series (None for ingested data);
    ``times`` holds the simulation time of every tick for simulated series.
    """

    prices: np.ndarray
    meta: Optional[MarketConfig] = None
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        prices = np.array(self.prices, dtype=np.float64)
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)
        if self.times is not None:
            times = np.array(self.times, dtype=np.float64)
            if times.shape != prices.shape:
                raise ValueError("times must have one entry per tick")
            times.setflags(write=False)
            object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return len(self.prices)

    def returns(self) -> np.ndarray:
        """Price changes dP(u) = P(u) - P(u-1), u >= 1."""
        return np.diff(self.prices)

    @classmethod
    def from_returns(cls, initial_price: float, returns: Sequence[float]) -> "TickSeries":
        prices = np.concatenate(([initial_price], initial_price + np.cumsum(returns)))
        return cls(prices)

    def equals(self, other: "TickSeries") -> bool:
        return np.array_equal(self.prices, other.prices)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"u": np.arange(len(self.prices)), "price": self.prices})

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format=PRICE_FORMAT)
        logger.info("wrote %d ticks to %s", len(self), path)
        return path


def read_tick_csv(path: Union[str, Path]) -> TickSeries:
    """
    Reads a ``u,price`` tick file.

    Raises:
        FileNotFoundError: The file does not exist.
        TickFormatError: Wrong header, unparsable rows (reported by file line
            number) or tick indices that are not strictly increasing.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"tick file not found: {path}")

    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise TickFormatError(str(path), f"unreadable tick file: {exc}") from exc
    if list(raw.columns) != ["u", "price"]:
        raise TickFormatError(str(path), f"expected header 'u,price', got {','.join(raw.columns)!r}")

    u = pd.to_numeric(raw["u"], errors="coerce")
    price = pd.to_numeric(raw["price"], errors="coerce")
    bad = raw.index[u.isna() | price.isna() | ~np.isfinite(price.fillna(0.0))]
    if len(bad):
        # header is line 1
        raise TickFormatError(str(path), "malformed rows", [int(i) + 2 for i in bad])

    if (np.diff(u.to_numpy()) <= 0).any():
        broken = np.flatnonzero(np.diff(u.to_numpy()) <= 0)
        raise TickFormatError(str(path), "tick indices not strictly increasing", [int(i) + 3 for i in broken])

    # re-parse the price column exactly; the coerced floats above are only a validity check
    exact = pd.read_csv(path, usecols=["price"], dtype={"price": np.float64}, float_precision="round_trip")
    return TickSeries(exact["price"].to_numpy())


# ────────────────────────────────────────────────────────────────────
# Market state
# ────────────────────────────────────────────────────────────────────

@dataclass
class MarketState:
    """Mutable state of one simulation run; owned exclusively by that run."""

    config: MarketConfig
    bids: np.ndarray
    positions: np.ndarray
    step_sizes: np.ndarray
    rng: Optional[np.random.Generator] = None
    step: int = 0
    time: float = 0.0
    prices: List[float] = field(default_factory=list)
    tick_times: List[float] = field(default_factory=list)
    # newest return first
    recent_returns: Deque[float] = field(default_factory=deque)

    def __post_init__(self):
        self.recent_returns = deque(self.recent_returns, maxlen=self.config.m_dealer)

    @classmethod
    def from_dealers(cls, config: MarketConfig, dealers: Sequence[DealerState]) -> "MarketState":
        """Builds a state from explicit dealers, e.g. for hand-checked scenarios."""
        ordered = sorted(dealers, key=lambda dealer: dealer.id)
        if [dealer.id for dealer in ordered] != list(range(len(ordered))):
            raise ConfigurationError("dealers", "ids must be 0..N-1")
        for dealer in ordered:
            if dealer.position not in (BUYER, SELLER):
                raise ConfigurationError("position", f"dealer {dealer.id} has position {dealer.position}")
            if not dealer.step_size > 0:
                raise ConfigurationError("step_size", f"dealer {dealer.id} has step size {dealer.step_size}")
        config = replace(config, n_dealers=len(ordered)).validate()
        return cls(
            config=config,
            bids=np.array([dealer.bid for dealer in ordered], dtype=np.float64),
            positions=np.array([dealer.position for dealer in ordered], dtype=np.int64),
            step_sizes=np.array([dealer.step_size for dealer in ordered], dtype=np.float64),
        )

    def dealers(self) -> List[DealerState]:
        return [
            DealerState(id=i, bid=float(bid), position=int(pos), step_size=float(c))
            for i, (bid, pos, c) in enumerate(zip(self.bids, self.positions, self.step_sizes))
        ]

    @property
    def n_ticks(self) -> int:
        return len(self.prices)

    def tick_series(self) -> TickSeries:
        return TickSeries(np.array(self.prices), meta=self.config, times=np.array(self.tick_times))


def init_market(config: MarketConfig) -> MarketState:
    """
    Draws the initial dealers from a PCG64 generator seeded with ``config.seed``.

    Draw order: step sizes U[c_min, c_max], then bids U[P0 - L/2, P0 + L/2],
    then positions (+1/-1 with equal probability).
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    n = config.n_dealers
    half = config.spread / 2.0

    step_sizes = rng.uniform(config.c_min, config.c_max, size=n)
    bids = rng.uniform(config.initial_price - half, config.initial_price + half, size=n)
    positions = np.where(rng.integers(0, 2, size=n) == 1, BUYER, SELLER).astype(np.int64)

    logger.debug("initialized %d dealers (%d buyers), seed=%d", n, int((positions > 0).sum()), config.seed)
    return MarketState(config=config, bids=bids, positions=positions, step_sizes=step_sizes, rng=rng)


# ────────────────────────────────────────────────────────────────────
# Dynamics
# ────────────────────────────────────────────────────────────────────

@lru_cache(maxsize=None)
def foreseeing_weights(m: int) -> np.ndarray:
    """Weights 2(M - k + 1) / (M(M + 1)), k = 1..M, newest return first."""
    if m < 1:
        raise ConfigurationError("m_dealer", f"must be >= 1, got {m}")
    weights = (m - np.arange(m, dtype=np.float64)) / (m * (m + 1) / 2.0)
    weights.setflags(write=False)
    return weights


def weighted_mean_dp(returns: Sequence[float], m: int) -> float:
    """
    Weighted moving average of the last ``m`` price changes, newest first,
    with linearly decaying weights (newest M, oldest 1), normalized to 1.

    Raises:
        InsufficientHistoryError: Fewer than ``m`` returns supplied.
    """
    if len(returns) < m:
        raise InsufficientHistoryError(f"need {m} returns for the foreseeing average, have {len(returns)}")
    recent = np.fromiter((returns[k] for k in range(m)), dtype=np.float64, count=m)
    return float(np.dot(foreseeing_weights(m), recent))


def foreseeing_term(state: MarketState) -> float:
    """<dP>_M of the current history, 0 during warm-up."""
    try:
        return weighted_mean_dp(state.recent_returns, state.config.m_dealer)
    except InsufficientHistoryError:
        return 0.0


def advance_one_step(state: MarketState) -> MarketState:
    """Moves every bid by one unit step from the same <dP>_M snapshot."""
    drift = state.config.d * foreseeing_term(state) if state.config.d != 0.0 else 0.0
    state.bids += state.positions * state.step_sizes + drift
    state.step += 1
    state.time += 1.0
    return state


def find_crossing(state: MarketState) -> Optional[Tuple[int, int]]:
    """
    Returns (buyer, seller) when the highest buyer bid has reached the lowest
    seller ask (bid + L); ties go to the lowest dealer index.
    """
    is_buyer = state.positions > 0
    if not is_buyer.any() or is_buyer.all():
        return None

    buyer = int(np.argmax(np.where(is_buyer, state.bids, -np.inf)))
    seller = int(np.argmin(np.where(is_buyer, np.inf, state.bids)))
    if state.bids[buyer] >= state.bids[seller] + state.config.spread - CROSS_TOLERANCE:
        return buyer, seller
    return None


def next_crossing(state: MarketState) -> Optional[Tuple[float, int, int]]:
    """
    Time until the first buyer bid meets a seller ask if every bid keeps its
    current rate, with that (buyer, seller) pair; None for a one-sided market.

    The common foreseeing drift moves bids and asks alike, so a pair closes
    its gap at c_buyer + c_seller regardless of d. Ties go to the lowest
    buyer index, then the lowest seller index.
    """
    buyers = np.flatnonzero(state.positions > 0)
    sellers = np.flatnonzero(state.positions < 0)
    if buyers.size == 0 or sellers.size == 0:
        return None

    gaps = (state.bids[sellers] + state.config.spread)[np.newaxis, :] - state.bids[buyers][:, np.newaxis]
    rates = state.step_sizes[buyers][:, np.newaxis] + state.step_sizes[sellers][np.newaxis, :]
    waits = gaps / rates
    first = int(np.argmin(waits))
    row, col = divmod(first, sellers.size)
    return max(float(waits.flat[first]), 0.0), int(buyers[row]), int(sellers[col])


def advance_to_next_trade(state: MarketState) -> Optional[Tuple[int, int]]:
    """
    Moves every bid along its current rate up to the next crossing and
    returns the crossed pair; a pair that is already crossed trades at once.
    """
    pair = find_crossing(state)
    if pair is not None:
        return pair
    event = next_crossing(state)
    if event is None:
        return None

    wait, buyer, seller = event
    drift = state.config.d * foreseeing_term(state) if state.config.d != 0.0 else 0.0
    state.bids += (state.positions * state.step_sizes + drift) * wait
    state.time += wait
    return buyer, seller


def execute_trade(state: MarketState, pair: Tuple[int, int]) -> Tuple[MarketState, float]:
    """
    Trades one unit between ``pair`` at the mid price of best bid and best
    ask, then swaps the two dealers' positions. Bids are left untouched.
    """
    buyer, seller = pair
    spread = state.config.spread
    bid = state.bids[buyer]
    ask = state.bids[seller] + spread
    if (
        buyer == seller
        or state.positions[buyer] != BUYER
        or state.positions[seller] != SELLER
        or bid < ask - CROSS_TOLERANCE
    ):
        raise TradeInvariantError(f"pair {pair} is not a crossed buyer/seller pair")

    price = float((bid + ask) / 2.0)
    state.positions[buyer] = SELLER
    state.positions[seller] = BUYER

    if state.prices:
        state.recent_returns.appendleft(price - state.prices[-1])
    state.prices.append(price)
    state.tick_times.append(state.time)
    return state, price


def simulate(state: MarketState, n_ticks: int, max_steps: int) -> TickSeries:
    """
    Runs ``state`` until ``n_ticks`` trades are recorded. The ``event``
    integrator jumps from crossing to crossing; the ``step`` integrator
    resolves crossings one pair at a time after each unit step.

    Raises:
        MarketStalledError: Simulation time reached ``max_steps`` first, or
            the market is one-sided and can never trade again.
    """
    if state.config.integrator == STEP:
        while state.n_ticks < n_ticks:
            if state.step >= max_steps:
                raise MarketStalledError(state.n_ticks, n_ticks, max_steps)
            advance_one_step(state)
            pair = find_crossing(state)
            while pair is not None and state.n_ticks < n_ticks:
                execute_trade(state, pair)
                pair = find_crossing(state)
        return state.tick_series()

    while state.n_ticks < n_ticks:
        pair = advance_to_next_trade(state)
        if pair is None or state.time > max_steps:
            raise MarketStalledError(state.n_ticks, n_ticks, max_steps)
        execute_trade(state, pair)
    return state.tick_series()


def run_simulation(config: MarketConfig) -> TickSeries:
    """Full run: initialize from the config's seed and generate its ticks."""
    state = init_market(config)
    logger.info(
        "simulating %d ticks: N=%d L=%g c=[%g, %g] d=%g M=%d seed=%d (%s)",
        config.n_ticks, config.n_dealers, config.spread, config.c_min, config.c_max,
        config.d, config.m_dealer, config.seed, config.integrator,
    )
    ticks = simulate(state, config.n_ticks, config.max_steps)
    logger.info("generated %d ticks in %.1f time units", len(ticks), state.time)
    return ticks
