"""
Reproduction harness: d-sweeps with the b*-d line fit, tick ingestion,
flat key/value config files and run manifests.
"""

from __future__ import annotations

import configparser
import hashlib
import logging
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from dealer_model import PRICE_FORMAT, MarketConfig, TickSeries, read_tick_csv, run_simulation
from errors import (
    ConfigurationError,
    InsufficientHistoryError,
    MarketError,
    MarketStalledError,
    UnderdeterminedFitError,
)
from potential import AnalysisParams, PotentialCurve, rolling_b, summarize_estimates, window_curve

__version__ = "0.1.0"

logger = logging.getLogger(__name__)

DEFAULT_D_GRID: Tuple[float, ...] = (-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0)

STATUS_OK = "ok"
STATUS_STALLED = "stalled"
STATUS_FAILED = "failed"


# ────────────────────────────────────────────────────────────────────
# Sweep types
# ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SweepSpec:
    """
    Args:
        base: Market parameters shared by all runs; ``d``, ``seed`` and
            ``n_ticks`` are overridden per run.
        d_values: Foreseeing coefficients to simulate.
        analysis: Window settings for the curvature estimate.
        ticks_per_run: Ticks simulated for each d.
        base_seed: Seed from which every run seed is derived (see derive_seed).
        workers: Parallel runs (joblib ``n_jobs``).
    """

    base: MarketConfig = field(default_factory=MarketConfig)
    d_values: Tuple[float, ...] = DEFAULT_D_GRID
    analysis: AnalysisParams = field(default_factory=AnalysisParams)
    ticks_per_run: int = 100_000
    base_seed: int = 1
    workers: int = 1

    def validate(self) -> "SweepSpec":
        if not self.d_values:
            raise ConfigurationError("d_values", "at least one d is required")
        self.analysis.validate()
        need = self.analysis.window + self.analysis.m_analysis
        if self.ticks_per_run < need:
            raise ConfigurationError("ticks_per_run", f"must be >= window + m_analysis = {need}, got {self.ticks_per_run}")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigurationError("base_seed", f"must be a 64-bit unsigned integer, got {self.base_seed}")
        if self.workers == 0:
            raise ConfigurationError("workers", "must be non-zero (negative counts as in joblib)")
        for d in self.d_values:
            replace(self.base, d=d, n_ticks=self.ticks_per_run).validate()
        return self


@dataclass(frozen=True)
class SweepRow:
    d: float
    b_star: float
    b_std: float
    n_windows: int
    n_degenerate: int
    seed: int
    status: str = STATUS_OK


SWEEP_COLUMNS = [f.name for f in fields(SweepRow)]


@dataclass(frozen=True)
class LineFit:
    intercept: float
    slope: float
    r_squared: float


@dataclass(frozen=True)
class SweepResult:
    """Rows in grid order, the line fit, and the first-window potential curve per d."""

    rows: List[SweepRow]
    fit: Optional[LineFit] = None
    curves: Dict[float, PotentialCurve] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return all(row.status == STATUS_OK for row in self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.__dict__ for row in self.rows], columns=SWEEP_COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format=PRICE_FORMAT)
        return path

    def fit_frame(self) -> pd.DataFrame:
        if self.fit is None:
            return pd.DataFrame(columns=["intercept", "slope", "r_squared"])
        return pd.DataFrame([self.fit.__dict__])


def derive_seed(base_seed: int, d: float, run_index: int = 0) -> int:
    """
    Run seed = first 8 bytes (little-endian) of BLAKE2b over
    (base_seed as uint64, IEEE-754 bits of d, run_index as int64).
    Depends on d itself, never on its position in the grid.
    """
    d = float(d) + 0.0  # -0.0 and 0.0 share a seed
    payload = struct.pack("<Qdq", base_seed, d, run_index)
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def run_one(spec: SweepSpec, d: float, run_index: int = 0) -> Tuple[SweepRow, Optional[PotentialCurve]]:
    """
    Simulates one d, reduces its rolling curvature to b* and draws the
    potential curve of its first window.
    """
    seed = derive_seed(spec.base_seed, d, run_index)
    config = replace(spec.base, d=float(d), seed=seed, n_ticks=spec.ticks_per_run)
    nan = float("nan")
    try:
        ticks = run_simulation(config)
    except MarketStalledError as exc:
        logger.warning("d=%g stalled: %s", d, exc)
        return SweepRow(float(d), nan, nan, 0, 0, seed, STATUS_STALLED), None

    try:
        summary = summarize_estimates(rolling_b(ticks, spec.analysis))
    except MarketError as exc:
        logger.warning("d=%g produced no estimate: %s", d, exc)
        return SweepRow(float(d), nan, nan, 0, 0, seed, STATUS_FAILED), None

    row = SweepRow(float(d), summary["b_star"], summary["b_std"], summary["n_windows"], summary["n_degenerate"], seed)
    logger.info("d=%+.3f  b*=%+.4f  (std %.4f, %d windows)", row.d, row.b_star, row.b_std, row.n_windows)

    try:
        curve = window_curve(ticks, spec.analysis)
    except MarketError as exc:
        logger.warning("d=%g has no potential curve: %s", d, exc)
        curve = None
    return row, curve


def run_sweep(spec: SweepSpec) -> SweepResult:
    """
    One independent run per d, in parallel when ``workers`` != 1; rows come
    back in ``d_values`` order. The line is fitted over successful rows.
    """
    spec.validate()
    logger.info("sweeping %d values of d, %d ticks each, %s worker(s)", len(spec.d_values), spec.ticks_per_run, spec.workers)
    if spec.workers == 1:
        outcomes = [run_one(spec, d) for d in spec.d_values]
    else:
        outcomes = Parallel(n_jobs=spec.workers)(delayed(run_one)(spec, d) for d in spec.d_values)
    rows = [row for row, _ in outcomes]
    curves = {row.d: curve for row, curve in outcomes if curve is not None}

    good = [(row.d, row.b_star) for row in rows if row.status == STATUS_OK]
    fit = None
    if len({d for d, _ in good}) >= 2:
        fit = fit_line(good)
        logger.info("b* = %.4f %+.4f d  (r^2 = %.4f)", fit.intercept, fit.slope, fit.r_squared)
    return SweepResult(rows=rows, fit=fit, curves=curves)


def fit_line(points: Iterable[Tuple[float, float]]) -> LineFit:
    """Ordinary least squares of b* on d."""
    pts = np.asarray(list(points), dtype=np.float64).reshape(-1, 2)
    d, b = pts[:, 0], pts[:, 1]
    if np.unique(d).size < 2:
        raise UnderdeterminedFitError(f"need at least two distinct d values, got {np.unique(d).size}")
    fit = stats.linregress(d, b)
    return LineFit(intercept=float(fit.intercept), slope=float(fit.slope), r_squared=float(fit.rvalue) ** 2)


# ────────────────────────────────────────────────────────────────────
# Tick ingestion
# ────────────────────────────────────────────────────────────────────

def ingest_ticks(path: Union[str, Path], smoothing: int = 1) -> TickSeries:
    """
    Loads a ``u,price`` file; with ``smoothing`` w > 1 the prices are
    replaced by their width-w moving average (n - w + 1 values, centred for
    odd w).
    """
    if smoothing < 1:
        raise ConfigurationError("smoothing", f"must be >= 1, got {smoothing}")
    series = read_tick_csv(path)
    logger.info("read %d ticks from %s", len(series), path)
    if smoothing == 1:
        return series
    if len(series) < smoothing:
        raise InsufficientHistoryError(f"{len(series)} ticks cannot be smoothed with width {smoothing}")
    return TickSeries(sliding_window_view(series.prices, smoothing).mean(axis=1))


# ────────────────────────────────────────────────────────────────────
# Config files and manifests
# ────────────────────────────────────────────────────────────────────

CONFIG_SECTION = "config"
SWEEP_KEYS = ["d_values", "ticks_per_run", "base_seed", "workers"]
SURROGATE_KEYS = ["kind", "length", "seed", "volatility", "planted_b"]

# keys each subcommand accepts from a config file or --set
COMMAND_KEYS: Dict[str, List[str]] = {
    "simulate": MarketConfig.field_names(),
    "analyze": AnalysisParams.field_names(),
    "null": AnalysisParams.field_names() + SURROGATE_KEYS,
    "sweep": MarketConfig.field_names() + AnalysisParams.field_names() + SWEEP_KEYS,
}
CONFIG_KEYS = list(dict.fromkeys(key for keys in COMMAND_KEYS.values() for key in keys))


def _new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str  # keys are case-sensitive field names
    return parser


def _check_keys(values: Mapping[str, str], allowed: Sequence[str] = CONFIG_KEYS) -> None:
    for key in values:
        if key not in allowed:
            raise ConfigurationError(key, "unknown config key")


def parse_config_text(text: str, source: str = "<config>", allowed: Sequence[str] = CONFIG_KEYS) -> Dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    parser = _new_parser()
    try:
        parser.read_string(f"[{CONFIG_SECTION}]\n{text}", source=source)
    except configparser.Error as exc:
        raise ConfigurationError(source, f"unreadable config: {exc}") from exc
    values = dict(parser[CONFIG_SECTION])
    _check_keys(values, allowed)
    return values


def load_config(path: Union[str, Path], allowed: Sequence[str] = CONFIG_KEYS) -> Dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path), allowed=allowed)


def parse_overrides(items: Sequence[str], allowed: Sequence[str] = CONFIG_KEYS) -> Dict[str, str]:
    """``key=value`` strings from the command line."""
    values = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(item, "override must look like key=value")
        values[key.strip()] = value.strip()
    _check_keys(values, allowed)
    return values


def _coerce(record_type, values: Mapping[str, str]):
    kwargs = {}
    for f in fields(record_type):
        if f.name not in values:
            continue
        default = f.default
        raw = values[f.name]
        if isinstance(default, str):
            kwargs[f.name] = raw
            continue
        try:
            kwargs[f.name] = int(raw) if isinstance(default, int) else float(raw)
        except ValueError:
            kind = "an integer" if isinstance(default, int) else "a number"
            raise ConfigurationError(f.name, f"expected {kind}, got {raw!r}") from None
    return record_type(**kwargs)


def market_config(values: Mapping[str, str]) -> MarketConfig:
    return _coerce(MarketConfig, values).validate()


def analysis_params(values: Mapping[str, str]) -> AnalysisParams:
    return _coerce(AnalysisParams, values).validate()


def sweep_spec(values: Mapping[str, str]) -> SweepSpec:
    kwargs = {"base": _coerce(MarketConfig, values), "analysis": _coerce(AnalysisParams, values)}
    if "d_values" in values:
        try:
            kwargs["d_values"] = tuple(float(item) for item in values["d_values"].split(",") if item.strip())
        except ValueError:
            raise ConfigurationError("d_values", f"expected comma-separated numbers, got {values['d_values']!r}") from None
    for key in ("ticks_per_run", "base_seed", "workers"):
        if key in values:
            try:
                kwargs[key] = int(values[key])
            except ValueError:
                raise ConfigurationError(key, f"expected an integer, got {values[key]!r}") from None
    return SweepSpec(**kwargs).validate()


def format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(item) for item in value)
    return str(value)


def record_items(record) -> Dict[str, str]:
    """Flat key/value view of a config record, in field order."""
    return {f.name: format_value(getattr(record, f.name)) for f in fields(record)}


def write_manifest(
    path: Union[str, Path],
    command: str,
    run: Mapping[str, str],
    config: Mapping[str, str],
    seeds: Optional[Mapping[str, str]] = None,
) -> Path:
    """
    INI manifest: ``[run]`` (command, paths, version), ``[config]`` (every
    resolved value) and optionally ``[seeds]`` (derived run seeds).
    """
    parser = _new_parser()
    parser["run"] = {"command": command, **run, "version": __version__}
    parser["config"] = dict(config)
    if seeds:
        parser["seeds"] = dict(seeds)
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        parser.write(handle)
    logger.info("wrote run manifest %s", path)
    return path


def read_manifest(path: Union[str, Path]) -> Tuple[str, Dict[str, str], Dict[str, str]]:
    parser = _new_parser()
    path = Path(path)
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"manifest not found: {path}")
    if "run" not in parser or "command" not in parser["run"]:
        raise ConfigurationError(str(path), "manifest has no [run] command")
    run = dict(parser["run"])
    command = run.pop("command")
    run.pop("version", None)
    config = dict(parser["config"]) if "config" in parser else {}
    return command, run, config
